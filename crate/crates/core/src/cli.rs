//! Command-line front end: `fit`, `analyze`, `select`, `eval`, `simulate`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::bank::{FitMethod, FitSettings, FittedBank};
use crate::dataset::{load_responses, split_interactions, ResponseFormat, ResponseMatrix};
use crate::error::{Error, Result};
use crate::irt::ModelFamily;
use crate::metrics::{self, PredictionEval};
use crate::mle::{fit_mle, MleConfig};
use crate::psn::{self, FitConfig};
use crate::selection::{self, ModelPool, SelectionStrategy, StrategyKind};
use crate::synth::{self, SynthSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "irt-bench", version, about = "IRT estimation and benchmark diagnosis")]
pub struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an item bank to a response file.
    Fit(FitArgs),
    /// Per-benchmark property summaries, rank table and distributions.
    Analyze(AnalyzeArgs),
    /// Select an item subset and test its ranking against a reference.
    Select(SelectArgs),
    /// Prediction quality, subset-retrain stability and rank stability.
    Eval(EvalArgs),
    /// Generate a synthetic response matrix with known parameters.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Response file (CSV `model,benchmark,item,outcome` or JSONL).
    pub responses: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
}

impl InputArgs {
    fn load(&self) -> Result<ResponseMatrix> {
        let format = match &self.format {
            Some(f) => f.parse()?,
            None => ResponseFormat::from_path(&self.responses),
        };
        load_responses(&self.responses, format)
    }
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[arg(long, default_value = "psn")]
    pub method: String,
    /// Overrides the family in the config file (1pl, 2pl, 3pl, 4pl).
    #[arg(long)]
    pub family: Option<String>,
    /// TOML file with `[psn]` and `[mle]` tables of estimator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output bank JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit on a 60/20/20 interaction split and report test-set quality.
    #[arg(long)]
    pub holdout: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub bank: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    pub bank: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// random, discriminability, fisher or clustering.
    #[arg(long)]
    pub strategy: String,
    #[arg(long)]
    pub k: usize,
    /// Reference ranking, one model per line, best first.
    #[arg(long)]
    pub reference: PathBuf,
    /// Model pool: `all` or `top:N` (first N reference models). Repeatable.
    #[arg(long = "pool", default_values_t = vec!["all".to_string()])]
    pub pools: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output report JSON; a CSV with the same stem is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub bank: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated item fractions for the subset-retrain study.
    #[arg(long, value_delimiter = ',')]
    pub stability_fractions: Vec<f64>,
    /// Split-half rank stability on a held-out 20% of interactions.
    #[arg(long)]
    pub rank_stability: bool,
    /// Estimator for refits; defaults to the bank's own settings.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML synthetic spec; the built-in default when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Estimator defaults read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub psn: FitConfig,
    pub mle: MleConfig,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1) as u64)
                .unwrap_or(0),
            message: e.message().to_owned(),
        })
    }

    pub fn settings(&self, method: FitMethod, family: Option<ModelFamily>, seed: Option<u64>) -> Result<FitSettings> {
        let settings = match method {
            FitMethod::Psn => {
                let mut c = self.psn.clone();
                c.family = family.unwrap_or(c.family);
                c.seed = seed.unwrap_or(c.seed);
                FitSettings::Psn(c)
            }
            FitMethod::Mle => {
                let mut c = self.mle.clone();
                c.family = family.unwrap_or(c.family);
                c.seed = seed.unwrap_or(c.seed);
                FitSettings::Mle(c)
            }
            FitMethod::Truth => {
                return Err(Error::InvalidArgument("`truth` is not an estimator".into()))
            }
        };
        Ok(settings)
    }
}

/// Reproducibility record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub duration_seconds: f64,
}

struct Run {
    command: &'static str,
    args: Vec<String>,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn write_json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_csv(
        &mut self,
        path: PathBuf,
        write: impl FnOnce(BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write(BufWriter::new(file))?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish<T: Serialize>(self, path: PathBuf, config: &T, seed: Option<u64>) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_owned(),
            args: self.args,
            config: serde_json::to_value(config)?,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            tool_version: VERSION.to_owned(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

/// `dir/name.json` → `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn parse_family(value: &Option<String>) -> Result<Option<ModelFamily>> {
    value.as_deref().map(str::parse).transpose()
}

fn load_bank(path: &Path, matrix: &ResponseMatrix) -> Result<FittedBank> {
    let bank = FittedBank::load(path)?;
    if let Some(m) = matrix.models().iter().find(|m| !bank.contains_model(m)) {
        return Err(Error::UnknownId {
            kind: "model (absent from bank)",
            id: m.clone(),
        });
    }
    if let Some(k) = matrix.items().iter().find(|k| !bank.contains_item(k)) {
        return Err(Error::UnknownId {
            kind: "item (absent from bank)",
            id: k.to_string(),
        });
    }
    Ok(bank)
}

#[derive(Serialize)]
struct EvalRow<'a> {
    method: &'a str,
    family: &'a str,
    #[serde(flatten)]
    eval: PredictionEval,
}

fn write_eval_csv(rows: &[(String, String, PredictionEval)], writer: BufWriter<File>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["method", "family"];
    header.extend(PredictionEval::CSV_HEADER);
    w.write_record(&header)?;
    for (method, family, e) in rows {
        let mut rec = vec![method.clone(), family.clone()];
        rec.extend(e.csv_row());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

fn cmd_fit(args: &FitArgs, mut run: Run) -> Result<()> {
    let matrix = args.input.load()?;
    run.inputs.push(args.input.responses.clone());
    let config = ConfigFile::load(args.estimator.config.as_deref())?;
    if let Some(p) = &args.estimator.config {
        run.inputs.push(p.clone());
    }
    let method: FitMethod = args.estimator.method.parse()?;
    let settings = config.settings(method, parse_family(&args.estimator.family)?, args.seed)?;
    ensure_parent(&args.out)?;

    let bank = if args.holdout {
        let split = split_interactions(&matrix, (0.6, 0.2, 0.2), settings.seed())?;
        let bank = match &settings {
            FitSettings::Psn(c) => psn::train(&matrix, &split, c)?,
            FitSettings::Mle(c) => {
                let train = matrix.select_entries(&split.train)?;
                let partial = fit_mle(&train, c)?;
                extend_to_matrix(partial, &matrix)?
            }
        };
        let eval = metrics::evaluate_predictions(&bank, &matrix, &split.test)?;
        let row = (
            method.as_str().to_owned(),
            settings.family().to_string(),
            eval,
        );
        run.write_csv(sibling(&args.out, "eval.csv"), |w| write_eval_csv(&[row], w))?;
        run.write_json(
            sibling(&args.out, "eval.json"),
            &EvalRow {
                method: method.as_str(),
                family: settings.family().as_str(),
                eval,
            },
        )?;
        bank
    } else {
        settings.fit_full(&matrix)?
    };
    info!(
        "fitted {} abilities and {} items",
        bank.abilities().len(),
        bank.items().len()
    );
    bank.save(&args.out)?;
    run.outputs.push(args.out.clone());
    let seed = settings.seed();
    run.finish(sibling(&args.out, "manifest.json"), &settings, Some(seed))
}

/// Models or items seen only outside the training split get neutral values
/// (mean ability, 1PL-like item at the mean difficulty) so the bank covers
/// the whole matrix.
fn extend_to_matrix(bank: FittedBank, matrix: &ResponseMatrix) -> Result<FittedBank> {
    let thetas = bank.thetas();
    let mean_theta = thetas.iter().sum::<f64>() / thetas.len() as f64;
    let mean_b = bank.items().iter().map(|i| i.b).sum::<f64>() / bank.items().len() as f64;
    let fill = crate::irt::ItemParams {
        a: 1.0,
        b: mean_b,
        c: 0.0,
        d: 1.0,
    };
    let all_thetas: Vec<f64> = matrix
        .models()
        .iter()
        .map(|m| bank.theta(m).unwrap_or(mean_theta))
        .collect();
    let all_params: Vec<_> = matrix
        .items()
        .iter()
        .map(|k| bank.item_params(k).unwrap_or(fill))
        .collect();
    Ok(FittedBank::from_matrix(
        matrix,
        bank.method,
        bank.family,
        bank.seed,
        bank.config.clone(),
        &all_thetas,
        &all_params,
    )?
    .with_diagnostics(bank.diagnostics.clone()))
}

fn cmd_analyze(args: &AnalyzeArgs, mut run: Run) -> Result<()> {
    let matrix = args.input.load()?;
    let bank = load_bank(&args.bank, &matrix)?;
    run.inputs.extend([args.bank.clone(), args.input.responses.clone()]);
    ensure_dir(&args.out_dir)?;
    let summaries = analysis::summarize(&bank, &matrix)?;
    let table = analysis::rank_benchmarks(&summaries)?;
    let dist = analysis::export_distributions(&bank, &matrix)?;
    let d = &args.out_dir;
    run.write_csv(d.join("summary.csv"), |w| analysis::write_summary_csv(&summaries, w))?;
    run.write_csv(d.join("ranks.csv"), |w| analysis::write_rank_csv(&table, w))?;
    run.write_csv(d.join("distributions.csv"), |w| {
        analysis::write_distribution_csv(&dist.rows, w)
    })?;
    run.write_csv(d.join("scatter.csv"), |w| analysis::write_scatter_csv(&dist.scatter, w))?;
    run.finish(d.join("manifest.json"), &table.directions, None)
}

fn parse_pool(spec: &str, matrix: &ResponseMatrix, reference: &[String]) -> Result<ModelPool> {
    if spec == "all" {
        let in_ref: Vec<String> = reference
            .iter()
            .filter(|m| matrix.model_index(m).is_some())
            .cloned()
            .collect();
        return Ok(ModelPool::new("all", in_ref));
    }
    if let Some(n) = spec.strip_prefix("top:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad pool size in `{spec}`")))?;
        if n == 0 || n > reference.len() {
            return Err(Error::InvalidArgument(format!(
                "pool `{spec}` needs 1..={} models",
                reference.len()
            )));
        }
        return Ok(ModelPool::top(reference, n));
    }
    Err(Error::InvalidArgument(format!(
        "unknown pool `{spec}` (expected all or top:N)"
    )))
}

#[derive(Serialize)]
struct SelectSnapshot<'a> {
    strategy: &'a SelectionStrategy,
    pools: &'a [String],
}

fn cmd_select(args: &SelectArgs, mut run: Run) -> Result<()> {
    let matrix = args.input.load()?;
    let bank = load_bank(&args.bank, &matrix)?;
    let reference = selection::load_reference_ranking(&args.reference, Some(matrix.models()))?;
    run.inputs.extend([
        args.bank.clone(),
        args.input.responses.clone(),
        args.reference.clone(),
    ]);
    let strategy = SelectionStrategy {
        kind: args.strategy.parse::<StrategyKind>()?,
        k: args.k,
        seed: args.seed,
    };
    let items = selection::select(&bank, &matrix, &strategy)?;
    let mut reports = Vec::with_capacity(args.pools.len());
    for spec in &args.pools {
        let pool = parse_pool(spec, &matrix, &reference)?;
        let mut report = selection::agreement_test(&items, &matrix, &reference, &pool)?;
        report.strategy = Some(strategy);
        reports.push(report);
    }
    ensure_parent(&args.out)?;
    run.write_json(args.out.clone(), &reports)?;
    run.write_csv(sibling(&args.out, "csv"), |w| selection::write_reports_csv(&reports, w))?;
    let snapshot = SelectSnapshot {
        strategy: &strategy,
        pools: &args.pools,
    };
    run.finish(sibling(&args.out, "manifest.json"), &snapshot, Some(args.seed))
}

fn cmd_eval(args: &EvalArgs, mut run: Run) -> Result<()> {
    let matrix = args.input.load()?;
    let bank = load_bank(&args.bank, &matrix)?;
    run.inputs.extend([args.bank.clone(), args.input.responses.clone()]);
    ensure_dir(&args.out_dir)?;
    let d = &args.out_dir;

    let all: Vec<usize> = (0..matrix.n_entries()).collect();
    let eval = metrics::evaluate_predictions(&bank, &matrix, &all)?;
    let row = (bank.method.as_str().to_owned(), bank.family.to_string(), eval);
    run.write_csv(d.join("predictions.csv"), |w| write_eval_csv(&[row], w))?;

    let family = parse_family(&args.family)?;
    let settings = match (&args.method, &bank.config) {
        (None, Some(existing)) if args.config.is_none() => {
            let s = existing.with_seed(args.seed);
            match (family, s) {
                (Some(f), FitSettings::Psn(mut c)) => {
                    c.family = f;
                    FitSettings::Psn(c)
                }
                (Some(f), FitSettings::Mle(mut c)) => {
                    c.family = f;
                    FitSettings::Mle(c)
                }
                (None, s) => s,
            }
        }
        (method, _) => {
            let method: FitMethod = method.as_deref().unwrap_or("psn").parse()?;
            let family = family.or(Some(bank.family));
            ConfigFile::load(args.config.as_deref())?.settings(method, family, Some(args.seed))?
        }
    };

    if !args.stability_fractions.is_empty() {
        let rows = metrics::stability_study(&matrix, &args.stability_fractions, &settings, args.seed)?;
        run.write_csv(d.join("stability.csv"), |w| metrics::write_stability_csv(&rows, w))?;
    }
    if args.rank_stability {
        let split = split_interactions(&matrix, (0.6, 0.2, 0.2), args.seed)?;
        let result = metrics::rank_stability(&matrix, &split.test, |m| settings.fit_full(m), args.seed)?;
        run.write_json(d.join("rank_stability.json"), &result)?;
    }
    run.finish(d.join("manifest.json"), &settings, Some(args.seed))
}

fn cmd_simulate(args: &SimulateArgs, mut run: Run) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            run.inputs.push(path.clone());
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                line: e
                    .span()
                    .map(|s| text[..s.start].lines().count().max(1) as u64)
                    .unwrap_or(0),
                message: e.message().to_owned(),
            })?
        }
        None => synth::default_spec(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (matrix, truth) = synth::generate(&spec)?;
    ensure_dir(&args.out_dir)?;
    let d = &args.out_dir;
    run.write_csv(d.join("responses.csv"), |w| matrix.write_csv(w))?;
    truth.save(&d.join("truth.json"))?;
    run.outputs.push(d.join("truth.json"));
    let spec_text = toml::to_string(&spec)
        .map_err(|e| Error::InvalidData(format!("cannot serialise spec: {e}")))?;
    let spec_path = d.join("spec.toml");
    fs::write(&spec_path, spec_text).map_err(|e| Error::io(&spec_path, e))?;
    run.outputs.push(spec_path);
    run.finish(d.join("manifest.json"), &spec, Some(spec.seed))
}

pub fn run(cli: &Cli, args: Vec<String>) -> Result<()> {
    let name = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Analyze(_) => "analyze",
        Command::Select(_) => "select",
        Command::Eval(_) => "eval",
        Command::Simulate(_) => "simulate",
    };
    info!("running {name}");
    let base = Run {
        command: name,
        args,
        started: Instant::now(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, base),
        Command::Analyze(a) => cmd_analyze(a, base),
        Command::Select(a) => cmd_select(a, base),
        Command::Eval(a) => cmd_eval(a, base),
        Command::Simulate(a) => cmd_simulate(a, base),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    let args = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match run(&cli, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_defaults_and_overrides() {
        let c: ConfigFile = toml::from_str("[psn]\nbatch_size = 64\n[mle]\nmax_iterations = 10\n").unwrap();
        assert_eq!(c.psn.batch_size, 64);
        assert_eq!(c.psn.learning_rate, 0.003);
        let s = c.settings(FitMethod::Mle, Some(ModelFamily::TwoPL), Some(5)).unwrap();
        match s {
            FitSettings::Mle(m) => {
                assert_eq!(m.max_iterations, 10);
                assert_eq!(m.family, ModelFamily::TwoPL);
                assert_eq!(m.seed, 5);
            }
            other => panic!("{other:?}"),
        }
        assert!(toml::from_str::<ConfigFile>("[psn]\nbogus = 1\n").is_err());
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(main_with_args(["irt-bench", "fit"]), 2);
        assert_eq!(main_with_args(["irt-bench", "nonsense"]), 2);
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/bank.json"), "manifest.json"), Path::new("out/bank.manifest.json"));
        assert_eq!(sibling(Path::new("r.json"), "csv"), Path::new("r.csv"));
    }
}
