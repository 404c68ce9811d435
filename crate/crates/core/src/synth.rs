//! Synthetic response matrices drawn from known item parameters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{BankItem, FitMethod, FittedBank};
use crate::dataset::{ResponseMatrix, ResponseRecord};
use crate::error::{Error, Result};
use crate::irt::{AbilityEstimate, ItemParams, ModelFamily};
use crate::metrics::{kendall_tau_b, parameter_correlations};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AbilitySpec {
    Explicit { thetas: Vec<f64> },
    /// Independent uniform draws.
    Uniform { n_models: usize, low: f64, high: f64 },
    /// `n_models` equally spaced values from `low` to `high`.
    Evenly { n_models: usize, low: f64, high: f64 },
}

impl AbilitySpec {
    pub fn n_models(&self) -> usize {
        match self {
            AbilitySpec::Explicit { thetas } => thetas.len(),
            AbilitySpec::Uniform { n_models, .. } | AbilitySpec::Evenly { n_models, .. } => {
                *n_models
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match *self {
            AbilitySpec::Explicit { ref thetas } => thetas.clone(),
            AbilitySpec::Uniform { n_models, low, high } => {
                (0..n_models).map(|_| uniform(rng, (low, high))).collect()
            }
            AbilitySpec::Evenly { n_models, low, high } => {
                if n_models == 1 {
                    return vec![low];
                }
                let step = (high - low) / (n_models - 1) as f64;
                (0..n_models).map(|i| low + step * i as f64).collect()
            }
        }
    }
}

/// Uniform ranges `[low, high]` for one benchmark's item parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub name: String,
    pub n_items: usize,
    pub difficulty: (f64, f64),
    pub discriminability: (f64, f64),
    pub guessing: (f64, f64),
    pub feasibility: (f64, f64),
}

impl BenchmarkSpec {
    /// 2PL-style ranges (`c = 0`, `d = 1`).
    pub fn two_pl(name: &str, n_items: usize, difficulty: (f64, f64), discriminability: (f64, f64)) -> Self {
        BenchmarkSpec {
            name: name.to_owned(),
            n_items,
            difficulty,
            discriminability,
            guessing: (0.0, 0.0),
            feasibility: (1.0, 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let err = |what: &str| {
            Err(Error::InvalidArgument(format!(
                "benchmark `{}`: {what}",
                self.name
            )))
        };
        if self.name.is_empty() {
            return err("empty name");
        }
        if self.n_items == 0 {
            return err("no items");
        }
        let ranges = [
            self.difficulty,
            self.discriminability,
            self.guessing,
            self.feasibility,
        ];
        if ranges.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi) {
            return err("each range needs finite low <= high");
        }
        if self.discriminability.0 <= 0.0 {
            return err("discriminability must be positive");
        }
        if self.guessing.0 < 0.0 || self.feasibility.1 > 1.0 || self.guessing.1 > self.feasibility.0 {
            return err("need 0 <= guessing <= feasibility <= 1 across the ranges");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub abilities: AbilitySpec,
    pub benchmarks: Vec<BenchmarkSpec>,
    /// Probability that each (model, item) cell is observed.
    #[serde(default = "full_density")]
    pub density: f64,
    #[serde(default)]
    pub seed: u64,
}

fn full_density() -> f64 {
    1.0
}

fn uniform(rng: &mut ChaCha8Rng, (low, high): (f64, f64)) -> f64 {
    if low == high {
        low
    } else {
        rng.gen_range(low..high)
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.abilities.n_models() == 0 {
            return Err(Error::InvalidArgument("synthetic spec has no models".into()));
        }
        match &self.abilities {
            AbilitySpec::Explicit { thetas } if thetas.iter().any(|t| !t.is_finite()) => {
                return Err(Error::InvalidArgument("non-finite ability".into()))
            }
            AbilitySpec::Uniform { low, high, .. } | AbilitySpec::Evenly { low, high, .. }
                if !(low.is_finite() && high.is_finite() && low <= high) =>
            {
                return Err(Error::InvalidArgument(format!(
                    "ability range [{low}, {high}] is invalid"
                )))
            }
            _ => {}
        }
        if self.benchmarks.is_empty() {
            return Err(Error::InvalidArgument("synthetic spec has no benchmarks".into()));
        }
        let mut names: Vec<&str> = self.benchmarks.iter().map(|b| b.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate benchmark name".into()));
        }
        for b in &self.benchmarks {
            b.validate()?;
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "density must lie in (0, 1], got {}",
                self.density
            )));
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.benchmarks.iter().map(|b| b.n_items).sum()
    }

    /// Smallest family whose pinned parameters hold for every range.
    pub fn family(&self) -> ModelFamily {
        let all = |f: &dyn Fn(&BenchmarkSpec) -> bool| self.benchmarks.iter().all(f);
        let pinned_d = all(&|b| b.feasibility == (1.0, 1.0));
        let pinned_c = all(&|b| b.guessing == (0.0, 0.0));
        let pinned_a = all(&|b| b.discriminability == (1.0, 1.0));
        match (pinned_a, pinned_c, pinned_d) {
            (true, true, true) => ModelFamily::OnePL,
            (_, true, true) => ModelFamily::TwoPL,
            (_, _, true) => ModelFamily::ThreePL,
            _ => ModelFamily::FourPL,
        }
    }
}

pub fn model_id(index: usize) -> String {
    format!("model{:02}", index + 1)
}

pub fn item_id(index: usize) -> String {
    format!("item{:04}", index + 1)
}

/// Draws item parameters and Bernoulli outcomes; returns the matrix and the
/// ground-truth bank. Every model and item keeps at least one observation.
pub fn generate(spec: &SynthSpec) -> Result<(ResponseMatrix, FittedBank)> {
    spec.validate()?;
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s);
        rng
    };
    let thetas = spec.abilities.draw(&mut stream(0));
    let n_models = thetas.len();
    let models: Vec<String> = (0..n_models).map(model_id).collect();

    let mut records = Vec::with_capacity(n_models * spec.n_items());
    let mut items = Vec::with_capacity(spec.n_items());
    let mut model_seen = vec![false; n_models];
    for (j, bench) in spec.benchmarks.iter().enumerate() {
        // Per-benchmark streams keep benchmarks independent of each other.
        let mut rng = stream(j as u64 + 1);
        for i in 0..bench.n_items {
            let d = uniform(&mut rng, bench.feasibility);
            let c = uniform(&mut rng, bench.guessing).min(d);
            let params = ItemParams::new(
                uniform(&mut rng, bench.discriminability),
                uniform(&mut rng, bench.difficulty),
                c,
                d,
            )?;
            let id = item_id(i);
            let mut observed_any = false;
            for (m, &theta) in thetas.iter().enumerate() {
                let observe = spec.density >= 1.0 || rng.gen::<f64>() < spec.density;
                let u: f64 = rng.gen();
                // The last model is forced in if the item would be empty.
                if observe || (!observed_any && m + 1 == n_models) {
                    observed_any = true;
                    model_seen[m] = true;
                    records.push(ResponseRecord {
                        model_id: models[m].clone(),
                        benchmark_id: bench.name.clone(),
                        item_id: id.clone(),
                        outcome: (u < params.probability(theta)) as u8,
                    });
                }
            }
            items.push(BankItem {
                benchmark: bench.name.clone(),
                item: id,
                a: params.a,
                b: params.b,
                c: params.c,
                d: params.d,
            });
        }
    }

    let mut fixup = stream(spec.benchmarks.len() as u64 + 1);
    for m in (0..n_models).filter(|&m| !model_seen[m]) {
        let mut k = fixup.gen_range(0..items.len());
        let taken = |k: usize, recs: &[ResponseRecord]| {
            recs.iter()
                .any(|r| r.model_id == models[m] && r.item_id == items[k].item && r.benchmark_id == items[k].benchmark)
        };
        while taken(k, &records) {
            k = (k + 1) % items.len();
        }
        let it = &items[k];
        records.push(ResponseRecord {
            model_id: models[m].clone(),
            benchmark_id: it.benchmark.clone(),
            item_id: it.item.clone(),
            outcome: (fixup.gen::<f64>() < it.params().probability(thetas[m])) as u8,
        });
    }

    let matrix = ResponseMatrix::from_records(records)?;
    let abilities = models
        .into_iter()
        .zip(&thetas)
        .map(|(model_id, &theta)| AbilityEstimate { model_id, theta })
        .collect();
    let truth = FittedBank::new(FitMethod::Truth, spec.family(), spec.seed, None, abilities, items)?;
    Ok((matrix, truth))
}

/// Twelve models on an evenly spaced ability grid and eleven benchmarks of
/// 180 items with differing difficulty, slope, guessing and ceiling ranges.
pub fn default_spec() -> SynthSpec {
    let bench = |name: &str, b: (f64, f64), a: (f64, f64), c: (f64, f64), d: (f64, f64)| BenchmarkSpec {
        name: name.to_owned(),
        n_items: 180,
        difficulty: b,
        discriminability: a,
        guessing: c,
        feasibility: d,
    };
    SynthSpec {
        abilities: AbilitySpec::Evenly {
            n_models: 12,
            low: -3.0,
            high: 3.0,
        },
        benchmarks: vec![
            bench("arc", (-3.0, -0.5), (0.5, 2.5), (0.15, 0.35), (0.9, 1.0)),
            bench("bbh", (-2.0, 0.5), (0.5, 2.5), (0.05, 0.25), (0.8, 1.0)),
            bench("csimpleqa", (-0.5, 2.5), (0.5, 2.5), (0.0, 0.1), (0.6, 0.85)),
            bench("gpqa", (-1.0, 2.0), (0.3, 1.5), (0.1, 0.25), (0.5, 0.8)),
            bench("gsm8k", (-2.5, 0.0), (1.0, 3.0), (0.05, 0.2), (0.85, 1.0)),
            bench("hellaswag", (-3.0, -0.5), (0.5, 2.5), (0.15, 0.35), (0.85, 1.0)),
            bench("humaneval", (-2.0, 0.5), (0.8, 2.5), (0.05, 0.25), (0.8, 1.0)),
            bench("math", (-1.5, 1.5), (1.0, 3.0), (0.0, 0.1), (0.75, 0.95)),
            bench("mbpp", (-1.5, 1.0), (0.8, 2.5), (0.05, 0.2), (0.75, 0.95)),
            bench("mmlu", (-2.5, 0.5), (0.5, 2.0), (0.15, 0.35), (0.8, 1.0)),
            bench("theoremqa", (0.0, 3.0), (0.3, 1.5), (0.0, 0.15), (0.4, 0.7)),
        ],
        density: 1.0,
        seed: 0,
    }
}

/// Agreement between a fit and the ground truth it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub discriminability: Option<f64>,
    pub difficulty: Option<f64>,
    pub guessing: Option<f64>,
    pub feasibility: Option<f64>,
    pub theta_tau: Option<f64>,
    pub n_items: usize,
    pub n_models: usize,
}

/// Pearson r per item parameter and Kendall τ-b of abilities. Both banks
/// must cover the same models and items.
pub fn recovery_score(truth: &FittedBank, fitted: &FittedBank) -> Result<RecoveryScore> {
    let same_items = truth.items().len() == fitted.items().len()
        && truth.items().iter().all(|it| fitted.contains_item(&it.key()));
    let same_models = truth.abilities().len() == fitted.abilities().len()
        && truth.abilities().iter().all(|a| fitted.contains_model(&a.model_id));
    if !same_items || !same_models {
        return Err(Error::InvalidData(
            "banks cover different models or items".into(),
        ));
    }
    let [a, b, c, d] = parameter_correlations(truth, fitted)?;
    let xs = truth.thetas();
    let ys = truth
        .abilities()
        .iter()
        .map(|ab| fitted.theta(&ab.model_id))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryScore {
        discriminability: a,
        difficulty: b,
        guessing: c,
        feasibility: d,
        theta_tau: kendall_tau_b(&xs, &ys)?,
        n_items: truth.items().len(),
        n_models: xs.len(),
    })
}
