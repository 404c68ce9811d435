//! Per-benchmark quality reports built from a fitted bank.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bank::FittedBank;
use crate::dataset::ResponseMatrix;
use crate::error::{Error, Result};
use crate::irt::{fisher_information, leh, ItemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Difficulty,
    Discriminability,
    Guessing,
    Feasibility,
    Leh,
    Fisher,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::Difficulty,
        Property::Discriminability,
        Property::Guessing,
        Property::Feasibility,
        Property::Leh,
        Property::Fisher,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Property::Difficulty => "difficulty",
            Property::Discriminability => "discriminability",
            Property::Guessing => "guessing",
            Property::Feasibility => "feasibility",
            Property::Leh => "leh",
            Property::Fisher => "fisher",
        }
    }

    /// Low guessing is good; for everything else higher is better.
    pub fn default_direction(self) -> Direction {
        match self {
            Property::Guessing => Direction::LowerIsBetter,
            _ => Direction::HigherIsBetter,
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown property `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

pub fn default_directions() -> [Direction; 6] {
    Property::ALL.map(Property::default_direction)
}

/// Mean item properties of one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub benchmark: String,
    pub n_items: usize,
    pub difficulty: f64,
    pub discriminability: f64,
    pub guessing: f64,
    pub feasibility: f64,
    pub leh: f64,
    pub fisher: f64,
}

impl BenchmarkSummary {
    pub const CSV_HEADER: [&'static str; 8] = [
        "benchmark",
        "difficulty",
        "discriminability",
        "guessing",
        "feasibility",
        "leh",
        "fisher",
        "n_items",
    ];

    pub fn get(&self, property: Property) -> f64 {
        match property {
            Property::Difficulty => self.difficulty,
            Property::Discriminability => self.discriminability,
            Property::Guessing => self.guessing,
            Property::Feasibility => self.feasibility,
            Property::Leh => self.leh,
            Property::Fisher => self.fisher,
        }
    }

    /// Summary with the given means, in [`Property::ALL`] order.
    pub fn from_means(benchmark: &str, n_items: usize, means: [f64; 6]) -> Self {
        let [difficulty, discriminability, guessing, feasibility, leh, fisher] = means;
        BenchmarkSummary {
            benchmark: benchmark.to_owned(),
            n_items,
            difficulty,
            discriminability,
            guessing,
            feasibility,
            leh,
            fisher,
        }
    }
}

/// Fisher information averaged over a pool of abilities.
pub fn pooled_fisher(params: &ItemParams, thetas: &[f64]) -> f64 {
    if thetas.is_empty() {
        return 0.0;
    }
    thetas
        .iter()
        .map(|&t| fisher_information(params, t))
        .sum::<f64>()
        / thetas.len() as f64
}

/// The six properties of one item; LEH at `theta_max`, Fisher pooled over
/// `thetas`.
pub fn item_properties(params: &ItemParams, theta_max: f64, thetas: &[f64]) -> [f64; 6] {
    [
        params.b,
        params.a,
        params.c,
        params.d,
        leh(params, theta_max),
        pooled_fisher(params, thetas),
    ]
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per benchmark: (item id, property values) in item order.
type GroupedProperties = BTreeMap<String, Vec<(String, [f64; 6])>>;

fn grouped_properties(bank: &FittedBank, matrix: &ResponseMatrix) -> Result<GroupedProperties> {
    let thetas = bank.thetas();
    let theta_max = bank
        .theta_max()
        .ok_or_else(|| Error::InvalidData("bank has no abilities".into()))?;
    let mut groups: BTreeMap<String, Vec<(String, [f64; 6])>> = BTreeMap::new();
    for key in matrix.items() {
        let params = bank.item_params(key)?;
        groups
            .entry(key.benchmark.clone())
            .or_default()
            .push((key.item.clone(), item_properties(&params, theta_max, &thetas)));
    }
    Ok(groups)
}

/// Per-benchmark means of the six properties, sorted by benchmark id.
pub fn summarize(bank: &FittedBank, matrix: &ResponseMatrix) -> Result<Vec<BenchmarkSummary>> {
    let groups = grouped_properties(bank, matrix)?;
    if groups.is_empty() {
        return Err(Error::InvalidData("no items to summarize".into()));
    }
    Ok(groups
        .into_iter()
        .map(|(benchmark, rows)| {
            let mut means = [0.0; 6];
            for (k, slot) in means.iter_mut().enumerate() {
                let mut col: Vec<f64> = rows.iter().map(|(_, p)| p[k]).collect();
                *slot = mean(&mut col);
            }
            BenchmarkSummary::from_means(&benchmark, rows.len(), means)
        })
        .collect())
}

/// Competition ranks per property plus their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub benchmark: String,
    /// In [`Property::ALL`] order.
    pub ranks: [usize; 6],
    pub total: usize,
}

impl RankRow {
    pub fn rank(&self, property: Property) -> usize {
        self.ranks[property as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub directions: [Direction; 6],
    /// Ordered by total ascending, then benchmark id.
    pub rows: Vec<RankRow>,
}

impl RankTable {
    pub const CSV_HEADER: [&'static str; 8] = [
        "benchmark",
        "difficulty",
        "discriminability",
        "guessing",
        "feasibility",
        "leh",
        "fisher",
        "total",
    ];

    pub fn row(&self, benchmark: &str) -> Option<&RankRow> {
        self.rows.iter().find(|r| r.benchmark == benchmark)
    }
}

pub fn rank_benchmarks(summaries: &[BenchmarkSummary]) -> Result<RankTable> {
    rank_benchmarks_with(summaries, default_directions())
}

/// Rank = 1 + number of benchmarks strictly better on that property, so
/// ties share the smaller rank.
pub fn rank_benchmarks_with(
    summaries: &[BenchmarkSummary],
    directions: [Direction; 6],
) -> Result<RankTable> {
    if summaries.is_empty() {
        return Err(Error::InvalidArgument("no benchmarks to rank".into()));
    }
    for s in summaries {
        if Property::ALL.iter().any(|&p| s.get(p).is_nan()) {
            return Err(Error::InvalidData(format!(
                "benchmark `{}` has a NaN property mean",
                s.benchmark
            )));
        }
    }
    let mut rows: Vec<RankRow> = summaries
        .iter()
        .map(|s| {
            let mut ranks = [0; 6];
            for (k, &p) in Property::ALL.iter().enumerate() {
                let v = s.get(p);
                let better = summaries
                    .iter()
                    .filter(|o| match directions[k] {
                        Direction::HigherIsBetter => o.get(p) > v,
                        Direction::LowerIsBetter => o.get(p) < v,
                    })
                    .count();
                ranks[k] = better + 1;
            }
            RankRow {
                benchmark: s.benchmark.clone(),
                ranks,
                total: ranks.iter().sum(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.total.cmp(&b.total).then_with(|| a.benchmark.cmp(&b.benchmark)));
    Ok(RankTable { directions, rows })
}

/// One item's value of one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub benchmark: String,
    pub item: String,
    pub property: Property,
    pub value: f64,
}

/// One item's `(difficulty, discriminability)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub benchmark: String,
    pub item: String,
    pub difficulty: f64,
    pub discriminability: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Distributions {
    /// Long format, grouped by benchmark then property then item.
    pub rows: Vec<DistributionRow>,
    pub scatter: Vec<ScatterPoint>,
}

pub fn export_distributions(bank: &FittedBank, matrix: &ResponseMatrix) -> Result<Distributions> {
    let groups = grouped_properties(bank, matrix)?;
    let mut out = Distributions::default();
    for (benchmark, items) in &groups {
        for (k, &property) in Property::ALL.iter().enumerate() {
            for (item, props) in items {
                out.rows.push(DistributionRow {
                    benchmark: benchmark.clone(),
                    item: item.clone(),
                    property,
                    value: props[k],
                });
            }
        }
        for (item, props) in items {
            out.scatter.push(ScatterPoint {
                benchmark: benchmark.clone(),
                item: item.clone(),
                difficulty: props[0],
                discriminability: props[1],
            });
        }
    }
    Ok(out)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_summary_csv<W: Write>(summaries: &[BenchmarkSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BenchmarkSummary::CSV_HEADER)?;
    for s in summaries {
        let mut record = vec![s.benchmark.clone()];
        record.extend(Property::ALL.iter().map(|&p| s.get(p).to_string()));
        record.push(s.n_items.to_string());
        w.write_record(&record)?;
    }
    finish(w)
}

pub fn write_rank_csv<W: Write>(table: &RankTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RankTable::CSV_HEADER)?;
    for row in &table.rows {
        let mut record = vec![row.benchmark.clone()];
        record.extend(row.ranks.iter().map(usize::to_string));
        record.push(row.total.to_string());
        w.write_record(&record)?;
    }
    finish(w)
}

pub fn write_distribution_csv<W: Write>(rows: &[DistributionRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["benchmark", "item", "property", "value"])?;
    for r in rows {
        w.write_record([
            r.benchmark.as_str(),
            r.item.as_str(),
            r.property.as_str(),
            &r.value.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_scatter_csv<W: Write>(points: &[ScatterPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["benchmark", "item", "difficulty", "discriminability"])?;
    for p in points {
        w.write_record([
            p.benchmark.as_str(),
            p.item.as_str(),
            &p.difficulty.to_string(),
            &p.discriminability.to_string(),
        ])?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{BankItem, FitMethod};
    use crate::dataset::ResponseRecord;
    use crate::irt::{AbilityEstimate, ModelFamily};
    use proptest::prelude::*;

    fn fixture(items: &[(&str, &str, ItemParams)]) -> (FittedBank, ResponseMatrix) {
        let abilities = vec![
            AbilityEstimate {
                model_id: "m0".into(),
                theta: -0.5,
            },
            AbilityEstimate {
                model_id: "m1".into(),
                theta: 1.5,
            },
        ];
        let bank_items = items
            .iter()
            .map(|(b, i, p)| BankItem {
                benchmark: b.to_string(),
                item: i.to_string(),
                a: p.a,
                b: p.b,
                c: p.c,
                d: p.d,
            })
            .collect();
        let bank =
            FittedBank::new(FitMethod::Truth, ModelFamily::FourPL, 0, None, abilities, bank_items)
                .unwrap();
        let recs = items.iter().map(|(b, i, _)| ResponseRecord {
            model_id: "m0".into(),
            benchmark_id: b.to_string(),
            item_id: i.to_string(),
            outcome: 1,
        });
        (bank, ResponseMatrix::from_records(recs).unwrap())
    }

    fn p(a: f64, b: f64, c: f64, d: f64) -> ItemParams {
        ItemParams::new(a, b, c, d).unwrap()
    }

    #[test]
    fn summary_means() {
        let (bank, m) = fixture(&[
            ("x", "1", p(1.0, -1.0, 0.1, 0.9)),
            ("x", "2", p(2.0, 0.0, 0.2, 0.9)),
            ("x", "3", p(3.0, 1.0, 0.3, 0.9)),
            ("y", "1", p(1.5, 0.4, 0.0, 1.0)),
        ]);
        let s = summarize(&bank, &m).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].difficulty, 0.0);
        assert_eq!(s[0].n_items, 3);
        assert!((s[0].discriminability - 2.0).abs() < 1e-15);
        let single = p(1.5, 0.4, 0.0, 1.0);
        assert_eq!(s[1].difficulty, 0.4);
        assert_eq!(s[1].leh, leh(&single, 1.5));
        assert_eq!(s[1].fisher, pooled_fisher(&single, &[-0.5, 1.5]));
    }

    #[test]
    fn ties_share_the_smaller_rank() {
        let a = BenchmarkSummary::from_means("a", 1, [0.5, 1.0, 0.1, 0.9, 0.01, 0.001]);
        let b = BenchmarkSummary::from_means("b", 1, [0.5, 2.0, 0.2, 0.9, 0.02, 0.001]);
        let c = BenchmarkSummary::from_means("c", 1, [0.1, 0.5, 0.3, 0.8, 0.03, 0.002]);
        let t = rank_benchmarks(&[a, b, c]).unwrap();
        assert_eq!(t.row("a").unwrap().ranks, [1, 2, 1, 1, 3, 2]);
        assert_eq!(t.row("b").unwrap().ranks, [1, 1, 2, 1, 2, 2]);
        assert_eq!(t.row("c").unwrap().ranks, [3, 3, 3, 3, 1, 1]);
        assert_eq!(t.row("c").unwrap().total, 14);
        assert_eq!(t.rows[0].benchmark, "b");
    }

    #[test]
    fn single_benchmark_ranks_are_one() {
        let a = BenchmarkSummary::from_means("a", 3, [0.5, 1.0, 0.1, 0.9, 0.01, 0.001]);
        let t = rank_benchmarks(&[a]).unwrap();
        assert_eq!(t.rows[0].ranks, [1; 6]);
        assert!(rank_benchmarks(&[]).is_err());
    }

    #[test]
    fn distributions_are_exact_copies() {
        let (bank, m) = fixture(&[("x", "1", p(1.0, -1.0, 0.1, 0.9)), ("x", "2", p(2.0, 0.3, 0.2, 0.7))]);
        let d = export_distributions(&bank, &m).unwrap();
        assert_eq!(d.rows.len(), 12);
        assert_eq!(d.scatter.len(), 2);
        assert_eq!(d.scatter[1].difficulty, 0.3);
        assert_eq!(d.scatter[1].discriminability, 2.0);
        let guess: Vec<f64> = d
            .rows
            .iter()
            .filter(|r| r.property == Property::Guessing)
            .map(|r| r.value)
            .collect();
        assert_eq!(guess, [0.1, 0.2]);
    }

    fn arb_summaries() -> impl Strategy<Value = Vec<BenchmarkSummary>> {
        prop::collection::vec(prop::array::uniform6(0u8..5), 1..8).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, r)| BenchmarkSummary::from_means(&format!("b{i}"), 1, r.map(|v| v as f64 / 4.0)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ranks_are_compressed_permutations(s in arb_summaries()) {
            let t = rank_benchmarks(&s).unwrap();
            let n = s.len();
            for k in 0..6 {
                let mut ranks: Vec<usize> = t.rows.iter().map(|r| r.ranks[k]).collect();
                ranks.sort_unstable();
                prop_assert_eq!(ranks[0], 1);
                // Competition ranking: the i-th smallest rank is at most i+1
                // and each rank r is shared by exactly the entries in r..r+count.
                for (i, &r) in ranks.iter().enumerate() {
                    prop_assert!(r <= i + 1 && r >= 1 && r <= n);
                    let first = ranks.iter().position(|&x| x == r).unwrap();
                    prop_assert_eq!(r, first + 1);
                }
            }
            for row in &t.rows {
                prop_assert_eq!(row.total, row.ranks.iter().sum::<usize>());
            }
        }

        #[test]
        fn ranking_ignores_input_order(s in arb_summaries(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = s.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(rank_benchmarks(&s).unwrap(), rank_benchmarks(&shuffled).unwrap());
        }
    }
}
