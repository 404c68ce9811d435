//! Item-subset selection and agreement of subset rankings with a reference.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::pooled_fisher;
use crate::bank::FittedBank;
use crate::dataset::{ItemKey, ResponseMatrix};
use crate::error::{Error, Result};
use crate::metrics::kendall_tau_b;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    TopDiscriminability,
    TopFisher,
    Clustering,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Random,
        StrategyKind::TopDiscriminability,
        StrategyKind::TopFisher,
        StrategyKind::Clustering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::TopDiscriminability => "discriminability",
            StrategyKind::TopFisher => "fisher",
            StrategyKind::Clustering => "clustering",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(StrategyKind::Random),
            "discriminability" | "discrim" => Ok(StrategyKind::TopDiscriminability),
            "fisher" => Ok(StrategyKind::TopFisher),
            "clustering" | "cluster" => Ok(StrategyKind::Clustering),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy `{other}` (expected random, discriminability, fisher or clustering)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    pub k: usize,
    pub seed: u64,
}

const KMEANS_MAX_ITERATIONS: usize = 100;

/// Picks `strategy.k` distinct items of `matrix`.
pub fn select(
    bank: &FittedBank,
    matrix: &ResponseMatrix,
    strategy: &SelectionStrategy,
) -> Result<Vec<ItemKey>> {
    let n = matrix.n_items();
    if strategy.k == 0 || strategy.k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {} outside 1..={n}",
            strategy.k
        )));
    }
    let (_, params) = bank.aligned(matrix)?;
    let items = matrix.items();
    let chosen: Vec<usize> = match strategy.kind {
        StrategyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
            rand::seq::index::sample(&mut rng, n, strategy.k).into_vec()
        }
        StrategyKind::TopDiscriminability => {
            let scores: Vec<f64> = params.iter().map(|p| p.a).collect();
            top_k(&scores, items, strategy.k)
        }
        StrategyKind::TopFisher => {
            let thetas = bank.thetas();
            let scores: Vec<f64> = params.iter().map(|p| pooled_fisher(p, &thetas)).collect();
            top_k(&scores, items, strategy.k)
        }
        StrategyKind::Clustering => {
            let vectors = success_vectors(matrix);
            cluster_representatives(&vectors, matrix.n_models(), strategy.k, strategy.seed)
        }
    };
    Ok(chosen.into_iter().map(|i| items[i].clone()).collect())
}

/// Indices of the `k` largest scores; ties go to the smaller item key.
fn top_k(scores: &[f64], items: &[ItemKey], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .total_cmp(&scores[i])
            .then_with(|| items[i].cmp(&items[j]))
    });
    order.truncate(k);
    order
}

/// Row-major `n_items × n_models` outcomes, unobserved cells as 0.
fn success_vectors(matrix: &ResponseMatrix) -> Vec<f64> {
    let m = matrix.n_models();
    let mut out = vec![0.0; matrix.n_items() * m];
    for e in matrix.entries() {
        out[e.item * m + e.model] = e.outcome as f64;
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means (k-means++ seeding) on the success vectors, then the item
/// nearest each centroid. Representatives are distinct.
fn cluster_representatives(vectors: &[f64], dim: usize, k: usize, seed: u64) -> Vec<usize> {
    let n = vectors.len() / dim;
    let point = |i: usize| &vectors[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut is_center = vec![false; n];
    let first = rng.gen_range(0..n);
    is_center[first] = true;
    let mut centroids: Vec<f64> = point(first).to_vec();
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if nearest[pick] == 0.0 {
                pick = nearest.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Fewer distinct vectors than clusters: seed the rest with unused
            // duplicates.
            let unused: Vec<usize> = (0..n).filter(|&i| !is_center[i]).collect();
            unused[rng.gen_range(0..unused.len())]
        };
        is_center[next] = true;
        centroids.extend_from_slice(point(next));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), point(next)));
        }
    }

    let assign = |centroids: &[f64], i: usize| {
        (0..k)
            .map(|c| (sq_dist(point(i), &centroids[c * dim..(c + 1) * dim]), c))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, c)| c)
            .unwrap_or(0)
    };
    let mut labels: Vec<usize> = (0..n).map(|i| assign(&centroids, i)).collect();
    let mut converged = false;
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += x;
            }
        }
        for c in (0..k).filter(|&c| counts[c] > 0) {
            for (dst, s) in centroids[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = s / counts[c] as f64;
            }
        }
        let next: Vec<usize> = (0..n).map(|i| assign(&centroids, i)).collect();
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    if !converged {
        warn!("k-means did not converge in {KMEANS_MAX_ITERATIONS} iterations; using the last assignment");
    }

    let mut used = vec![false; n];
    let mut reps = Vec::with_capacity(k);
    for c in 0..k {
        let centroid = &centroids[c * dim..(c + 1) * dim];
        let best = |members_only: bool| {
            (0..n)
                .filter(|&i| !used[i] && (!members_only || labels[i] == c))
                .map(|i| (sq_dist(point(i), centroid), i))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, i)| i)
        };
        if let Some(i) = best(true).or_else(|| best(false)) {
            used[i] = true;
            reps.push(i);
        }
    }
    reps
}

/// A named set of models over which agreement is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPool {
    pub label: String,
    pub models: Vec<String>,
}

impl ModelPool {
    pub fn new(label: impl Into<String>, models: Vec<String>) -> Self {
        ModelPool {
            label: label.into(),
            models,
        }
    }

    pub fn all(matrix: &ResponseMatrix) -> Self {
        ModelPool::new("all", matrix.models().to_vec())
    }

    /// The first `n` models of a reference ranking.
    pub fn top(reference: &[String], n: usize) -> Self {
        ModelPool::new(format!("top{n}"), reference.iter().take(n).cloned().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub score: f64,
    pub n_observed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<SelectionStrategy>,
    pub pool: String,
    pub items: Vec<ItemKey>,
    /// Mean outcome on the subset, best first.
    pub scores: Vec<ModelScore>,
    /// Population variance of the scores.
    pub variance: f64,
    /// τ-b against the reference; absent when the scores are all tied.
    pub tau: Option<f64>,
    pub tied_scores: bool,
    pub excluded: Vec<String>,
}

impl SelectionReport {
    pub const CSV_HEADER: [&'static str; 6] = ["strategy", "pool", "k", "variance", "tau", "models"];

    pub fn csv_row(&self) -> [String; 6] {
        [
            self.strategy
                .map(|s| s.kind.to_string())
                .unwrap_or_default(),
            self.pool.clone(),
            self.items.len().to_string(),
            self.variance.to_string(),
            self.tau.map(|t| t.to_string()).unwrap_or_default(),
            self.scores.len().to_string(),
        ]
    }
}

/// Scores the pool on `subset` and compares its ranking with `reference`
/// (best first).
pub fn agreement_test(
    subset: &[ItemKey],
    matrix: &ResponseMatrix,
    reference: &[String],
    pool: &ModelPool,
) -> Result<SelectionReport> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty item subset".into()));
    }
    let mut in_subset = vec![false; matrix.n_items()];
    for key in subset {
        let i = matrix.item_index(key).ok_or_else(|| Error::UnknownId {
            kind: "item",
            id: key.to_string(),
        })?;
        in_subset[i] = true;
    }
    let position: HashMap<&str, usize> = reference
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();
    let mut pool_models = HashSet::new();
    for m in &pool.models {
        if !position.contains_key(m.as_str()) {
            return Err(Error::UnknownId {
                kind: "reference model",
                id: m.clone(),
            });
        }
        if !pool_models.insert(m.as_str()) {
            return Err(Error::InvalidArgument(format!("pool lists `{m}` twice")));
        }
    }

    let mut correct = vec![0usize; matrix.n_models()];
    let mut seen = vec![0usize; matrix.n_models()];
    for e in matrix.entries().iter().filter(|e| in_subset[e.item]) {
        seen[e.model] += 1;
        correct[e.model] += e.outcome as usize;
    }
    let mut scores = Vec::new();
    let mut excluded = Vec::new();
    for m in &pool.models {
        let observed = matrix.model_index(m).map(|i| (correct[i], seen[i]));
        match observed {
            Some((c, n)) if n > 0 => scores.push(ModelScore {
                model: m.clone(),
                score: c as f64 / n as f64,
                n_observed: n,
            }),
            _ => {
                warn!("model `{m}` has no observations on the subset; excluded");
                excluded.push(m.clone());
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::InvalidData(
            "no pool model is observed on the subset".into(),
        ));
    }
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| position[a.model.as_str()].cmp(&position[b.model.as_str()]))
    });
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    let reference_scores: Vec<f64> = scores
        .iter()
        .map(|s| -(position[s.model.as_str()] as f64))
        .collect();
    let tied_scores = {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.windows(2).any(|w| w[0] == w[1])
    };
    Ok(SelectionReport {
        strategy: None,
        pool: pool.label.clone(),
        items: subset.to_vec(),
        scores,
        variance,
        tau: kendall_tau_b(&values, &reference_scores)?,
        tied_scores,
        excluded,
    })
}

/// One model id per line, best first. Blank lines are skipped.
pub fn parse_reference_ranking(text: &str, source_name: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        if let Some(first) = seen.insert(id.to_owned(), n + 1) {
            return Err(Error::Parse {
                source_name: source_name.to_owned(),
                line: (n + 1) as u64,
                message: format!("model `{id}` already listed on line {first}"),
            });
        }
        out.push(id.to_owned());
    }
    if out.is_empty() {
        return Err(Error::InvalidData(format!(
            "{source_name}: reference ranking is empty"
        )));
    }
    Ok(out)
}

/// Loads a reference ranking; ids outside `known` (when given) are errors.
pub fn load_reference_ranking(path: &Path, known: Option<&[String]>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ranking = parse_reference_ranking(&text, &path.display().to_string())?;
    if let Some(known) = known {
        let known: HashSet<&str> = known.iter().map(String::as_str).collect();
        if let Some(unknown) = ranking.iter().find(|m| !known.contains(m.as_str())) {
            return Err(Error::UnknownId {
                kind: "model",
                id: unknown.clone(),
            });
        }
    }
    Ok(ranking)
}

/// Merges two rankings of the same models by mean position; ties go to the
/// smaller id.
pub fn merge_rankings(a: &[String], b: &[String]) -> Result<Vec<String>> {
    let pos_b: HashMap<&str, usize> = b.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    if a.len() != b.len() || pos_b.len() != b.len() {
        return Err(Error::InvalidArgument(
            "rankings must list the same models once each".into(),
        ));
    }
    let mut merged = Vec::with_capacity(a.len());
    for (i, m) in a.iter().enumerate() {
        let j = pos_b.get(m.as_str()).ok_or_else(|| Error::UnknownId {
            kind: "model",
            id: m.clone(),
        })?;
        merged.push((i + j, m.clone()));
    }
    merged.sort();
    Ok(merged.into_iter().map(|(_, m)| m).collect())
}

pub fn write_reports_csv<W: Write>(reports: &[SelectionReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SelectionReport::CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_row())?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{BankItem, FitMethod};
    use crate::dataset::ResponseRecord;
    use crate::irt::{AbilityEstimate, ModelFamily};
    use proptest::prelude::*;

    fn fixture(a_values: &[f64], rows: &[&[u8]]) -> (FittedBank, ResponseMatrix) {
        let abilities = (0..rows.len())
            .map(|m| AbilityEstimate {
                model_id: format!("m{m}"),
                theta: m as f64 * 0.5,
            })
            .collect();
        let items = a_values
            .iter()
            .enumerate()
            .map(|(i, &a)| BankItem {
                benchmark: "x".into(),
                item: format!("q{i:02}"),
                a,
                b: i as f64 * 0.1,
                c: 0.0,
                d: 1.0,
            })
            .collect();
        let bank = FittedBank::new(FitMethod::Truth, ModelFamily::TwoPL, 0, None, abilities, items).unwrap();
        let mut recs = Vec::new();
        for (m, row) in rows.iter().enumerate() {
            for (i, &o) in row.iter().enumerate() {
                recs.push(ResponseRecord {
                    model_id: format!("m{m}"),
                    benchmark_id: "x".into(),
                    item_id: format!("q{i:02}"),
                    outcome: o,
                });
            }
        }
        (bank, ResponseMatrix::from_records(recs).unwrap())
    }

    fn strategy(kind: StrategyKind, k: usize) -> SelectionStrategy {
        SelectionStrategy { kind, k, seed: 9 }
    }

    #[test]
    fn argmax_and_exhaustive() {
        let (bank, m) = fixture(&[0.5, 2.0], &[&[1, 0], &[1, 1]]);
        let top = select(&bank, &m, &strategy(StrategyKind::TopDiscriminability, 1)).unwrap();
        assert_eq!(top, [ItemKey::new("x", "q01")]);
        for kind in StrategyKind::ALL {
            let mut all = select(&bank, &m, &strategy(kind, 2)).unwrap();
            all.sort();
            assert_eq!(all, m.items());
        }
        assert!(select(&bank, &m, &strategy(StrategyKind::Random, 3)).is_err());
        assert!(select(&bank, &m, &strategy(StrategyKind::Random, 0)).is_err());
    }

    #[test]
    fn clustering_with_duplicate_vectors() {
        let (bank, m) = fixture(&[1.0; 6], &[&[1, 1, 1, 0, 0, 0], &[1, 1, 1, 0, 0, 1]]);
        for k in 1..=6 {
            let chosen = select(&bank, &m, &strategy(StrategyKind::Clustering, k)).unwrap();
            let distinct: HashSet<_> = chosen.iter().collect();
            assert_eq!(distinct.len(), k);
        }
        let two = select(&bank, &m, &strategy(StrategyKind::Clustering, 3)).unwrap();
        let patterns: HashSet<Vec<u8>> = two
            .iter()
            .map(|key| {
                let i = m.item_index(key).unwrap();
                m.entries().iter().filter(|e| e.item == i).map(|e| e.outcome).collect()
            })
            .collect();
        assert_eq!(patterns.len(), 3, "one representative per distinct pattern");
    }

    #[test]
    fn agreement_scores_and_tau() {
        let (_, m) = fixture(&[1.0; 4], &[&[1, 1, 1, 0], &[1, 0, 0, 0], &[1, 1, 0, 0]]);
        let subset: Vec<ItemKey> = m.items().to_vec();
        let reference: Vec<String> = ["m0", "m2", "m1"].map(String::from).to_vec();
        let r = agreement_test(&subset, &m, &reference, &ModelPool::all(&m)).unwrap();
        assert_eq!(r.tau, Some(1.0));
        assert_eq!(r.scores[0].score, 0.75);
        assert!((r.variance - ((0.25f64).powi(2) * 2.0 / 3.0)).abs() < 1e-15);

        let flat = agreement_test(&subset[..1], &m, &reference, &ModelPool::all(&m)).unwrap();
        assert_eq!(flat.variance, 0.0);
        assert_eq!(flat.tau, None);
        assert!(flat.tied_scores);

        let stranger = ModelPool::new("x", vec!["zz".into()]);
        assert!(agreement_test(&subset, &m, &reference, &stranger).is_err());
    }

    #[test]
    fn reference_parsing() {
        let r = parse_reference_ranking("a\nb\n\nc\n", "ref").unwrap();
        assert_eq!(r, ["a", "b", "c"]);
        let err = parse_reference_ranking("a\nb\na\n", "ref").unwrap_err();
        assert!(err.to_string().contains("`a`"), "{err}");
        assert!(parse_reference_ranking("\n\n", "ref").is_err());
    }

    #[test]
    fn merging() {
        let a: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
        let b: Vec<String> = ["y", "x", "z"].map(String::from).to_vec();
        assert_eq!(merge_rankings(&a, &b).unwrap(), ["x", "y", "z"]);
        let c: Vec<String> = ["z", "y", "x"].map(String::from).to_vec();
        assert_eq!(merge_rankings(&a, &c).unwrap(), ["x", "y", "z"]);
        assert!(merge_rankings(&a, &b[..2]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn strategies_return_k_distinct_items(
            a_values in prop::collection::vec(0.1f64..3.0, 2..15),
            seed in any::<u64>(),
            kfrac in 0.0f64..1.0,
        ) {
            let rows: Vec<Vec<u8>> = (0..4)
                .map(|m| (0..a_values.len()).map(|i| ((seed >> ((m * 7 + i) % 60)) & 1) as u8).collect())
                .collect();
            let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
            let (bank, m) = fixture(&a_values, &refs);
            let k = 1 + (kfrac * (a_values.len() - 1) as f64) as usize;
            for kind in StrategyKind::ALL {
                let s = SelectionStrategy { kind, k, seed };
                let chosen = select(&bank, &m, &s).unwrap();
                prop_assert_eq!(chosen.len(), k);
                prop_assert_eq!(chosen.iter().collect::<HashSet<_>>().len(), k);
                prop_assert_eq!(&chosen, &select(&bank, &m, &s).unwrap());
            }
        }
    }
}
