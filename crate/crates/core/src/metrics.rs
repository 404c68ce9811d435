//! Prediction quality, rank correlation and stability studies.

use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{FitSettings, FittedBank};
use crate::dataset::{subsample_items, ResponseMatrix};
use crate::error::{Error, Result};

/// Threshold-0.5 classification quality over a set of interactions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionEval {
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when only one label class is present.
    pub auc: Option<f64>,
    pub n: usize,
}

impl PredictionEval {
    pub const CSV_HEADER: [&'static str; 4] = ["accuracy", "f1", "auc", "n"];

    pub fn csv_row(&self) -> [String; 4] {
        [
            self.accuracy.to_string(),
            self.f1.to_string(),
            self.auc.map(|v| v.to_string()).unwrap_or_default(),
            self.n.to_string(),
        ]
    }
}

pub fn accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    same_len(predictions.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// F1 for the positive class; 0 when there are no positives at all.
pub fn f1_score(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    same_len(predictions.len(), labels.len())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

/// ROC AUC via the Mann–Whitney statistic with midranks; `None` when either
/// class is empty.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    same_len(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share their mean.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

pub fn evaluate_probabilities(probabilities: &[f64], labels: &[bool]) -> Result<PredictionEval> {
    same_len(probabilities.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty interaction set".into(),
        ));
    }
    let predictions: Vec<bool> = probabilities.iter().map(|&p| p >= 0.5).collect();
    Ok(PredictionEval {
        accuracy: accuracy(&predictions, labels)?,
        f1: f1_score(&predictions, labels)?,
        auc: roc_auc(probabilities, labels)?,
        n: labels.len(),
    })
}

/// Scores `bank` on the listed entries of `matrix`.
pub fn evaluate_predictions(
    bank: &FittedBank,
    matrix: &ResponseMatrix,
    subset: &[usize],
) -> Result<PredictionEval> {
    let probabilities = bank.predict_entries(matrix, subset)?;
    let labels: Vec<bool> = subset
        .iter()
        .map(|&i| matrix.entries()[i].outcome == 1)
        .collect();
    evaluate_probabilities(&probabilities, &labels)
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: a,
            actual: b,
        })
    }
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort that returns the number of inversions.
fn sort_counting_swaps(values: &mut [f64], buffer: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut swaps = sort_counting_swaps(left, &mut buffer[..mid]);
    swaps += sort_counting_swaps(right, &mut buffer[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if right[j] < left[i] {
            buffer[k] = right[j];
            swaps += (left.len() - i) as u64;
            j += 1;
        } else {
            buffer[k] = left[i];
            i += 1;
        }
        k += 1;
    }
    buffer[k..k + left.len() - i].copy_from_slice(&left[i..]);
    k += left.len() - i;
    buffer[k..].copy_from_slice(&right[j..]);
    values.copy_from_slice(&buffer[..n]);
    swaps
}

/// Kendall's τ-b between two score vectors (Knight's `O(n log n)` method).
/// `None` when either vector is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    same_len(x.len(), y.len())?;
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in rank correlation input".into()));
    }
    let n = x.len() as u64;
    if n < 2 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(y[i].total_cmp(&y[j])));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let n0 = n * (n - 1) / 2;
    let n1 = tied_pairs(&xs);
    let mut joint = 0u64;
    let mut run = 1u64;
    for k in 1..order.len() {
        if xs[k] == xs[k - 1] && ys[k] == ys[k - 1] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;

    let mut buffer = vec![0.0; ys.len()];
    let swaps = sort_counting_swaps(&mut ys, &mut buffer);
    let n2 = tied_pairs(&ys);

    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if denom == 0.0 {
        return Ok(None);
    }
    let numerator = n0 as i128 - n1 as i128 - n2 as i128 + joint as i128 - 2 * swaps as i128;
    Ok(Some(numerator as f64 / denom))
}

/// τ between two orderings (best first) of the same id set.
pub fn kendall_tau<S: AsRef<str>>(rank_a: &[S], rank_b: &[S]) -> Result<f64> {
    let position: std::collections::HashMap<&str, usize> = rank_b
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_ref(), i))
        .collect();
    if position.len() != rank_b.len() {
        return Err(Error::InvalidArgument("ranking contains duplicate ids".into()));
    }
    if rank_a.len() != rank_b.len() {
        return Err(Error::InvalidArgument(format!(
            "rankings have different lengths ({} vs {})",
            rank_a.len(),
            rank_b.len()
        )));
    }
    let mut xs = Vec::with_capacity(rank_a.len());
    let mut ys = Vec::with_capacity(rank_a.len());
    let mut seen = std::collections::HashSet::new();
    for (i, id) in rank_a.iter().enumerate() {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(Error::InvalidArgument(format!("ranking repeats `{id}`")));
        }
        let j = position.get(id).ok_or_else(|| Error::UnknownId {
            kind: "model",
            id: id.to_owned(),
        })?;
        xs.push(i as f64);
        ys.push(*j as f64);
    }
    kendall_tau_b(&xs, &ys)?
        .ok_or_else(|| Error::InvalidArgument("τ needs at least two ranked ids".into()))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson needs at least two points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("pearson of a zero-variance vector".into()));
    }
    let r = sxy / (sxx * syy).sqrt();
    if !r.is_finite() {
        return Err(Error::Numeric("non-finite correlation".into()));
    }
    Ok(r.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStabilityResult {
    pub tau: f64,
    /// Interactions in each half.
    pub half_sizes: (usize, usize),
    /// Models ranked in both halves.
    pub n_models: usize,
    pub seed: u64,
}

/// Splits `test` in two random halves, refits abilities on each with `fit`
/// and compares the two ability rankings.
pub fn rank_stability<F>(
    matrix: &ResponseMatrix,
    test: &[usize],
    fit: F,
    seed: u64,
) -> Result<RankStabilityResult>
where
    F: Fn(&ResponseMatrix) -> Result<FittedBank>,
{
    if test.len() < 2 {
        return Err(Error::InvalidArgument(
            "rank stability needs at least two test interactions".into(),
        ));
    }
    let mut shuffled = test.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (first, second) = shuffled.split_at(shuffled.len() / 2);
    let bank_a = fit(&matrix.select_entries(first)?)?;
    let bank_b = fit(&matrix.select_entries(second)?)?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for model in matrix.models() {
        match (bank_a.theta(model), bank_b.theta(model)) {
            (Ok(a), Ok(b)) => {
                xs.push(a);
                ys.push(b);
            }
            _ => warn!("model `{model}` missing from one half; excluded from rank stability"),
        }
    }
    let tau = kendall_tau_b(&xs, &ys)?.ok_or_else(|| {
        Error::Numeric("rank stability undefined: fewer than two distinct abilities".into())
    })?;
    Ok(RankStabilityResult {
        tau,
        half_sizes: (first.len(), second.len()),
        n_models: xs.len(),
        seed,
    })
}

/// Pearson r of each item parameter between a subset refit and the full fit.
/// A parameter pinned by the family has no variance and is reported absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub fraction: f64,
    pub n_items: usize,
    pub difficulty: Option<f64>,
    pub discriminability: Option<f64>,
    pub guessing: Option<f64>,
    pub feasibility: Option<f64>,
}

impl StabilityRow {
    pub const CSV_HEADER: [&'static str; 6] = [
        "fraction",
        "difficulty",
        "discriminability",
        "guessing",
        "feasibility",
        "n_items",
    ];

    pub fn csv_row(&self) -> [String; 6] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.fraction.to_string(),
            opt(self.difficulty),
            opt(self.discriminability),
            opt(self.guessing),
            opt(self.feasibility),
            self.n_items.to_string(),
        ]
    }
}

/// Correlates `(a, b, c, d)` of the items shared by two banks.
pub fn parameter_correlations(
    reference: &FittedBank,
    other: &FittedBank,
) -> Result<[Option<f64>; 4]> {
    let mut cols: [(Vec<f64>, Vec<f64>); 4] = Default::default();
    for item in other.items() {
        let Ok(r) = reference.item_params(&item.key()) else {
            continue;
        };
        let o = item.params();
        for (k, (x, y)) in [(r.a, o.a), (r.b, o.b), (r.c, o.c), (r.d, o.d)]
            .into_iter()
            .enumerate()
        {
            cols[k].0.push(x);
            cols[k].1.push(y);
        }
    }
    if cols[0].0.len() < 2 {
        return Err(Error::InvalidData(
            "fewer than two shared items to correlate".into(),
        ));
    }
    let mut out = [None; 4];
    for (slot, (x, y)) in out.iter_mut().zip(&cols) {
        *slot = match pearson(x, y) {
            Ok(r) => Some(r),
            Err(Error::Numeric(_)) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(out)
}

/// Subset-retrain study: for each fraction, refit on a random item subset
/// and correlate with a full-data fit.
pub fn stability_study(
    matrix: &ResponseMatrix,
    fractions: &[f64],
    settings: &FitSettings,
    seed: u64,
) -> Result<Vec<StabilityRow>> {
    let settings = settings.with_seed(seed);
    let full = settings.fit_full(matrix)?;
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let subset = subsample_items(matrix, fraction, seed)?;
        let refit = settings.fit_full(&subset)?;
        let [a, b, c, d] = parameter_correlations(&full, &refit)?;
        rows.push(StabilityRow {
            fraction,
            n_items: subset.n_items(),
            difficulty: b,
            discriminability: a,
            guessing: c,
            feasibility: d,
        });
    }
    Ok(rows)
}

pub fn write_stability_csv<W: Write>(rows: &[StabilityRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(StabilityRow::CSV_HEADER)?;
    for row in rows {
        w.write_record(row.csv_row())?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
