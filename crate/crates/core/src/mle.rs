//! Joint maximum-likelihood baseline.
//!
//! Abilities and raw item heads (same links as the network estimator) are
//! optimised together by preconditioned gradient ascent with backtracking,
//! so every accepted step increases the penalised log-likelihood.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::bank::{FitDiagnostics, FitMethod, FitSettings, FittedBank};
use crate::error::{Error, Result};
use crate::irt::{ItemParams, ModelFamily};
use crate::link::{item_params, probability_grad, raw_heads};
use crate::metrics::evaluate_probabilities;
use crate::nn::{bce_loss, logit};
use crate::dataset::ResponseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleConfig {
    pub family: ModelFamily,
    /// Initial step size; adapted by backtracking.
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step improves the mean log-likelihood by less.
    pub tolerance: f64,
    /// L2 penalty on abilities; pins the translation of the scale.
    pub ability_penalty: f64,
    /// L2 penalty pulling raw item heads toward the starting item
    /// `(a, b, c, d) = (1, 0, 0.05, 0.95)`.
    pub item_penalty: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            family: ModelFamily::FourPL,
            learning_rate: 1.0,
            max_iterations: 2000,
            tolerance: 1e-9,
            ability_penalty: 1e-4,
            item_penalty: 1e-2,
            seed: 0,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.max_iterations > 0
            && self.tolerance > 0.0
            && self.ability_penalty >= 0.0
            && self.ability_penalty.is_finite()
            && self.item_penalty >= 0.0
            && self.item_penalty.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid MLE config {self:?}")))
        }
    }
}

const GUESS_START: f64 = 0.05;
const FEASIBILITY_START: f64 = 0.95;
const MAX_HALVINGS: usize = 50;

fn start_params(family: ModelFamily, b: f64) -> ItemParams {
    ItemParams {
        a: 1.0,
        b,
        c: if family.has_guessing() { GUESS_START } else { 0.0 },
        d: if family.has_feasibility() { FEASIBILITY_START } else { 1.0 },
    }
}

struct Problem<'a> {
    matrix: &'a ResponseMatrix,
    family: ModelFamily,
    k: usize,
    ability_penalty: f64,
    item_penalty: f64,
    prior: Vec<f64>,
}

impl Problem<'_> {
    fn objective(&self, theta: &[f64], raw: &[f64]) -> f64 {
        let mut ll = 0.0;
        for e in self.matrix.entries() {
            let p = item_params(self.family, &raw[e.item * self.k..(e.item + 1) * self.k])
                .probability(theta[e.model]);
            ll -= bce_loss(p, e.outcome as f64).0;
        }
        ll - self.penalty(theta, raw)
    }

    fn penalty(&self, theta: &[f64], raw: &[f64]) -> f64 {
        let abil: f64 = theta.iter().map(|t| t * t).sum();
        let items: f64 = raw
            .chunks_exact(self.k)
            .flat_map(|r| r.iter().zip(&self.prior).map(|(x, p)| (x - p) * (x - p)))
            .sum();
        self.ability_penalty * abil + self.item_penalty * items
    }

    fn gradient(&self, theta: &[f64], raw: &[f64], g_theta: &mut [f64], g_raw: &mut [f64]) {
        for (g, t) in g_theta.iter_mut().zip(theta) {
            *g = -2.0 * self.ability_penalty * t;
        }
        for (r, (g, x)) in g_raw.iter_mut().zip(raw).enumerate() {
            *g = -2.0 * self.item_penalty * (x - self.prior[r % self.k]);
        }
        for e in self.matrix.entries() {
            let heads = e.item * self.k..(e.item + 1) * self.k;
            let pg = probability_grad(self.family, theta[e.model], &raw[heads.clone()]);
            let (_, dl_dp) = bce_loss(pg.p, e.outcome as f64);
            g_theta[e.model] -= dl_dp * pg.d_theta;
            for (g, d) in g_raw[heads].iter_mut().zip(&pg.d_heads) {
                *g -= dl_dp * d;
            }
        }
    }
}

fn smoothed_logit(correct: usize, total: usize) -> f64 {
    logit((correct as f64 + 0.5) / (total as f64 + 1.0))
}

/// Joint MLE of abilities and item parameters over every entry of `matrix`.
pub fn fit_mle(matrix: &ResponseMatrix, config: &MleConfig) -> Result<FittedBank> {
    config.validate()?;
    let (model_counts, item_counts) = matrix.observation_counts();
    let unobserved: Vec<String> = matrix
        .models()
        .iter()
        .zip(&model_counts)
        .filter(|(_, &n)| n == 0)
        .map(|(m, _)| format!("model `{m}`"))
        .chain(
            matrix
                .items()
                .iter()
                .zip(&item_counts)
                .filter(|(_, &n)| n == 0)
                .map(|(k, _)| format!("item `{k}`")),
        )
        .collect();
    if !unobserved.is_empty() {
        return Err(Error::InvalidData(format!(
            "no observations for {}",
            unobserved.join(", ")
        )));
    }
    if matrix.n_entries() == 0 {
        return Err(Error::InvalidData("empty response matrix".into()));
    }

    let family = config.family;
    let k = family.free_item_params();
    let mut model_correct = vec![0usize; matrix.n_models()];
    let mut item_correct = vec![0usize; matrix.n_items()];
    for e in matrix.entries() {
        let o = e.outcome as usize;
        model_correct[e.model] += o;
        item_correct[e.item] += o;
    }
    let mut theta: Vec<f64> = model_correct
        .iter()
        .zip(&model_counts)
        .map(|(&c, &n)| smoothed_logit(c, n))
        .collect();
    let mut raw: Vec<f64> = item_correct
        .iter()
        .zip(&item_counts)
        .flat_map(|(&c, &n)| raw_heads(family, &start_params(family, -smoothed_logit(c, n))))
        .collect();

    let problem = Problem {
        matrix,
        family,
        k,
        ability_penalty: config.ability_penalty,
        item_penalty: config.item_penalty,
        prior: raw_heads(family, &start_params(family, 0.0)),
    };
    // Per-coordinate step scale: the curvature of a sum grows with its
    // number of terms.
    let theta_scale: Vec<f64> = model_counts.iter().map(|&n| 1.0 / n as f64).collect();
    let raw_scale: Vec<f64> = item_counts
        .iter()
        .flat_map(|&n| std::iter::repeat_n(1.0 / n as f64, k))
        .collect();

    let n = matrix.n_entries() as f64;
    let mut current = problem.objective(&theta, &raw);
    if !current.is_finite() {
        return Err(Error::Numeric("non-finite log-likelihood at start".into()));
    }
    let mut g_theta = vec![0.0; theta.len()];
    let mut g_raw = vec![0.0; raw.len()];
    let mut cand_theta = theta.clone();
    let mut cand_raw = raw.clone();
    let mut step = config.learning_rate;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        problem.gradient(&theta, &raw, &mut g_theta, &mut g_raw);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            for i in 0..theta.len() {
                cand_theta[i] = theta[i] + step * theta_scale[i] * g_theta[i];
            }
            for i in 0..raw.len() {
                cand_raw[i] = raw[i] + step * raw_scale[i] * g_raw[i];
            }
            let value = problem.objective(&cand_theta, &cand_raw);
            if value.is_finite() && value >= current {
                accepted = Some(value);
                break;
            }
            step *= 0.5;
        }
        let Some(value) = accepted else {
            converged = true;
            break;
        };
        std::mem::swap(&mut theta, &mut cand_theta);
        std::mem::swap(&mut raw, &mut cand_raw);
        iterations += 1;
        let gain = (value - current) / n;
        current = value;
        step = (step * 1.5).min(config.learning_rate * 64.0);
        if iterations % 200 == 0 {
            debug!("iteration {iterations}: mean log-likelihood {:.8}", current / n);
        }
        if gain < config.tolerance {
            converged = true;
            break;
        }
    }
    if !current.is_finite() || theta.iter().chain(&raw).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("MLE diverged".into()));
    }
    if !converged {
        warn!("MLE stopped at max_iterations ({}) before reaching tolerance", config.max_iterations);
    }

    let params: Vec<ItemParams> = raw.chunks_exact(k).map(|r| item_params(family, r)).collect();
    let probs: Vec<f64> = matrix
        .entries()
        .iter()
        .map(|e| params[e.item].probability(theta[e.model]))
        .collect();
    let labels: Vec<bool> = matrix.entries().iter().map(|e| e.outcome == 1).collect();
    let train_loss = probs
        .iter()
        .zip(&labels)
        .map(|(&p, &y)| bce_loss(p, y as u8 as f64).0)
        .sum::<f64>()
        / n;
    let diagnostics = FitDiagnostics {
        train: Some(evaluate_probabilities(&probs, &labels)?),
        validation: None,
        train_loss: Some(train_loss),
        iterations: Some(iterations),
        best_epoch: None,
        converged: Some(converged),
        anchored: Some(config.ability_penalty > 0.0),
    };
    Ok(FittedBank::from_matrix(
        matrix,
        FitMethod::Mle,
        family,
        config.seed,
        Some(FitSettings::Mle(config.clone())),
        &theta,
        &params,
    )?
    .with_diagnostics(diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ResponseRecord;

    fn matrix(rows: &[&[u8]]) -> ResponseMatrix {
        let mut recs = Vec::new();
        for (m, row) in rows.iter().enumerate() {
            for (i, &o) in row.iter().enumerate() {
                recs.push(ResponseRecord {
                    model_id: format!("m{m}"),
                    benchmark_id: "b".into(),
                    item_id: format!("q{i}"),
                    outcome: o,
                });
            }
        }
        ResponseMatrix::from_records(recs).unwrap()
    }

    #[test]
    fn forced_ordering_one_pl() {
        let m = matrix(&[&[1, 1], &[0, 0]]);
        let config = MleConfig {
            family: ModelFamily::OnePL,
            ..MleConfig::default()
        };
        let bank = fit_mle(&m, &config).unwrap();
        assert!(bank.theta("m0").unwrap() > bank.theta("m1").unwrap());
        assert_eq!(bank.diagnostics.anchored, Some(true));
        assert_eq!(bank, fit_mle(&m, &config).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = matrix(&[&[1, 0, 1], &[0, 1, 1], &[1, 1, 0]]);
        for family in ModelFamily::ALL {
            let k = family.free_item_params();
            let problem = Problem {
                matrix: &m,
                family,
                k,
                ability_penalty: 0.3,
                item_penalty: 0.2,
                prior: raw_heads(family, &start_params(family, 0.0)),
            };
            let theta = vec![0.4, -0.9, 1.3];
            let raw: Vec<f64> = (0..3 * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut gt = vec![0.0; 3];
            let mut gr = vec![0.0; raw.len()];
            problem.gradient(&theta, &raw, &mut gt, &mut gr);
            let h = 1e-6;
            for i in 0..3 {
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (problem.objective(&up, &raw) - problem.objective(&dn, &raw)) / (2.0 * h);
                assert!((fd - gt[i]).abs() < 1e-6, "{family} theta {i}");
            }
            for i in 0..raw.len() {
                let (mut up, mut dn) = (raw.clone(), raw.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (problem.objective(&theta, &up) - problem.objective(&theta, &dn)) / (2.0 * h);
                assert!((fd - gr[i]).abs() < 1e-6, "{family} head {i}");
            }
        }
    }

    #[test]
    fn unanchored_fit_is_flagged() {
        let m = matrix(&[&[1, 0, 1, 0], &[1, 1, 0, 0], &[0, 1, 1, 1]]);
        let free = MleConfig {
            family: ModelFamily::OnePL,
            ability_penalty: 0.0,
            item_penalty: 0.0,
            ..MleConfig::default()
        };
        let bank = fit_mle(&m, &free).unwrap();
        assert_eq!(bank.diagnostics.anchored, Some(false));
        let anchored = fit_mle(
            &m,
            &MleConfig {
                ability_penalty: 1e-4,
                ..free
            },
        )
        .unwrap();
        assert_eq!(anchored.diagnostics.anchored, Some(true));
        assert_eq!(anchored.diagnostics.converged, Some(true));
    }

    #[test]
    fn rejects_bad_config() {
        let m = matrix(&[&[1, 0], &[0, 1]]);
        let bad = MleConfig {
            tolerance: 0.0,
            ..MleConfig::default()
        };
        assert!(fit_mle(&m, &bad).is_err());
    }
}
