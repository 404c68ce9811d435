//! The fitted item bank: abilities, item parameters and fit metadata.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ItemKey, ResponseMatrix};
use crate::error::{Error, Result};
use crate::irt::{AbilityEstimate, ItemParams, ModelFamily};
use crate::metrics::PredictionEval;
use crate::mle::MleConfig;
use crate::psn::FitConfig;

pub const BANK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Psn,
    Mle,
    /// Ground truth emitted by the synthetic generator.
    Truth,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Psn => "psn",
            FitMethod::Mle => "mle",
            FitMethod::Truth => "truth",
        }
    }
}

impl std::str::FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psn" => Ok(FitMethod::Psn),
            "mle" => Ok(FitMethod::Mle),
            other => Err(Error::InvalidArgument(format!(
                "unknown fit method `{other}` (expected psn or mle)"
            ))),
        }
    }
}

/// Estimator settings used for a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitSettings {
    Psn(FitConfig),
    Mle(MleConfig),
}

impl FitSettings {
    pub fn method(&self) -> FitMethod {
        match self {
            FitSettings::Psn(_) => FitMethod::Psn,
            FitSettings::Mle(_) => FitMethod::Mle,
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            FitSettings::Psn(c) => c.family,
            FitSettings::Mle(c) => c.family,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            FitSettings::Psn(c) => c.seed,
            FitSettings::Mle(c) => c.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            FitSettings::Psn(c) => c.seed = seed,
            FitSettings::Mle(c) => c.seed = seed,
        }
        out
    }

    /// Fits on every entry of `matrix` (no validation split).
    pub fn fit_full(&self, matrix: &ResponseMatrix) -> Result<FittedBank> {
        match self {
            FitSettings::Psn(c) => {
                crate::psn::train(matrix, &crate::dataset::SplitAssignment::all_train(matrix), c)
            }
            FitSettings::Mle(c) => crate::mle::fit_mle(matrix, c),
        }
    }

    /// Fits on the given entry subset of `matrix`.
    pub fn fit_entries(&self, matrix: &ResponseMatrix, entries: &[usize]) -> Result<FittedBank> {
        self.fit_full(&matrix.select_entries(entries)?)
    }
}

/// Training summary stored with a bank.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PredictionEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PredictionEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    /// Epochs (PSN) or accepted iterations (MLE) run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Epoch whose weights were kept (PSN).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    /// `false` when nothing pins the translation of the ability scale (MLE).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchored: Option<bool>,
}

/// One item row of the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankItem {
    pub benchmark: String,
    pub item: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl BankItem {
    pub fn key(&self) -> ItemKey {
        ItemKey::new(self.benchmark.clone(), self.item.clone())
    }

    pub fn params(&self) -> ItemParams {
        ItemParams {
            a: self.a,
            b: self.b,
            c: self.c,
            d: self.d,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BankDocument {
    version: u32,
    method: FitMethod,
    family: ModelFamily,
    seed: u64,
    #[serde(default)]
    config: Option<FitSettings>,
    #[serde(default)]
    metrics: FitDiagnostics,
    abilities: Vec<AbilityEstimate>,
    items: Vec<BankItem>,
}

/// Immutable result of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedBank {
    pub method: FitMethod,
    pub family: ModelFamily,
    pub seed: u64,
    pub config: Option<FitSettings>,
    pub diagnostics: FitDiagnostics,
    abilities: Vec<AbilityEstimate>,
    items: Vec<BankItem>,
    model_index: HashMap<String, usize>,
    item_index: HashMap<ItemKey, usize>,
}

impl FittedBank {
    pub fn new(
        method: FitMethod,
        family: ModelFamily,
        seed: u64,
        config: Option<FitSettings>,
        abilities: Vec<AbilityEstimate>,
        items: Vec<BankItem>,
    ) -> Result<Self> {
        let mut model_index = HashMap::with_capacity(abilities.len());
        for (i, ab) in abilities.iter().enumerate() {
            if !ab.theta.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite ability for model `{}`",
                    ab.model_id
                )));
            }
            if model_index.insert(ab.model_id.clone(), i).is_some() {
                return Err(Error::InvalidData(format!(
                    "model `{}` appears twice in bank",
                    ab.model_id
                )));
            }
        }
        let mut item_index = HashMap::with_capacity(items.len());
        for (i, it) in items.iter().enumerate() {
            let params = it.params();
            params.validate()?;
            params.check_family(family).map_err(|_| {
                Error::InvalidData(format!(
                    "item {} has parameters {params:?} outside the {family} family",
                    it.key()
                ))
            })?;
            if item_index.insert(it.key(), i).is_some() {
                return Err(Error::InvalidData(format!(
                    "item {} appears twice in bank",
                    it.key()
                )));
            }
        }
        Ok(FittedBank {
            method,
            family,
            seed,
            config,
            diagnostics: FitDiagnostics::default(),
            abilities,
            items,
            model_index,
            item_index,
        })
    }

    /// Builds a bank whose abilities and items follow `matrix` order.
    pub fn from_matrix(
        matrix: &ResponseMatrix,
        method: FitMethod,
        family: ModelFamily,
        seed: u64,
        config: Option<FitSettings>,
        thetas: &[f64],
        params: &[ItemParams],
    ) -> Result<Self> {
        if thetas.len() != matrix.n_models() {
            return Err(Error::ShapeMismatch {
                expected: matrix.n_models(),
                actual: thetas.len(),
            });
        }
        if params.len() != matrix.n_items() {
            return Err(Error::ShapeMismatch {
                expected: matrix.n_items(),
                actual: params.len(),
            });
        }
        let abilities = matrix
            .models()
            .iter()
            .zip(thetas)
            .map(|(m, &theta)| AbilityEstimate {
                model_id: m.clone(),
                theta,
            })
            .collect();
        let items = matrix
            .items()
            .iter()
            .zip(params)
            .map(|(k, p)| BankItem {
                benchmark: k.benchmark.clone(),
                item: k.item.clone(),
                a: p.a,
                b: p.b,
                c: p.c,
                d: p.d,
            })
            .collect();
        Self::new(method, family, seed, config, abilities, items)
    }

    pub fn with_diagnostics(mut self, diagnostics: FitDiagnostics) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn abilities(&self) -> &[AbilityEstimate] {
        &self.abilities
    }

    pub fn items(&self) -> &[BankItem] {
        &self.items
    }

    pub fn theta(&self, model_id: &str) -> Result<f64> {
        self.model_index
            .get(model_id)
            .map(|&i| self.abilities[i].theta)
            .ok_or_else(|| Error::UnknownId {
                kind: "model",
                id: model_id.to_owned(),
            })
    }

    pub fn item_params(&self, key: &ItemKey) -> Result<ItemParams> {
        self.item_index
            .get(key)
            .map(|&i| self.items[i].params())
            .ok_or_else(|| Error::UnknownId {
                kind: "item",
                id: key.to_string(),
            })
    }

    pub fn contains_model(&self, model_id: &str) -> bool {
        self.model_index.contains_key(model_id)
    }

    pub fn contains_item(&self, key: &ItemKey) -> bool {
        self.item_index.contains_key(key)
    }

    /// Largest ability in the bank.
    pub fn theta_max(&self) -> Option<f64> {
        self.abilities.iter().map(|a| a.theta).reduce(f64::max)
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.abilities.iter().map(|a| a.theta).collect()
    }

    /// `P(correct)` for a (model, item) pair.
    pub fn predict(&self, model_id: &str, key: &ItemKey) -> Result<f64> {
        Ok(self.item_params(key)?.probability(self.theta(model_id)?))
    }

    /// Abilities and item parameters in `matrix` order.
    pub fn aligned(&self, matrix: &ResponseMatrix) -> Result<(Vec<f64>, Vec<ItemParams>)> {
        let thetas = matrix
            .models()
            .iter()
            .map(|m| self.theta(m))
            .collect::<Result<Vec<_>>>()?;
        let params = matrix
            .items()
            .iter()
            .map(|k| self.item_params(k))
            .collect::<Result<Vec<_>>>()?;
        Ok((thetas, params))
    }

    /// Probability for each listed entry of `matrix`.
    pub fn predict_entries(&self, matrix: &ResponseMatrix, entries: &[usize]) -> Result<Vec<f64>> {
        let (thetas, params) = self.aligned(matrix)?;
        entries
            .iter()
            .map(|&i| {
                let e = matrix.entries().get(i).ok_or_else(|| {
                    Error::InvalidArgument(format!("entry index {i} out of range"))
                })?;
                Ok(params[e.item].probability(thetas[e.model]))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = BankDocument {
            version: BANK_FORMAT_VERSION,
            method: self.method,
            family: self.family,
            seed: self.seed,
            config: self.config.clone(),
            metrics: self.diagnostics.clone(),
            abilities: self.abilities.clone(),
            items: self.items.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BankDocument = serde_json::from_str(text)?;
        if doc.version != BANK_FORMAT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported bank version {} (expected {BANK_FORMAT_VERSION})",
                doc.version
            )));
        }
        Ok(Self::new(
            doc.method,
            doc.family,
            doc.seed,
            doc.config,
            doc.abilities,
            doc.items,
        )?
        .with_diagnostics(doc.metrics))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bank(thetas: &[f64], params: &[ItemParams]) -> FittedBank {
        let abilities = thetas
            .iter()
            .enumerate()
            .map(|(i, &theta)| AbilityEstimate {
                model_id: format!("m{i}"),
                theta,
            })
            .collect();
        let items = params
            .iter()
            .enumerate()
            .map(|(i, p)| BankItem {
                benchmark: "bench".into(),
                item: format!("q{i}"),
                a: p.a,
                b: p.b,
                c: p.c,
                d: p.d,
            })
            .collect();
        FittedBank::new(FitMethod::Truth, ModelFamily::FourPL, 3, None, abilities, items).unwrap()
    }

    #[test]
    fn predict_extremes() {
        let b = bank(
            &[8.0, 0.3],
            &[
                ItemParams::new(1.5, 0.0, 0.0, 1.0).unwrap(),
                ItemParams::new(1.0, 0.3, 0.2, 0.8).unwrap(),
            ],
        );
        assert!(b.predict("m0", &ItemKey::new("bench", "q0")).unwrap() > 0.99);
        let mid = b.predict("m1", &ItemKey::new("bench", "q1")).unwrap();
        assert!((mid - 0.5).abs() < 1e-15);
        assert!(matches!(
            b.predict("nobody", &ItemKey::new("bench", "q0")),
            Err(Error::UnknownId { kind: "model", .. })
        ));
        assert!(b.predict("m0", &ItemKey::new("other", "q0")).is_err());
        assert_eq!(b.theta_max(), Some(8.0));
    }

    #[test]
    fn rejects_duplicates_and_family_violations() {
        let p = ItemParams::new(1.2, 0.0, 0.1, 0.9).unwrap();
        let item = BankItem {
            benchmark: "x".into(),
            item: "y".into(),
            a: p.a,
            b: p.b,
            c: p.c,
            d: p.d,
        };
        let ab = AbilityEstimate {
            model_id: "m".into(),
            theta: 0.0,
        };
        assert!(FittedBank::new(
            FitMethod::Psn,
            ModelFamily::TwoPL,
            0,
            None,
            vec![ab.clone()],
            vec![item.clone()]
        )
        .is_err());
        assert!(FittedBank::new(
            FitMethod::Psn,
            ModelFamily::FourPL,
            0,
            None,
            vec![ab.clone(), ab.clone()],
            vec![item.clone()]
        )
        .is_err());
        assert!(FittedBank::new(
            FitMethod::Psn,
            ModelFamily::FourPL,
            0,
            None,
            vec![ab],
            vec![item.clone(), item]
        )
        .is_err());
    }

    #[test]
    fn rejects_wrong_version() {
        let b = bank(&[0.0], &[ItemParams::rasch(0.0)]);
        let text = b.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(FittedBank::from_json(&text).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_exact(
            thetas in prop::collection::vec(-1e3f64..1e3, 1..6),
            raw in prop::collection::vec((1e-6f64..50.0, -1e3f64..1e3, 0.0f64..1.0, 0.0f64..1.0), 1..6),
        ) {
            let params: Vec<ItemParams> = raw
                .into_iter()
                .map(|(a, b, x, y)| {
                    let (c, d) = if x <= y { (x, y) } else { (y, x) };
                    ItemParams::new(a, b, c, d).unwrap()
                })
                .collect();
            let mut b = bank(&thetas, &params);
            b.diagnostics.train_loss = Some(thetas[0] / 3.0);
            let back = FittedBank::from_json(&b.to_json().unwrap()).unwrap();
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(back.to_json().unwrap(), b.to_json().unwrap());
        }
    }
}
