//! Pseudo-siamese IRT estimator.
//!
//! A model tower maps a one-hot model id to `θ`; an item tower maps a one-hot
//! item id to raw parameter heads. Both are `Dense → ReLU → Dense → ReLU →
//! Dense`. The towers are joined by the logistic layer in [`crate::link`] and
//! trained end to end on binary cross-entropy.

use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{FitDiagnostics, FitMethod, FitSettings, FittedBank};
use crate::dataset::{ResponseMatrix, SplitAssignment};
use crate::error::{Error, Result};
use crate::irt::{ItemParams, ModelFamily};
use crate::link::{item_params, probability_grad};
use crate::metrics::{evaluate_probabilities, f1_score};
use crate::nn::{bce_loss, relu, relu_derivative, AdamConfig, AdamState, DenseLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub family: ModelFamily,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-F1 improvement before stopping.
    pub patience: usize,
    /// Epoch count when there is no validation set.
    pub full_data_epochs: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            family: ModelFamily::FourPL,
            learning_rate: 0.003,
            weight_decay: 1e-4,
            batch_size: 512,
            max_epochs: 100,
            patience: 5,
            full_data_epochs: 30,
            hidden1: 64,
            hidden2: 32,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate > 0.0 && self.learning_rate.is_finite()),
            ("weight_decay", self.weight_decay >= 0.0 && self.weight_decay.is_finite()),
            ("batch_size", self.batch_size > 0),
            ("max_epochs", self.max_epochs > 0),
            ("patience", self.patience > 0),
            ("full_data_epochs", self.full_data_epochs > 0),
            ("hidden1", self.hidden1 > 0),
            ("hidden2", self.hidden2 > 0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::InvalidArgument(format!(
                "fit config `{name}` out of range"
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Activations of one tower pass, kept for backprop.
#[derive(Debug, Clone, Default)]
struct TowerCache {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

/// Three dense layers over a one-hot input; the first is a column lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub layers: [DenseLayer; 3],
}

impl Tower {
    fn new(inputs: usize, h1: usize, h2: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Tower {
            layers: [
                DenseLayer::new(inputs, h1, rng),
                DenseLayer::new(h1, h2, rng),
                DenseLayer::new(h2, outputs, rng),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[2].out_dim()
    }

    fn cache(&self) -> TowerCache {
        TowerCache {
            z1: vec![0.0; self.layers[0].out_dim()],
            h1: vec![0.0; self.layers[0].out_dim()],
            z2: vec![0.0; self.layers[1].out_dim()],
            h2: vec![0.0; self.layers[1].out_dim()],
            out: vec![0.0; self.layers[2].out_dim()],
        }
    }

    fn forward(&self, index: usize, cache: &mut TowerCache) {
        self.layers[0].forward_one_hot_into(index, &mut cache.z1);
        for (h, &z) in cache.h1.iter_mut().zip(&cache.z1) {
            *h = relu(z);
        }
        self.layers[1].forward_into(&cache.h1, &mut cache.z2);
        for (h, &z) in cache.h2.iter_mut().zip(&cache.z2) {
            *h = relu(z);
        }
        self.layers[2].forward_into(&cache.h2, &mut cache.out);
    }

    fn output(&self, index: usize) -> Vec<f64> {
        let mut cache = self.cache();
        self.forward(index, &mut cache);
        cache.out
    }

    fn backward(&mut self, index: usize, cache: &TowerCache, grad_out: &[f64], scratch: &mut Scratch) {
        let [l1, l2, l3] = &mut self.layers;
        scratch.g2.resize(l3.in_dim(), 0.0);
        l3.backward_into(&cache.h2, grad_out, &mut scratch.g2);
        for (g, &z) in scratch.g2.iter_mut().zip(&cache.z2) {
            *g *= relu_derivative(z);
        }
        scratch.g1.resize(l2.in_dim(), 0.0);
        l2.backward_into(&cache.h1, &scratch.g2, &mut scratch.g1);
        for (g, &z) in scratch.g1.iter_mut().zip(&cache.z1) {
            *g *= relu_derivative(z);
        }
        l1.backward_one_hot(index, &scratch.g1);
    }

    fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(DenseLayer::zero_grad);
    }

    fn tensors(&self) -> impl Iterator<Item = (&Vec<f64>, &Vec<f64>)> {
        self.layers
            .iter()
            .flat_map(|l| [(&l.weights, &l.grad_weights), (&l.biases, &l.grad_biases)])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &mut Vec<f64>)> {
        self.layers.iter_mut().flat_map(|l| {
            let DenseLayer {
                weights,
                biases,
                grad_weights,
                grad_biases,
                ..
            } = l;
            [(weights, grad_weights), (biases, grad_biases)]
        })
    }
}

#[derive(Debug, Default)]
struct Scratch {
    g1: Vec<f64>,
    g2: Vec<f64>,
}

/// Both towers plus the family that fixes the item head count.
#[derive(Debug, Clone, PartialEq)]
pub struct PsnArchitecture {
    pub family: ModelFamily,
    pub model_net: Tower,
    pub item_net: Tower,
}

impl PsnArchitecture {
    /// Seeded initialisation sized to `matrix`.
    pub fn build(matrix: &ResponseMatrix, config: &FitConfig) -> Result<Self> {
        config.validate()?;
        if matrix.n_models() < 2 || matrix.n_items() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 models and 2 items, got {} and {}",
                matrix.n_models(),
                matrix.n_items()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model_net = Tower::new(matrix.n_models(), config.hidden1, config.hidden2, 1, &mut rng);
        let item_net = Tower::new(
            matrix.n_items(),
            config.hidden1,
            config.hidden2,
            config.family.free_item_params(),
            &mut rng,
        );
        Ok(PsnArchitecture {
            family: config.family,
            model_net,
            item_net,
        })
    }

    pub fn n_models(&self) -> usize {
        self.model_net.input_dim()
    }

    pub fn n_items(&self) -> usize {
        self.item_net.input_dim()
    }

    /// `(θ, item parameters, P(correct))` for one pair.
    pub fn forward(&self, model_index: usize, item_index: usize) -> Result<(f64, ItemParams, f64)> {
        if model_index >= self.n_models() {
            return Err(Error::InvalidArgument(format!(
                "model index {model_index} out of range ({} models)",
                self.n_models()
            )));
        }
        if item_index >= self.n_items() {
            return Err(Error::InvalidArgument(format!(
                "item index {item_index} out of range ({} items)",
                self.n_items()
            )));
        }
        let theta = self.model_net.output(model_index)[0];
        let params = item_params(self.family, &self.item_net.output(item_index));
        Ok((theta, params, params.probability(theta)))
    }

    pub fn abilities(&self) -> Vec<f64> {
        (0..self.n_models())
            .map(|m| self.model_net.output(m)[0])
            .collect()
    }

    pub fn item_parameters(&self) -> Vec<ItemParams> {
        (0..self.n_items())
            .map(|i| item_params(self.family, &self.item_net.output(i)))
            .collect()
    }

    fn check_matrix(&self, matrix: &ResponseMatrix) -> Result<()> {
        if matrix.n_models() != self.n_models() || matrix.n_items() != self.n_items() {
            return Err(Error::InvalidArgument(format!(
                "network sized for {}×{}, matrix is {}×{}",
                self.n_models(),
                self.n_items(),
                matrix.n_models(),
                matrix.n_items()
            )));
        }
        Ok(())
    }

    /// Probabilities for the listed entries under the current weights.
    pub fn predict_entries(&self, matrix: &ResponseMatrix, entries: &[usize]) -> Result<Vec<f64>> {
        self.check_matrix(matrix)?;
        let thetas = self.abilities();
        let params = self.item_parameters();
        Ok(entries
            .iter()
            .map(|&i| {
                let e = matrix.entries()[i];
                params[e.item].probability(thetas[e.model])
            })
            .collect())
    }

    /// Mean BCE over the listed entries.
    pub fn loss(&self, matrix: &ResponseMatrix, entries: &[usize]) -> Result<f64> {
        let probs = self.predict_entries(matrix, entries)?;
        let total: f64 = probs
            .iter()
            .zip(entries)
            .map(|(&p, &i)| bce_loss(p, matrix.entries()[i].outcome as f64).0)
            .sum();
        Ok(total / entries.len().max(1) as f64)
    }

    /// Mean BCE over `entries`; leaves its gradient in the layer accumulators
    /// (previous contents are discarded).
    pub fn loss_and_gradient(&mut self, matrix: &ResponseMatrix, entries: &[usize]) -> Result<f64> {
        self.check_matrix(matrix)?;
        self.model_net.zero_grad();
        self.item_net.zero_grad();
        let mut work = BatchWork::default();
        self.accumulate_batch(matrix, entries, &mut work)
    }

    fn accumulate_batch(
        &mut self,
        matrix: &ResponseMatrix,
        entries: &[usize],
        work: &mut BatchWork,
    ) -> Result<f64> {
        if entries.is_empty() {
            return Ok(0.0);
        }
        work.reset();
        let scale = 1.0 / entries.len() as f64;
        let k = self.family.free_item_params();

        // Each distinct model/item goes through its tower once per batch.
        for &i in entries {
            let e = matrix.entries()[i];
            if let std::collections::hash_map::Entry::Vacant(slot) = work.model_slot.entry(e.model) {
                slot.insert(work.models.len());
                work.models.push(e.model);
            }
            if let std::collections::hash_map::Entry::Vacant(slot) = work.item_slot.entry(e.item) {
                slot.insert(work.items.len());
                work.items.push(e.item);
            }
        }
        grow(&mut work.model_caches, work.models.len(), || self.model_net.cache());
        grow(&mut work.item_caches, work.items.len(), || self.item_net.cache());
        for (cache, &m) in work.model_caches.iter_mut().zip(&work.models) {
            self.model_net.forward(m, cache);
        }
        for (cache, &it) in work.item_caches.iter_mut().zip(&work.items) {
            self.item_net.forward(it, cache);
        }
        work.model_grads.clear();
        work.model_grads.resize(work.models.len(), 0.0);
        work.item_grads.clear();
        work.item_grads.resize(work.items.len() * k, 0.0);

        let mut total = 0.0;
        for &i in entries {
            let e = matrix.entries()[i];
            let ms = work.model_slot[&e.model];
            let is = work.item_slot[&e.item];
            let theta = work.model_caches[ms].out[0];
            let raw = &work.item_caches[is].out;
            let g = probability_grad(self.family, theta, raw);
            let (loss, dl_dp) = bce_loss(g.p, e.outcome as f64);
            total += loss;
            let w = dl_dp * scale;
            work.model_grads[ms] += w * g.d_theta;
            for (acc, d) in work.item_grads[is * k..(is + 1) * k].iter_mut().zip(&g.d_heads) {
                *acc += w * d;
            }
        }
        let mut scratch = Scratch::default();
        for (s, &m) in work.models.iter().enumerate() {
            let grad = [work.model_grads[s]];
            self.model_net.backward(m, &work.model_caches[s], &grad, &mut scratch);
        }
        for (s, &it) in work.items.iter().enumerate() {
            let grad = &work.item_grads[s * k..(s + 1) * k];
            self.item_net.backward(it, &work.item_caches[s], grad, &mut scratch);
        }
        Ok(total * scale)
    }

    pub fn parameter_count(&self) -> usize {
        self.model_net
            .tensors()
            .chain(self.item_net.tensors())
            .map(|(p, _)| p.len())
            .sum()
    }

    /// All weights and biases, model tower first.
    pub fn parameters(&self) -> Vec<f64> {
        self.model_net
            .tensors()
            .chain(self.item_net.tensors())
            .flat_map(|(p, _)| p.iter().copied())
            .collect()
    }

    /// Gradients in [`Self::parameters`] order.
    pub fn gradients(&self) -> Vec<f64> {
        self.model_net
            .tensors()
            .chain(self.item_net.tensors())
            .flat_map(|(_, g)| g.iter().copied())
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let n = self.parameter_count();
        if values.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        let mut offset = 0;
        for (p, _) in self.model_net.tensors_mut().chain(self.item_net.tensors_mut()) {
            let len = p.len();
            p.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    fn optimizers(&self, config: AdamConfig) -> Vec<AdamState> {
        self.model_net
            .tensors()
            .chain(self.item_net.tensors())
            .map(|(p, _)| AdamState::new(p.len(), config))
            .collect()
    }

    fn step(&mut self, optimizers: &mut [AdamState]) -> Result<()> {
        for ((p, g), opt) in self
            .model_net
            .tensors_mut()
            .chain(self.item_net.tensors_mut())
            .zip(optimizers.iter_mut())
        {
            opt.step(p, g)?;
        }
        Ok(())
    }

    /// One pass over `train` in shuffled mini-batches. Returns mean batch loss.
    #[allow(clippy::too_many_arguments)]
    fn train_epoch(
        &mut self,
        matrix: &ResponseMatrix,
        train: &mut [usize],
        batch_size: usize,
        optimizers: &mut [AdamState],
        rng: &mut ChaCha8Rng,
        epoch: usize,
        work: &mut BatchWork,
    ) -> Result<f64> {
        train.shuffle(rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, batch) in train.chunks(batch_size).enumerate() {
            self.model_net.zero_grad();
            self.item_net.zero_grad();
            let loss = self.accumulate_batch(matrix, batch, work)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            self.step(optimizers)?;
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        Ok(total / seen as f64)
    }

    /// Bank from the current weights.
    pub fn to_bank(&self, matrix: &ResponseMatrix, config: &FitConfig) -> Result<FittedBank> {
        self.check_matrix(matrix)?;
        FittedBank::from_matrix(
            matrix,
            FitMethod::Psn,
            self.family,
            config.seed,
            Some(FitSettings::Psn(config.clone())),
            &self.abilities(),
            &self.item_parameters(),
        )
    }
}

fn grow<T>(v: &mut Vec<T>, len: usize, make: impl FnMut() -> T) {
    if v.len() < len {
        v.resize_with(len, make);
    }
}

#[derive(Default)]
struct BatchWork {
    model_slot: HashMap<usize, usize>,
    item_slot: HashMap<usize, usize>,
    models: Vec<usize>,
    items: Vec<usize>,
    model_caches: Vec<TowerCache>,
    item_caches: Vec<TowerCache>,
    model_grads: Vec<f64>,
    item_grads: Vec<f64>,
}

impl BatchWork {
    fn reset(&mut self) {
        self.model_slot.clear();
        self.item_slot.clear();
        self.models.clear();
        self.items.clear();
    }
}

fn labels(matrix: &ResponseMatrix, entries: &[usize]) -> Vec<bool> {
    entries
        .iter()
        .map(|&i| matrix.entries()[i].outcome == 1)
        .collect()
}

fn validation_f1(arch: &PsnArchitecture, matrix: &ResponseMatrix, entries: &[usize]) -> Result<f64> {
    let preds: Vec<bool> = arch
        .predict_entries(matrix, entries)?
        .into_iter()
        .map(|p| p >= 0.5)
        .collect();
    f1_score(&preds, &labels(matrix, entries))
}

/// Trains on `split.train`, early-stopping on validation F1 (best weights
/// are restored, earlier epoch wins ties). With an empty validation set the
/// run lasts exactly `full_data_epochs`.
pub fn train_architecture(
    matrix: &ResponseMatrix,
    split: &SplitAssignment,
    config: &FitConfig,
) -> Result<(PsnArchitecture, FitDiagnostics)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidData("empty training set".into()));
    }
    if let Some(&bad) = split
        .train
        .iter()
        .chain(&split.validation)
        .find(|&&i| i >= matrix.n_entries())
    {
        return Err(Error::InvalidArgument(format!(
            "split entry {bad} out of range for a matrix with {} entries",
            matrix.n_entries()
        )));
    }
    let mut arch = PsnArchitecture::build(matrix, config)?;
    let mut optimizers = arch.optimizers(config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut train = split.train.clone();
    let mut work = BatchWork::default();

    let full_data = split.validation.is_empty();
    let epochs = if full_data {
        config.full_data_epochs
    } else {
        config.max_epochs
    };
    let mut best: Option<(f64, usize, PsnArchitecture)> = None;
    let mut ran = 0;
    for epoch in 1..=epochs {
        let loss = arch.train_epoch(
            matrix,
            &mut train,
            config.batch_size,
            &mut optimizers,
            &mut rng,
            epoch,
            &mut work,
        )?;
        ran = epoch;
        if full_data {
            debug!("epoch {epoch}: train loss {loss:.6}");
            continue;
        }
        let f1 = validation_f1(&arch, matrix, &split.validation)?;
        debug!("epoch {epoch}: train loss {loss:.6}, validation F1 {f1:.6}");
        match &best {
            Some((best_f1, best_epoch, _)) if f1 <= *best_f1 => {
                if epoch - best_epoch >= config.patience {
                    info!("early stop at epoch {epoch}; best epoch {best_epoch} (F1 {best_f1:.6})");
                    break;
                }
            }
            _ => best = Some((f1, epoch, arch.clone())),
        }
    }
    let best_epoch = match best {
        Some((_, epoch, weights)) => {
            arch = weights;
            epoch
        }
        None => ran,
    };

    let train_probs = arch.predict_entries(matrix, &split.train)?;
    let train_labels = labels(matrix, &split.train);
    let train_loss = train_probs
        .iter()
        .zip(&train_labels)
        .map(|(&p, &y)| bce_loss(p, y as u8 as f64).0)
        .sum::<f64>()
        / train_probs.len() as f64;
    let validation = if full_data {
        None
    } else {
        let probs = arch.predict_entries(matrix, &split.validation)?;
        Some(evaluate_probabilities(&probs, &labels(matrix, &split.validation))?)
    };
    let diagnostics = FitDiagnostics {
        train: Some(evaluate_probabilities(&train_probs, &train_labels)?),
        validation,
        train_loss: Some(train_loss),
        iterations: Some(ran),
        best_epoch: Some(best_epoch),
        converged: None,
        anchored: None,
    };
    Ok((arch, diagnostics))
}

pub fn train(matrix: &ResponseMatrix, split: &SplitAssignment, config: &FitConfig) -> Result<FittedBank> {
    let (arch, diagnostics) = train_architecture(matrix, split, config)?;
    Ok(arch.to_bank(matrix, config)?.with_diagnostics(diagnostics))
}
