//! Small hand-differentiated network pieces: dense layers, activations,
//! binary cross-entropy and Adam with decoupled weight decay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::logistic;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the loss.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn relu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    logistic(x)
}

#[inline]
pub fn sigmoid_derivative(x: f64) -> f64 {
    let s = logistic(x);
    s * (1.0 - s)
}

/// `ln(1 + e^x)`, stable for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn softplus_derivative(x: f64) -> f64 {
    logistic(x)
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Inverse of [`sigmoid`] for `p ∈ (0, 1)`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Binary cross-entropy of one prediction and its derivative `dL/dp`.
///
/// The derivative is evaluated at the clamped probability so saturated
/// predictions still receive a learning signal.
pub fn bce_loss(p: f64, y: f64) -> (f64, f64) {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let grad = -y / p + (1.0 - y) / (1.0 - p);
    (loss, grad)
}

/// Fully connected layer `y = Wx + b`, weights stored row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_biases: Vec<f64>,
}

impl DenseLayer {
    /// Uniform `±1/√fan_in` initialisation.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let biases = (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::assemble(in_dim, out_dim, weights, biases)
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::ShapeMismatch {
                expected: in_dim * out_dim,
                actual: weights.len(),
            });
        }
        if biases.len() != out_dim {
            return Err(Error::ShapeMismatch {
                expected: out_dim,
                actual: biases.len(),
            });
        }
        Ok(Self::assemble(in_dim, out_dim, weights, biases))
    }

    fn assemble(in_dim: usize, out_dim: usize, weights: Vec<f64>, biases: Vec<f64>) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            grad_weights: vec![0.0; weights.len()],
            grad_biases: vec![0.0; biases.len()],
            weights,
            biases,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(Error::ShapeMismatch {
                expected: self.in_dim,
                actual: input.len(),
            });
        }
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(input, &mut out);
        Ok(out)
    }

    pub(crate) fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, bias)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.biases))
        {
            *o = bias + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Forward pass for a one-hot input: column `index` of `W` plus `b`.
    pub fn forward_one_hot(&self, index: usize) -> Result<Vec<f64>> {
        if index >= self.in_dim {
            return Err(Error::InvalidArgument(format!(
                "one-hot index {index} out of range for input dimension {}",
                self.in_dim
            )));
        }
        let mut out = vec![0.0; self.out_dim];
        self.forward_one_hot_into(index, &mut out);
        Ok(out)
    }

    pub(crate) fn forward_one_hot_into(&self, index: usize, out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.weights[r * self.in_dim + index] + self.biases[r];
        }
    }

    /// Accumulates parameter gradients for `grad_out = dL/dy` and returns
    /// `dL/dx`.
    pub fn backward(&mut self, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        self.backward_into(input, grad_out, &mut grad_in);
        grad_in
    }

    pub(crate) fn backward_into(&mut self, input: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
        grad_in.iter_mut().for_each(|g| *g = 0.0);
        for (r, &go) in grad_out.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            self.grad_biases[r] += go;
            let row = r * self.in_dim;
            let w = &self.weights[row..row + self.in_dim];
            let gw = &mut self.grad_weights[row..row + self.in_dim];
            for c in 0..self.in_dim {
                gw[c] += go * input[c];
                grad_in[c] += go * w[c];
            }
        }
    }

    /// Backward pass for a one-hot input; only column `index` receives
    /// weight gradient.
    pub fn backward_one_hot(&mut self, index: usize, grad_out: &[f64]) {
        for (r, &go) in grad_out.iter().enumerate() {
            self.grad_biases[r] += go;
            self.grad_weights[r * self.in_dim + index] += go;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.iter_mut().for_each(|g| *g = 0.0);
        self.grad_biases.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay: each step also subtracts `lr · weight_decay · param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        for len in [params.len(), grads.len()] {
            if len != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for i in 0..n {
            let g = grads[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / bias1;
            let v_hat = v / bias2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + epsilon) + weight_decay * params[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn dense_identity_and_constants() {
        let layer =
            DenseLayer::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(layer.forward(&[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);

        let layer = DenseLayer::from_parts(2, 1, vec![1.0, 2.0], vec![0.5]).unwrap();
        assert_eq!(layer.forward(&[1.0, 1.0]).unwrap(), vec![3.5]);

        let layer = DenseLayer::from_parts(3, 1, vec![0.0; 3], vec![-1.25]).unwrap();
        assert_eq!(layer.forward(&[9.0, 2.0, -7.0]).unwrap(), vec![-1.25]);
    }

    #[test]
    fn dense_shape_errors() {
        let layer = DenseLayer::from_parts(2, 1, vec![1.0, 2.0], vec![0.5]).unwrap();
        assert!(matches!(
            layer.forward(&[1.0]),
            Err(Error::ShapeMismatch { expected: 2, actual: 1 })
        ));
        assert!(DenseLayer::from_parts(2, 2, vec![1.0], vec![0.0, 0.0]).is_err());
        assert!(layer.forward_one_hot(2).is_err());
    }

    #[test]
    fn one_hot_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::new(5, 3, &mut rng);
        let mut x = vec![0.0; 5];
        x[3] = 1.0;
        assert_eq!(layer.forward(&x).unwrap(), layer.forward_one_hot(3).unwrap());

        let mut a = layer.clone();
        let mut b = layer.clone();
        a.backward(&x, &[0.5, -1.0, 2.0]);
        b.backward_one_hot(3, &[0.5, -1.0, 2.0]);
        assert_eq!(a.grad_weights, b.grad_weights);
        assert_eq!(a.grad_biases, b.grad_biases);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = DenseLayer::new(16, 4, &mut ChaCha8Rng::seed_from_u64(1));
        let b = DenseLayer::new(16, 4, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.weights.iter().all(|w| w.abs() <= 0.25));
    }

    #[test]
    fn activation_values() {
        assert_eq!(relu(-2.0), 0.0);
        assert_eq!(relu(3.0), 3.0);
        assert_relative_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(800.0).is_finite());
        assert_relative_eq!(softplus_inverse(softplus(1.3)), 1.3, epsilon = 1e-12);
        assert_relative_eq!(sigmoid(logit(0.37)), 0.37, epsilon = 1e-15);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for k in -30..=30 {
            let x = k as f64 * 0.37 + 0.011;
            assert!((sigmoid_derivative(x) - central_difference(sigmoid, x)).abs() < 1e-6);
            assert!((softplus_derivative(x) - central_difference(softplus, x)).abs() < 1e-6);
            assert!((relu_derivative(x) - central_difference(relu, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn bce_values() {
        assert_relative_eq!(bce_loss(0.5, 1.0).0, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(bce_loss(0.9, 1.0).0, 0.105_360_515_657_826_3, epsilon = 1e-12);
        let (_, grad) = bce_loss(0.5, 1.0);
        assert_relative_eq!(grad, -2.0, epsilon = 1e-15);
        let fd = central_difference(|p| bce_loss(p, 1.0).0, 0.5);
        assert!((grad - fd).abs() < 1e-6);
        let fd0 = central_difference(|p| bce_loss(p, 0.0).0, 0.3);
        assert!((bce_loss(0.3, 0.0).1 - fd0).abs() < 1e-6);
    }

    #[test]
    fn bce_clamps() {
        let (loss, grad) = bce_loss(0.0, 1.0);
        assert!(loss.is_finite() && loss > 0.0);
        assert!(grad.is_finite());
        let (loss, _) = bce_loss(1.0, 1.0);
        assert!(loss > 0.0 && loss < 1e-6);
    }

    #[test]
    fn adam_first_step() {
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(1, config);
        let mut p = [0.0];
        state.step(&mut p, &[1.0]).unwrap();
        assert_relative_eq!(p[0], -0.003, epsilon = 1e-10);
        assert_eq!(state.steps_taken(), 1);
    }

    #[test]
    fn adam_zero_gradient_fixed_point() {
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(3, config);
        let mut p = [1.0, -2.0, 0.5];
        for _ in 0..10 {
            state.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_pure_decay() {
        let mut state = AdamState::new(1, AdamConfig::default());
        let mut p = [1.0];
        state.step(&mut p, &[0.0]).unwrap();
        assert_relative_eq!(1.0 - p[0], 3e-7, epsilon = 1e-15);
    }

    #[test]
    fn adam_without_moments_is_sign_descent() {
        let config = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-12,
            weight_decay: 0.0,
        };
        let mut state = AdamState::new(1, config);
        // Minimise (x - 3)^2 from x = 0: every step moves by lr toward 3.
        let mut x = [0.0];
        for k in 1..=10 {
            let g = 2.0 * (x[0] - 3.0);
            state.step(&mut x, &[g]).unwrap();
            assert_relative_eq!(x[0], 0.1 * k as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut state = AdamState::new(2, AdamConfig::default());
        assert!(state.step(&mut [0.0], &[0.0, 0.0]).is_err());
    }

    /// Random two-layer ReLU network with a weighted-sum loss; every analytic
    /// parameter gradient is compared with a central difference.
    #[test]
    fn layer_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let l1 = DenseLayer::new(4, 6, &mut rng);
            let l2 = DenseLayer::new(6, 3, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let head: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let loss = |l1: &DenseLayer, l2: &DenseLayer| -> f64 {
                let h: Vec<f64> = l1.forward(&x).unwrap().into_iter().map(relu).collect();
                let y = l2.forward(&h).unwrap();
                y.iter().zip(&head).map(|(a, b)| a * b).sum::<f64>().powi(2)
            };

            let mut a1 = l1.clone();
            let mut a2 = l2.clone();
            let pre = a1.forward(&x).unwrap();
            let h: Vec<f64> = pre.iter().copied().map(relu).collect();
            let y = a2.forward(&h).unwrap();
            let s: f64 = y.iter().zip(&head).map(|(a, b)| a * b).sum();
            let grad_y: Vec<f64> = head.iter().map(|w| 2.0 * s * w).collect();
            let grad_h = a2.backward(&h, &grad_y);
            let grad_pre: Vec<f64> = grad_h
                .iter()
                .zip(&pre)
                .map(|(g, z)| g * relu_derivative(*z))
                .collect();
            a1.backward(&x, &grad_pre);

            let h_step = 1e-6;
            let check = |analytic: f64, numeric: f64, what: &str| {
                let scale = analytic.abs().max(numeric.abs()).max(1e-3);
                assert!(
                    (analytic - numeric).abs() / scale < 1e-4,
                    "trial {trial} {what}: analytic {analytic} numeric {numeric}"
                );
            };
            for i in 0..l1.weights.len() {
                let (mut p, mut m) = (l1.clone(), l1.clone());
                p.weights[i] += h_step;
                m.weights[i] -= h_step;
                let numeric = (loss(&p, &l2) - loss(&m, &l2)) / (2.0 * h_step);
                check(a1.grad_weights[i], numeric, "l1 weight");
            }
            for i in 0..l2.biases.len() {
                let (mut p, mut m) = (l2.clone(), l2.clone());
                p.biases[i] += h_step;
                m.biases[i] -= h_step;
                let numeric = (loss(&l1, &p) - loss(&l1, &m)) / (2.0 * h_step);
                check(a2.grad_biases[i], numeric, "l2 bias");
            }
            for i in 0..l2.weights.len() {
                let (mut p, mut m) = (l2.clone(), l2.clone());
                p.weights[i] += h_step;
                m.weights[i] -= h_step;
                let numeric = (loss(&l1, &p) - loss(&l1, &m)) / (2.0 * h_step);
                check(a2.grad_weights[i], numeric, "l2 weight");
            }
        }
    }
}
