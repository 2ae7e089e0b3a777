//! Single-layer neural network landscape with a strict saddle at the origin.
//!
//! The model is a linear hidden layer `W₂` followed by a linear output layer
//! `w₁` and a logistic output, trained with cross-entropy and ridge
//! regularization on both layers:
//!
//! `J(w₁, W₂) = E log(1 + exp(-γ · w₁ᵀ W₂ h)) + (reg/2)(‖w₁‖² + ‖W₂‖_F²)`
//!
//! Features are Gaussian, `h ~ N(γ·shift·1, I)`, labels `γ = ±1` equiprobable.
//! Since the logit `w₁ᵀW₂h` only enters through the scalar `γ·w₁ᵀW₂h`, both
//! classes collapse onto one Gaussian expectation: with `a = W₂ᵀw₁`,
//!
//! `J = F(shift·1ᵀa, ‖a‖²) + reg terms`,  `F(m, v) = E g(m + √v·T)`,
//!
//! for `T ~ N(0,1)` and `g(y) = log(1 + e^{-y})`. `F` and its partials are
//! evaluated with Gauss–Hermite quadrature, so value and gradient are exact
//! population quantities up to quadrature truncation (~1e-12). The
//! parametrization through `v = ‖a‖²` (not `‖a‖`) keeps everything smooth at
//! `a = 0`, using `∂F/∂v = E[g''(m + √v·T)]/2`.
//!
//! The origin is the model's single strict saddle: the gradient vanishes by
//! bilinearity of `a` in `(w₁, W₂)`, while the mean-shift term contributes a
//! negative curvature direction as soon as `reg < (shift/2)·√M`.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::quadrature;
use super::{LossModel, Smoothness};

#[derive(Debug, Clone)]
pub struct NNSaddleLoss {
    /// Feature dimension M; the flat parameter vector is `[w₁; rows of W₂]`
    /// with dimension `M + M²`.
    features: usize,
    /// Ridge coefficient on both layers.
    reg: f64,
    /// Class-conditional mean shift: `h ~ N(γ·shift·1, I)`.
    shift: f64,
}

/// Numerically stable `log(1 + exp(-y))`.
fn softplus_neg(y: f64) -> f64 {
    (-y).max(0.0) + (-y.abs()).exp().ln_1p()
}

/// Logistic function.
fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

impl NNSaddleLoss {
    pub fn new(features: usize, reg: f64, shift: f64) -> Self {
        assert!(features >= 1);
        NNSaddleLoss {
            features,
            reg,
            shift,
        }
    }

    /// Default regularization 0.01 and class shift 0.5.
    pub fn with_defaults(features: usize) -> Self {
        NNSaddleLoss::new(features, 0.01, 0.5)
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// The origin stays a strict saddle while `reg` is below this value.
    pub fn saddle_reg_threshold(&self) -> f64 {
        0.5 * self.shift * (self.features as f64).sqrt()
    }

    fn split<'a>(&self, w: &'a DVector<f64>) -> (&'a [f64], &'a [f64]) {
        let m = self.features;
        let slice = w.as_slice();
        (&slice[..m], &slice[m..])
    }

    /// `a = W₂ᵀ w₁`, with `W₂` packed row-major after `w₁`.
    fn hidden_projection(&self, w1: &[f64], w2: &[f64]) -> DVector<f64> {
        let m = self.features;
        let mut a = DVector::zeros(m);
        for i in 0..m {
            let row = &w2[i * m..(i + 1) * m];
            for j in 0..m {
                a[j] += row[j] * w1[i];
            }
        }
        a
    }

    /// `F(m, v)` and its partials in `(m, v)` at `m = shift·1ᵀa`, `v = ‖a‖²`.
    fn data_terms(&self, a: &DVector<f64>) -> (f64, f64, f64) {
        let mean = self.shift * a.iter().sum::<f64>();
        let std = a.norm();
        let rule = quadrature::default_rule();
        let value = rule.standard_normal_mean(|t| softplus_neg(mean + std * t));
        // dF/dm = E g'(y) with g'(y) = -sigmoid(-y).
        let d_mean = rule.standard_normal_mean(|t| -sigmoid(-(mean + std * t)));
        // dF/dv = E g''(y) / 2 with g''(y) = sigmoid(y) sigmoid(-y).
        let d_var = rule.standard_normal_mean(|t| {
            let y = mean + std * t;
            0.5 * sigmoid(y) * sigmoid(-y)
        });
        (value, d_mean, d_var)
    }
}

impl LossModel for NNSaddleLoss {
    fn dim(&self) -> usize {
        self.features + self.features * self.features
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        let (w1, w2) = self.split(w);
        let a = self.hidden_projection(w1, w2);
        let (data, _, _) = self.data_terms(&a);
        let ridge: f64 = w.iter().map(|x| x * x).sum();
        data + 0.5 * self.reg * ridge
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let m = self.features;
        let (w1, w2) = self.split(w);
        let a = self.hidden_projection(w1, w2);
        let (_, d_mean, d_var) = self.data_terms(&a);
        // dJ/da = d_mean·shift·1 + d_var·2a.
        let grad_a = DVector::from_fn(m, |j, _| d_mean * self.shift + 2.0 * d_var * a[j]);
        let mut grad = DVector::zeros(self.dim());
        for i in 0..m {
            let row = &w2[i * m..(i + 1) * m];
            // d a_j / d w1_i = W₂[i][j]
            grad[i] = row.iter().zip(grad_a.iter()).map(|(&r, &g)| r * g).sum::<f64>()
                + self.reg * w1[i];
            // d a_j / d W₂[i][j] = w1_i
            for j in 0..m {
                grad[m + i * m + j] = grad_a[j] * w1[i] + self.reg * row[j];
            }
        }
        grad
    }

    fn smoothness(&self) -> Smoothness {
        super::estimate_smoothness(self, 1000, 2.0, 0x4e4e)
    }

    fn sample_data_gradient(&self, w: &DVector<f64>, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
        let m = self.features;
        let (w1, w2) = self.split(w);
        let label: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let feature = DVector::from_fn(m, |_, _| {
            label * self.shift + rng.sample::<f64, _>(StandardNormal)
        });
        // logit z = w₁ᵀ W₂ h.
        let hidden = DVector::from_fn(m, |i, _| {
            w2[i * m..(i + 1) * m]
                .iter()
                .zip(feature.iter())
                .map(|(&r, &h)| r * h)
                .sum::<f64>()
        });
        let logit: f64 = w1.iter().zip(hidden.iter()).map(|(&x, &y)| x * y).sum();
        // dQ/dz = -γ·sigmoid(-γz).
        let slope = -label * sigmoid(-label * logit);
        let mut grad = DVector::zeros(self.dim());
        for i in 0..m {
            grad[i] = slope * hidden[i] + self.reg * w1[i];
            for j in 0..m {
                grad[m + i * m + j] = slope * w1[i] * feature[j] + self.reg * w2[i * m + j];
            }
        }
        Some(grad)
    }
}
