//! Noise-based protections applied by the label party.
//!
//! * Label noise: every training label gets an independent `Laplace(0, s/ε)`
//!   draw, once, before training starts.
//! * Gradient noise: every released cut-layer gradient gets i.i.d.
//!   `N(0, σ²)` noise with `σ = max|g| / √d`, where the max runs over all
//!   entries of the batch and `d` is the embedding width.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelNoiseConfig {
    pub epsilon: f64,
    /// Sensitivity `s`; when absent the largest label is used.
    #[serde(default)]
    pub sensitivity: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl LabelNoiseConfig {
    pub fn scale(&self, labels: &[f64]) -> Result<f64> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "label-noise epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        let s = match self.sensitivity {
            Some(s) => s,
            None => labels.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Config(format!("label-noise sensitivity must be positive, got {s}")));
        }
        Ok(s / self.epsilon)
    }
}

/// One `Laplace(0, b)` draw by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    // u in (-1/2, 1/2); the open endpoint keeps ln finite
    let u: f64 = rng.random::<f64>() - 0.5;
    let mag = 1.0 - 2.0 * u.abs();
    -b * u.signum() * mag.max(f64::MIN_POSITIVE).ln()
}

pub fn noise_labels(labels: &[f64], cfg: &LabelNoiseConfig) -> Result<Vec<f64>> {
    let b = cfg.scale(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(labels.iter().map(|y| y + sample_laplace(&mut rng, b)).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientNoiseConfig {
    #[serde(default)]
    pub seed: u64,
}

/// `max|g| / √d` for a `[n, d]` batch of gradients.
pub fn gradient_noise_sigma(g: &Tensor) -> f64 {
    let (_, d) = g.dims2();
    g.max_abs() / (d as f64).sqrt()
}

/// Stateful gradient noiser: one random stream for a whole training run.
#[derive(Debug, Clone)]
pub struct GradientNoiser {
    rng: ChaCha8Rng,
}

impl GradientNoiser {
    pub fn new(cfg: &GradientNoiseConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    pub fn apply(&mut self, g: &Tensor) -> Tensor {
        let sigma = gradient_noise_sigma(g);
        if sigma == 0.0 {
            return g.clone();
        }
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        g.map(|v| v + normal.sample(&mut self.rng))
    }
}

/// Noises one batch of gradients from a fresh stream seeded by `cfg`.
pub fn noise_gradients(g: &Tensor, cfg: &GradientNoiseConfig) -> Tensor {
    GradientNoiser::new(cfg).apply(g)
}
