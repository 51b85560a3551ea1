//! Helpers shared by the integration tests: independent reference
//! implementations written with plain loops and tensor ops, never the graph.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitleak::mlp::{Activation, LossKind, Mlp, MlpConfig};
use splitleak::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// A random MLP with 1..=3 layers and widths in 1..=32.
pub fn random_mlp(rng: &mut impl Rng, activation: Activation, output: usize) -> Mlp {
    let layers = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(1..=32)];
    for _ in 1..layers {
        widths.push(rng.random_range(1..=32));
    }
    widths.push(output);
    Mlp::init(MlpConfig::new(widths, activation).unwrap(), rng).unwrap()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, with a tiny floor so two
/// zero vectors compare equal.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

/// Central finite differences of `f` with respect to every entry of `x`.
pub fn central_diff(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + h;
        let up = f(&probe);
        probe.data_mut()[i] = v - h;
        let down = f(&probe);
        probe.data_mut()[i] = v;
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Replaces parameter `k` (in `w0, b0, w1, b1, ...` order) of a copy of `mlp`.
pub fn with_param(mlp: &Mlp, k: usize, value: &Tensor) -> Mlp {
    let mut m = mlp.clone();
    *m.parameters_mut()[k] = value.clone();
    m
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
    }
}

fn act_prime(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - z.tanh().powi(2),
    }
}

/// Forward pass with explicit loops; returns every pre-activation.
pub fn manual_forward(mlp: &Mlp, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let a = mlp.config().activation;
    let mut h = x.to_vec();
    let mut pre = Vec::new();
    let n = mlp.weights().len();
    for (l, (w, b)) in mlp.weights().iter().zip(mlp.biases()).enumerate() {
        let (din, dout) = w.dims2();
        let z: Vec<f64> = (0..dout)
            .map(|j| b.data()[j] + (0..din).map(|i| h[i] * w.get2(i, j)).sum::<f64>())
            .collect();
        h = if l + 1 < n { z.iter().map(|&v| act(a, v)).collect() } else { z.clone() };
        pre.push(z);
    }
    (pre, h)
}

/// `∂ŷ/∂x` of a single-output MLP by the chain rule, written out by hand.
pub fn manual_input_jacobian(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let a = mlp.config().activation;
    let (pre, _) = manual_forward(mlp, x);
    let n = mlp.weights().len();
    let mut up = vec![1.0];
    for l in (0..n).rev() {
        let w = &mlp.weights()[l];
        let (din, dout) = w.dims2();
        if l + 1 < n {
            for (j, u) in up.iter_mut().enumerate() {
                *u *= act_prime(a, pre[l][j]);
            }
        }
        up = (0..din)
            .map(|i| (0..dout).map(|j| w.get2(i, j) * up[j]).sum())
            .collect();
    }
    up
}

/// Reference shared gradient of the batch-mean loss.
pub fn manual_shared_gradient(label: &Mlp, embeddings: &Tensor, labels: &[f64], loss: LossKind) -> Tensor {
    let (b, d) = embeddings.dims2();
    let mut out = Vec::with_capacity(b * d);
    for i in 0..b {
        let e = embeddings.row(i);
        let (_, y_hat) = manual_forward(label, e);
        let coef = loss.derivative(y_hat[0] - labels[i]) / b as f64;
        out.extend(manual_input_jacobian(label, e).into_iter().map(|v| coef * v));
    }
    Tensor::new(vec![b, d], out).unwrap()
}
