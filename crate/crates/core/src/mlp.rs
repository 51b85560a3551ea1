//! Fully-connected networks and the closed-form cut-layer gradient.
//!
//! Weights are stored as `[fan_in, fan_out]` matrices and biases as `[1, fan_out]`
//! rows, so a batch `X: [n, fan_in]` maps to `X W + b`. Hidden layers share one
//! activation; the final layer is linear.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::UnsupportedActivation(other.to_string())),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Per-sample training loss used by the label party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `|ŷ - y|`
    L1,
    /// `(ŷ - y)²`
    L2,
}

impl LossKind {
    pub fn value(self, residual: f64) -> f64 {
        match self {
            LossKind::L1 => residual.abs(),
            LossKind::L2 => residual * residual,
        }
    }

    /// Derivative of the per-sample loss with respect to the prediction.
    /// The L1 subgradient at a zero residual is 0.
    pub fn derivative(self, residual: f64) -> f64 {
        match self {
            LossKind::L1 => {
                if residual > 0.0 {
                    1.0
                } else if residual < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::L2 => 2.0 * residual,
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let cfg = Self {
            layer_widths,
            activation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `input -> hidden... -> output`.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self::new(widths, activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: MlpConfig,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Mlp {
    /// Fan-in scaled uniform initialisation, `U(-1/√fan_in, 1/√fan_in)` for
    /// weights and biases alike.
    pub fn init<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut weights = Vec::with_capacity(config.num_layers());
        let mut biases = Vec::with_capacity(config.num_layers());
        for pair in config.layer_widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("bound is positive");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            let b: Vec<f64> = (0..fan_out).map(|_| dist.sample(rng)).collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], w)?);
            biases.push(Tensor::new(vec![1, fan_out], b)?);
        }
        Ok(Self {
            config,
            weights,
            biases,
        })
    }

    pub fn from_parts(config: MlpConfig, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.num_layers() || biases.len() != config.num_layers() {
            return Err(Error::Config(format!(
                "expected {} layers, got {} weights and {} biases",
                config.num_layers(),
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in config.layer_widths.windows(2).enumerate() {
            if weights[l].shape() != [pair[0], pair[1]] {
                return Err(Error::ShapeMismatch {
                    op: "Mlp::from_parts weight",
                    lhs: vec![pair[0], pair[1]],
                    rhs: weights[l].shape().to_vec(),
                });
            }
            if biases[l].shape() != [1, pair[1]] {
                return Err(Error::ShapeMismatch {
                    op: "Mlp::from_parts bias",
                    lhs: vec![1, pair[1]],
                    rhs: biases[l].shape().to_vec(),
                });
            }
        }
        Ok(Self {
            config,
            weights,
            biases,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Parameters in `w0, b0, w1, b1, ...` order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Plain tensor forward pass for a `[n, input_dim]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, cols) = x.dims2();
        if x.rank() != 2 || cols != self.config.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "Mlp::forward",
                lhs: vec![x.dims2().0, self.config.input_dim()],
                rhs: x.shape().to_vec(),
            });
        }
        let last = self.config.num_layers() - 1;
        let mut h = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.matmul(w)?;
            let (r, c) = z.dims2();
            let bias = b.data();
            let act = self.config.activation;
            for i in 0..r {
                for (j, v) in z.data_mut()[i * c..(i + 1) * c].iter_mut().enumerate() {
                    *v += bias[j];
                    if l < last {
                        *v = act.apply(*v);
                    }
                }
            }
            if !z.all_finite() {
                return Err(Error::NonFinite("Mlp::forward"));
            }
            h = z;
        }
        Ok(h)
    }

    /// Places the parameters on `graph`, either as trainable leaves or constants.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundMlp {
        let mut leaf = |t: &Tensor| {
            if trainable {
                graph.parameter(t.clone())
            } else {
                graph.constant(t.clone())
            }
        };
        let weights = self.weights.iter().map(&mut leaf).collect();
        let biases = self.biases.iter().map(&mut leaf).collect();
        BoundMlp {
            weights,
            biases,
            activation: self.config.activation,
        }
    }
}

/// Node handles of an [`Mlp`] placed on a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
    pub activation: Activation,
}

/// Intermediate nodes of a graph forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activation of every hidden layer.
    pub pre_activations: Vec<NodeId>,
    /// Post-activation of every hidden layer.
    pub hidden: Vec<NodeId>,
    pub output: NodeId,
}

impl BoundMlp {
    /// Parameter nodes in `w0, b0, w1, b1, ...` order, matching [`Mlp::parameters`].
    pub fn parameter_nodes(&self) -> Vec<NodeId> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [*w, *b])
            .collect()
    }

    pub fn forward(&self, graph: &mut Graph, input: NodeId) -> Result<ForwardTrace> {
        let last = self.weights.len() - 1;
        let mut pre_activations = Vec::with_capacity(last);
        let mut hidden = Vec::with_capacity(last);
        let mut h = input;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = graph.matmul(h, w)?;
            let z = graph.add(z, b)?;
            if l < last {
                pre_activations.push(z);
                h = match self.activation {
                    Activation::Relu => graph.relu(z)?,
                    Activation::Tanh => graph.tanh(z)?,
                };
                hidden.push(h);
            } else {
                h = z;
            }
        }
        Ok(ForwardTrace {
            pre_activations,
            hidden,
            output: h,
        })
    }
}

/// Output of [`embedding_gradient_as_graph`].
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingGradient {
    /// `[n, cut_dim]`, one row per sample.
    pub gradient: NodeId,
    /// `[n, 1]` label-model predictions.
    pub prediction: NodeId,
}

/// Builds `∂L/∂E` for a scalar-output label model as graph nodes.
///
/// `L = Σ_i row_scale[i] · loss(ŷ_i, y_i)`; for the batch-mean loss of a batch of
/// size `B` every `row_scale` entry is `1/B`. The gradient is assembled from the
/// transposed Jacobian chain `d · W_Lᵀ ⊙ σ'(Z_{L-1}) · ... · W_1ᵀ`, so it stays
/// differentiable in the label-model weights and in `labels`.
///
/// Relu derivative masks and the L1 sign factor enter as constants, which is
/// exact almost everywhere. The tanh derivative is built as `1 - tanh²` from
/// graph ops.
pub fn embedding_gradient_as_graph(
    graph: &mut Graph,
    label_model: &BoundMlp,
    loss: LossKind,
    embedding: NodeId,
    labels: NodeId,
    row_scale: &[f64],
) -> Result<EmbeddingGradient> {
    let trace = label_model.forward(graph, embedding)?;
    let pred_shape = graph.value(trace.output).shape().to_vec();
    if pred_shape.len() != 2 || pred_shape[1] != 1 {
        return Err(Error::InvalidShape {
            shape: pred_shape,
            reason: "label model must produce one prediction per row".into(),
        });
    }
    if row_scale.len() != pred_shape[0] {
        return Err(Error::ShapeMismatch {
            op: "embedding_gradient_as_graph row_scale",
            lhs: pred_shape,
            rhs: vec![row_scale.len()],
        });
    }
    let residual = graph.sub(trace.output, labels)?;
    let scale = Tensor::column(row_scale.to_vec())?;
    let mut upstream = match loss {
        LossKind::L2 => {
            let s = graph.constant(scale.map(|v| 2.0 * v));
            graph.mul(residual, s)?
        }
        LossKind::L1 => {
            let signs = graph
                .value(residual)
                .zip_with(&scale, |r, s| LossKind::L1.derivative(r) * s);
            graph.constant(signs)
        }
    };

    for l in (0..label_model.weights.len()).rev() {
        let wt = graph.transpose(label_model.weights[l])?;
        upstream = graph.matmul(upstream, wt)?;
        if l > 0 {
            let deriv = match label_model.activation {
                Activation::Relu => {
                    let mask = graph
                        .value(trace.pre_activations[l - 1])
                        .map(|z| if z > 0.0 { 1.0 } else { 0.0 });
                    graph.constant(mask)
                }
                Activation::Tanh => {
                    let h = trace.hidden[l - 1];
                    let sq = graph.square(h)?;
                    let ones = graph.constant(Tensor::filled(graph.value(h).shape(), 1.0));
                    graph.sub(ones, sq)?
                }
            };
            upstream = graph.mul(upstream, deriv)?;
        }
    }

    Ok(EmbeddingGradient {
        gradient: upstream,
        prediction: trace.output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound() {
        let cfg = MlpConfig::new(vec![16, 64, 1], Activation::Relu).unwrap();
        let m = Mlp::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(m.weights()[0].max_abs() <= 0.25);
        assert!(m.weights()[1].max_abs() <= 0.125);
        assert_eq!(m.parameters().len(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig::new(vec![3], Activation::Relu).is_err());
        assert!(MlpConfig::new(vec![3, 0, 1], Activation::Relu).is_err());
        assert!("sigmoid".parse::<Activation>().is_err());
    }

    #[test]
    fn graph_forward_equals_tensor_forward() {
        let cfg = MlpConfig::new(vec![3, 5, 4, 2], Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Mlp::init(cfg, &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, -0.3, 2.0], vec![1.0, 0.0, -1.0]]).unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g, true);
        let xin = g.constant(x.clone());
        let out = bound.forward(&mut g, xin).unwrap().output;
        let direct = m.forward(&x).unwrap();
        for (a, b) in g.value(out).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_l2_closed_form() {
        // ŷ = wᵀE with w = [1, 0]; E = [2, 3]; y = 1  =>  g = 2 (ŷ - y) w = [2, 0]
        let cfg = MlpConfig::new(vec![2, 1], Activation::Relu).unwrap();
        let m = Mlp::from_parts(
            cfg,
            vec![Tensor::column(vec![1.0, 0.0]).unwrap()],
            vec![Tensor::new(vec![1, 1], vec![0.0]).unwrap()],
        )
        .unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let e = g.constant(Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap());
        let y = g.constant(Tensor::column(vec![1.0]).unwrap());
        let eg = embedding_gradient_as_graph(&mut g, &bound, LossKind::L2, e, y, &[1.0]).unwrap();
        assert_eq!(g.value(eg.gradient).data(), &[2.0, 0.0]);

        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let e = g.constant(Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap());
        let y = g.constant(Tensor::column(vec![5.0]).unwrap());
        let eg = embedding_gradient_as_graph(&mut g, &bound, LossKind::L1, e, y, &[1.0]).unwrap();
        assert_eq!(g.value(eg.gradient).data(), &[-1.0, 0.0]);
    }

    #[test]
    fn l1_tie_gives_zero_gradient() {
        let cfg = MlpConfig::new(vec![2, 1], Activation::Relu).unwrap();
        let m = Mlp::from_parts(
            cfg,
            vec![Tensor::column(vec![1.0, 1.0]).unwrap()],
            vec![Tensor::new(vec![1, 1], vec![0.0]).unwrap()],
        )
        .unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let e = g.constant(Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap());
        let y = g.constant(Tensor::column(vec![5.0]).unwrap());
        let eg = embedding_gradient_as_graph(&mut g, &bound, LossKind::L1, e, y, &[1.0]).unwrap();
        assert_eq!(g.value(eg.gradient).data(), &[0.0, 0.0]);
    }
}
