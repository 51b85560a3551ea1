//! Two-party split-learning simulator.
//!
//! The user party owns the features and the bottom model; the label party owns
//! the labels and the top model. Per training step the user party sends cut-layer
//! embeddings, the label party answers with `∂L/∂E` for the batch-mean loss, and
//! each side updates its own parameters. Every answer is appended to the
//! gradient log, which is exactly what a curious user party gets to see.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitIndices};
use crate::defense::{noise_labels, GradientNoiser, GradientNoiseConfig, LabelNoiseConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mlp::{LossKind, Mlp, MlpConfig};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeModel {
    pub user: Mlp,
    pub label: Mlp,
}

impl CompositeModel {
    pub fn new(user: Mlp, label: Mlp) -> Result<Self> {
        if user.config().output_dim() != label.config().input_dim() {
            return Err(Error::Config(format!(
                "user output width {} differs from label input width {}",
                user.config().output_dim(),
                label.config().input_dim()
            )));
        }
        if label.config().output_dim() != 1 {
            return Err(Error::Config("label model must have a single output".into()));
        }
        Ok(Self { user, label })
    }

    pub fn init(user: MlpConfig, label: MlpConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user = Mlp::init(user, &mut rng)?;
        let label = Mlp::init(label, &mut rng)?;
        Self::new(user, label)
    }

    pub fn cut_dim(&self) -> usize {
        self.user.config().output_dim()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(forward_label(&self.label, &forward_user(&self.user, x)?)?.into_data())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 5,
            loss: LossKind::L1,
            optimizer: AdamConfig::with_lr(1e-3),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// One shared-gradient exchange as observed by the user party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedGradientRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Size of the batch the gradient was averaged over.
    pub batch_size: usize,
    pub sample_indices: Vec<usize>,
    #[serde(with = "rows")]
    pub embeddings: Tensor,
    #[serde(with = "rows")]
    pub gradients: Tensor,
}

impl SharedGradientRecord {
    pub fn position_of(&self, sample: usize) -> Option<usize> {
        self.sample_indices.iter().position(|&s| s == sample)
    }
}

mod rows {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::tensor::Tensor;

    pub fn serialize<S: Serializer>(t: &Tensor, s: S) -> Result<S::Ok, S::Error> {
        let (r, _) = t.dims2();
        s.collect_seq((0..r).map(|i| t.row(i)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Tensor, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Tensor::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn forward_user(user: &Mlp, batch: &Tensor) -> Result<Tensor> {
    user.forward(batch)
}

pub fn forward_label(label: &Mlp, embeddings: &Tensor) -> Result<Tensor> {
    label.forward(embeddings)
}

/// Per-sample `∂L/∂E_i` of the batch-mean loss, computed by reverse
/// accumulation through the label model.
pub fn shared_gradient(label: &Mlp, embeddings: &Tensor, labels: &[f64], loss: LossKind) -> Result<Tensor> {
    Ok(label_step(label, embeddings, labels, loss)?.embedding_grad)
}

struct LabelStep {
    loss: f64,
    embedding_grad: Tensor,
    param_grads: Vec<Tensor>,
}

fn label_step(label: &Mlp, embeddings: &Tensor, labels: &[f64], loss: LossKind) -> Result<LabelStep> {
    let (n, _) = embeddings.dims2();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "shared_gradient labels",
            lhs: vec![n],
            rhs: vec![labels.len()],
        });
    }
    let mut g = Graph::new();
    let e = g.parameter(embeddings.clone());
    let bound = label.bind(&mut g, true);
    let pred = bound.forward(&mut g, e)?.output;
    let y = g.constant(Tensor::column(labels.to_vec())?);
    let r = g.sub(pred, y)?;
    let per = match loss {
        LossKind::L1 => g.abs(r)?,
        LossKind::L2 => g.square(r)?,
    };
    let l = g.mean(per)?;
    let mut targets = vec![e];
    targets.extend(bound.parameter_nodes());
    let grads = g.backward(l, &targets)?;
    Ok(LabelStep {
        loss: g.value(l).item(),
        embedding_grad: grads[e].clone(),
        param_grads: bound.parameter_nodes().iter().map(|id| grads[*id].clone()).collect(),
    })
}

/// Gradient of `Σ E ⊙ upstream` with respect to the user-model parameters.
fn user_param_grads(user: &Mlp, x: &Tensor, upstream: &Tensor) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let bound = user.bind(&mut g, true);
    let xin = g.constant(x.clone());
    let e = bound.forward(&mut g, xin)?.output;
    let up = g.constant(upstream.clone());
    let prod = g.mul(e, up)?;
    let s = g.sum(prod)?;
    let params = bound.parameter_nodes();
    let grads = g.backward(s, &params)?;
    Ok(params.iter().map(|id| grads[*id].clone()).collect())
}

/// Mean absolute error of the composite model on `ids`.
pub fn evaluate_l1(model: &CompositeModel, ds: &Dataset, ids: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return Ok(0.0);
    }
    let preds = model.predict(&ds.rows(ids))?;
    Ok(preds
        .iter()
        .zip(ids)
        .map(|(p, &i)| (p - ds.labels[i]).abs())
        .sum::<f64>()
        / ids.len() as f64)
}

/// Protections the label party applies during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelPartyDefenses {
    pub label_noise: Option<LabelNoiseConfig>,
    pub gradient_noise: Option<GradientNoiseConfig>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CompositeModel,
    pub log: Vec<SharedGradientRecord>,
    /// Test-split L1 after every epoch (against the clean labels).
    pub test_l1: Vec<f64>,
    /// Training-split L1 after the last epoch (against the clean labels).
    pub train_l1: f64,
}

impl TrainOutcome {
    pub fn final_test_l1(&self) -> Option<f64> {
        self.test_l1.last().copied()
    }
}

struct UserParty<'a> {
    model: Mlp,
    features: &'a Tensor,
    opt: Adam,
}

impl UserParty<'_> {
    fn embed(&self, ids: &[usize]) -> Result<(Tensor, Tensor)> {
        let x = self.features.select_rows(ids);
        let e = forward_user(&self.model, &x)?;
        Ok((x, e))
    }

    fn apply(&mut self, x: &Tensor, upstream: &Tensor) -> Result<()> {
        let grads = user_param_grads(&self.model, x, upstream)?;
        let refs: Vec<&Tensor> = grads.iter().collect();
        self.opt.step(&mut self.model.parameters_mut(), &refs)
    }
}

struct LabelParty {
    model: Mlp,
    labels: Vec<f64>,
    loss: LossKind,
    opt: Adam,
    noiser: Option<GradientNoiser>,
}

impl LabelParty {
    /// Sees sample ids and embeddings only; returns the released gradient and the batch loss.
    fn exchange(&mut self, ids: &[usize], embeddings: &Tensor) -> Result<(Tensor, f64)> {
        let y: Vec<f64> = ids.iter().map(|&i| self.labels[i]).collect();
        let step = label_step(&self.model, embeddings, &y, self.loss)?;
        let refs: Vec<&Tensor> = step.param_grads.iter().collect();
        self.opt.step(&mut self.model.parameters_mut(), &refs)?;
        let released = match &mut self.noiser {
            Some(n) => n.apply(&step.embedding_grad),
            None => step.embedding_grad,
        };
        Ok((released, step.loss))
    }
}

/// Trains the composite model on `split.train` and records every exchange.
pub fn train_composite(
    model: CompositeModel,
    ds: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
    defenses: &LabelPartyDefenses,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.num_features() != model.user.config().input_dim() {
        return Err(Error::ShapeMismatch {
            op: "train_composite features",
            lhs: vec![model.user.config().input_dim()],
            rhs: vec![ds.num_features()],
        });
    }
    let labels = match &defenses.label_noise {
        Some(cfg) => noise_labels(&ds.labels, cfg)?,
        None => ds.labels.clone(),
    };
    let mut user = UserParty {
        model: model.user,
        features: &ds.features,
        opt: Adam::new(cfg.optimizer),
    };
    let mut label = LabelParty {
        model: model.label,
        labels,
        loss: cfg.loss,
        opt: Adam::new(cfg.optimizer),
        noiser: defenses.gradient_noise.as_ref().map(GradientNoiser::new),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = split.train.clone();
    let mut log = Vec::new();
    let mut test_l1 = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, ids) in order.chunks(cfg.batch_size).enumerate() {
            let (x, e) = user.embed(ids)?;
            let (g, loss) = match label.exchange(ids, &e) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        batch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            user.apply(&x, &g)?;
            log.push(SharedGradientRecord {
                epoch,
                batch,
                batch_size: ids.len(),
                sample_indices: ids.to_vec(),
                embeddings: e,
                gradients: g,
            });
        }
        let current = CompositeModel {
            user: user.model.clone(),
            label: label.model.clone(),
        };
        test_l1.push(evaluate_l1(&current, ds, &split.test)?);
    }
    let model = CompositeModel {
        user: user.model,
        label: label.model,
    };
    let train_l1 = evaluate_l1(&model, ds, &split.train)?;
    Ok(TrainOutcome {
        model,
        log,
        test_l1,
        train_l1,
    })
}

pub fn write_gradient_log(path: impl AsRef<Path>, log: &[SharedGradientRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in log {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_gradient_log(path: impl AsRef<Path>) -> anyhow::Result<Vec<SharedGradientRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| anyhow::anyhow!("gradient log line {}: {e}", i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Activation;

    fn linear(w: Vec<f64>, b: f64) -> Mlp {
        let n = w.len();
        Mlp::from_parts(
            MlpConfig::new(vec![n, 1], Activation::Relu).unwrap(),
            vec![Tensor::column(w).unwrap()],
            vec![Tensor::new(vec![1, 1], vec![b]).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn identity_user_model() {
        let user = Mlp::from_parts(
            MlpConfig::new(vec![2, 2], Activation::Relu).unwrap(),
            vec![Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()],
            vec![Tensor::zeros(&[1, 2])],
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(forward_user(&user, &x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let cfg = MlpConfig::new(vec![3, 4, 2], Activation::Relu).unwrap();
        let user = Mlp::from_parts(
            cfg,
            vec![Tensor::zeros(&[3, 4]), Tensor::zeros(&[4, 2])],
            vec![Tensor::filled(&[1, 4], 1.0), Tensor::filled(&[1, 2], 0.5)],
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(forward_user(&user, &x).unwrap().data(), &[0.5, 0.5]);
        let label = linear(vec![0.0, 0.0], 0.0);
        let e = Tensor::from_rows(&[vec![4.0, -1.0]]).unwrap();
        assert_eq!(forward_label(&label, &e).unwrap().data(), &[0.0]);
    }

    #[test]
    fn shared_gradient_linear_l2() {
        let label = linear(vec![1.0, 0.0], 0.0);
        let e = Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let g = shared_gradient(&label, &e, &[1.0], LossKind::L2).unwrap();
        assert_eq!(g.data(), &[2.0, 0.0]);
        let g = shared_gradient(&label, &e, &[2.0], LossKind::L2).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn batch_mean_convention_divides_by_batch_size() {
        let label = linear(vec![1.0, 0.0], 0.0);
        let e = Tensor::from_rows(&[vec![2.0, 3.0], vec![2.0, 3.0]]).unwrap();
        let g = shared_gradient(&label, &e, &[1.0, 1.0], LossKind::L2).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let ds = crate::data::preset_dataset(crate::data::Preset::BostonLike, 0).unwrap();
        let split = crate::data::split_dataset(&ds, 0.8, 0, 0).unwrap();
        let model = CompositeModel::init(
            MlpConfig::new(vec![13, 8, 4], Activation::Relu).unwrap(),
            MlpConfig::new(vec![4, 8, 1], Activation::Relu).unwrap(),
            1,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_composite(model.clone(), &ds, &split, &cfg, &Default::default()).unwrap();
        assert_eq!(out.model, model);
        assert!(out.log.is_empty() && out.test_l1.is_empty());
    }

    #[test]
    fn mismatched_cut_width_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let user = Mlp::init(MlpConfig::new(vec![3, 4], Activation::Relu).unwrap(), &mut rng).unwrap();
        let label = Mlp::init(MlpConfig::new(vec![5, 1], Activation::Relu).unwrap(), &mut rng).unwrap();
        assert!(CompositeModel::new(user, label).is_err());
    }

    #[test]
    fn gradient_log_round_trip() {
        let rec = SharedGradientRecord {
            epoch: 1,
            batch: 2,
            batch_size: 2,
            sample_indices: vec![7, 3],
            embeddings: Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, -0.4]]).unwrap(),
            gradients: Tensor::from_rows(&[vec![1e-3, -2.5], vec![0.0, 1.0 / 3.0]]).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_gradient_log(&path, &[rec.clone(), rec.clone()]).unwrap();
        assert_eq!(read_gradient_log(&path).unwrap(), vec![rec.clone(), rec]);
    }
}
