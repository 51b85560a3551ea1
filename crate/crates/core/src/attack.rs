//! Learning-based label inference from shared cut-layer gradients.
//!
//! The attacker (the user party) holds, for a batch of its own samples, the
//! embeddings it sent and the gradients it got back. It jointly fits a
//! surrogate label model and one free "dummy" label per sample so that
//!
//! ```text
//! L = L_grad + λ1·L_acc + λ2·L_known (+ λ3·L_triplet)
//! ```
//!
//! is minimised, where
//!
//! * `L_grad` is the summed squared L2 distance between the observed gradients
//!   and the gradients the surrogate would have produced for the dummy labels,
//! * `L_acc` is `Σ (surrogate(E_i) - dummy_i)²`,
//! * `L_known` is `L_grad + L_acc` evaluated on samples with known labels,
//! * `L_triplet` is a hinge over all 3-subsets of the batch that asks labels of
//!   embedding-near samples to be closer than labels of embedding-far ones.
//!
//! The surrogate's gradient is built in closed form on the graph (see
//! [`embedding_gradient_as_graph`]) so `L_grad` can be differentiated with
//! respect to the surrogate weights and the dummy labels. Surrogate parameters
//! and dummy labels share a single Adam optimizer.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::{aer, alv};
use crate::mlp::{embedding_gradient_as_graph, Activation, BoundMlp, LossKind, Mlp, MlpConfig};
use crate::optim::{Adam, AdamConfig};
use crate::protocol::SharedGradientRecord;
use crate::tensor::Tensor;

/// Hidden layers and activation of a surrogate; input and output widths
/// follow from the cut layer and the scalar target.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl SurrogateSpec {
    pub fn config(&self, cut_dim: usize) -> Result<MlpConfig> {
        MlpConfig::with_hidden(cut_dim, &self.hidden, 1, self.activation)
    }
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DummyInit {
    /// Dummy labels drawn i.i.d. from `N(0, 1)`.
    StandardNormal,
    /// Dummy labels drawn from `N(m, 1)` where `m` is the mean known label; the
    /// surrogate's output bias is shifted by `m` as well. Falls back to
    /// `StandardNormal` without known samples.
    KnownMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Weight of the accuracy term.
    pub lambda1: f64,
    /// Weight of the known-label term.
    pub lambda2: f64,
    /// Weight of the triplet term, 0 disables it.
    pub lambda3: f64,
    /// Triplet margin.
    pub beta: f64,
    pub iterations: usize,
    /// Samples attacked together.
    pub batch_size: usize,
    pub surrogate: SurrogateSpec,
    /// Loss the target was trained with; the surrogate gradient mirrors it.
    pub loss: LossKind,
    pub optimizer: AdamConfig,
    pub dummy_init: DummyInit,
    /// Keep the surrogate fixed and only move the dummy labels.
    pub freeze_surrogate: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.005,
            lambda3: 0.0,
            beta: 0.0,
            iterations: 2000,
            batch_size: 5,
            surrogate: SurrogateSpec::default(),
            loss: LossKind::L1,
            optimizer: AdamConfig::with_lr(0.005),
            dummy_init: DummyInit::StandardNormal,
            freeze_surrogate: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::Config("attack needs at least one iteration".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("attack batch size must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Observed embeddings and gradients of the samples under attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBatch {
    pub sample_indices: Vec<usize>,
    /// `[n, cut_dim]`
    pub embeddings: Tensor,
    /// `[n, cut_dim]`
    pub gradients: Tensor,
    /// Size of the training batch each gradient was averaged over.
    pub batch_sizes: Vec<usize>,
}

impl AttackBatch {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }

    /// The first `max` samples of `rec` that are not in `exclude`.
    pub fn from_record(rec: &SharedGradientRecord, exclude: &BTreeSet<usize>, max: usize) -> Option<Self> {
        let pos: Vec<usize> = rec
            .sample_indices
            .iter()
            .enumerate()
            .filter(|(_, s)| !exclude.contains(s))
            .map(|(p, _)| p)
            .take(max)
            .collect();
        if pos.is_empty() {
            return None;
        }
        Some(Self {
            sample_indices: pos.iter().map(|&p| rec.sample_indices[p]).collect(),
            embeddings: rec.embeddings.select_rows(&pos),
            gradients: rec.gradients.select_rows(&pos),
            batch_sizes: vec![rec.batch_size; pos.len()],
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.sample_indices.len();
        if n == 0 {
            return Err(Error::Config("empty attack batch".into()));
        }
        if self.embeddings.shape() != self.gradients.shape() || self.embeddings.dims2().0 != n {
            return Err(Error::ShapeMismatch {
                op: "AttackBatch",
                lhs: self.embeddings.shape().to_vec(),
                rhs: self.gradients.shape().to_vec(),
            });
        }
        if self.batch_sizes.len() != n || self.batch_sizes.contains(&0) {
            return Err(Error::Config("one positive batch size per attacked sample required".into()));
        }
        Ok(())
    }

    fn row_scale(&self) -> Vec<f64> {
        self.batch_sizes.iter().map(|&b| 1.0 / b as f64).collect()
    }
}

/// A sample whose true label the attacker knows, with its observed exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownSample {
    pub index: usize,
    pub label: f64,
    pub embedding: Vec<f64>,
    pub gradient: Vec<f64>,
    pub batch_size: usize,
}

/// Looks up every known sample in the log, taking the exchange closest to
/// record `anchor` (ties go to the earlier record).
pub fn gather_known(
    log: &[SharedGradientRecord],
    anchor: usize,
    known: &[(usize, f64)],
) -> Result<Vec<KnownSample>> {
    known
        .iter()
        .map(|&(index, label)| {
            let (rec, pos) = log
                .iter()
                .enumerate()
                .filter_map(|(j, r)| r.position_of(index).map(|p| (j, p)))
                .min_by_key(|(j, _)| (j.abs_diff(anchor), *j))
                .map(|(j, p)| (&log[j], p))
                .ok_or(Error::KnownSampleMissing(index))?;
            Ok(KnownSample {
                index,
                label,
                embedding: rec.embeddings.row(pos).to_vec(),
                gradient: rec.gradients.row(pos).to_vec(),
                batch_size: rec.batch_size,
            })
        })
        .collect()
}

/// Summed squared L2 distance between observed and surrogate gradients.
pub fn gradient_distance_loss(graph: &mut Graph, observed: NodeId, surrogate: NodeId) -> Result<NodeId> {
    let d = graph.sub(surrogate, observed)?;
    graph.sum_sq(d)
}

/// `Σ (prediction_i - dummy_i)²`.
pub fn accuracy_loss(graph: &mut Graph, predictions: NodeId, dummy: NodeId) -> Result<NodeId> {
    let d = graph.sub(predictions, dummy)?;
    graph.sum_sq(d)
}

#[derive(Debug, Clone, Copy)]
pub struct KnowledgeTerms {
    pub total: NodeId,
    pub gradient: NodeId,
    pub accuracy: NodeId,
}

/// Gradient-distance plus accuracy terms on samples with known labels. The
/// labels enter as constants, so only the surrogate receives gradient.
pub fn knowledge_loss(
    graph: &mut Graph,
    surrogate: &BoundMlp,
    loss: LossKind,
    known: &[KnownSample],
) -> Result<KnowledgeTerms> {
    if known.is_empty() {
        let z = graph.constant(Tensor::zeros(&[1]));
        return Ok(KnowledgeTerms {
            total: z,
            gradient: z,
            accuracy: z,
        });
    }
    let rows = |f: fn(&KnownSample) -> &Vec<f64>| {
        Tensor::from_rows(&known.iter().map(|k| f(k).clone()).collect::<Vec<_>>())
    };
    let e = graph.constant(rows(|k| &k.embedding)?);
    let g_obs = graph.constant(rows(|k| &k.gradient)?);
    let y = graph.constant(Tensor::column(known.iter().map(|k| k.label).collect())?);
    let scale: Vec<f64> = known.iter().map(|k| 1.0 / k.batch_size as f64).collect();
    let eg = embedding_gradient_as_graph(graph, surrogate, loss, e, y, &scale)?;
    let gradient = gradient_distance_loss(graph, g_obs, eg.gradient)?;
    let accuracy = accuracy_loss(graph, eg.prediction, y)?;
    let total = graph.add(gradient, accuracy)?;
    Ok(KnowledgeTerms {
        total,
        gradient,
        accuracy,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TripletTerm {
    pub loss: NodeId,
    /// Set when the batch is too small to form a triplet.
    pub too_small: bool,
}

/// All 3-subsets `(a, b, c)` with `a < b < c`, anchored at `a`.
pub fn triplets(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// `+1` when the anchor's embedding is strictly closer to the second sample
/// than to the third, else `-1`.
pub fn triplet_sign(embeddings: &Tensor, [a, b, c]: [usize; 3]) -> f64 {
    let dist = |i: usize, j: usize| {
        embeddings
            .row(i)
            .iter()
            .zip(embeddings.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };
    if dist(a, b) < dist(a, c) {
        1.0
    } else {
        -1.0
    }
}

/// `Σ max(0, β + s·(|y_a - y_b| - |y_a - y_c|))` over all triplets.
pub fn triplet_loss(graph: &mut Graph, embeddings: &Tensor, dummy: NodeId, beta: f64) -> Result<TripletTerm> {
    let n = graph.value(dummy).dims2().0;
    if n < 3 {
        let loss = graph.constant(Tensor::zeros(&[1]));
        return Ok(TripletTerm {
            loss,
            too_small: true,
        });
    }
    let ts = triplets(n);
    let t = ts.len();
    let mut near = vec![0.0; t * n];
    let mut far = vec![0.0; t * n];
    let mut signs = Vec::with_capacity(t);
    for (row, &[a, b, c]) in ts.iter().enumerate() {
        near[row * n + a] = 1.0;
        near[row * n + b] = -1.0;
        far[row * n + a] = 1.0;
        far[row * n + c] = -1.0;
        signs.push(triplet_sign(embeddings, [a, b, c]));
    }
    let near = graph.constant(Tensor::new(vec![t, n], near)?);
    let far = graph.constant(Tensor::new(vec![t, n], far)?);
    let dn = graph.matmul(near, dummy)?;
    let df = graph.matmul(far, dummy)?;
    let an = graph.abs(dn)?;
    let af = graph.abs(df)?;
    let diff = graph.sub(an, af)?;
    let s = graph.constant(Tensor::column(signs)?);
    let signed = graph.mul(diff, s)?;
    let margin = graph.constant(Tensor::filled(&[t, 1], beta));
    let shifted = graph.add(signed, margin)?;
    let hinge = graph.relu(shifted)?;
    let loss = graph.sum(hinge)?;
    Ok(TripletTerm {
        loss,
        too_small: false,
    })
}

/// Term nodes that make up the attack objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub gradient: NodeId,
    pub accuracy: NodeId,
    pub knowledge: NodeId,
    pub triplet: Option<NodeId>,
}

/// `gradient + λ1·accuracy + λ2·knowledge (+ λ3·triplet)`.
pub fn total_loss(graph: &mut Graph, terms: &LossTerms, lambda1: f64, lambda2: f64, lambda3: f64) -> Result<NodeId> {
    let acc = graph.scale(terms.accuracy, lambda1)?;
    let know = graph.scale(terms.knowledge, lambda2)?;
    let mut total = graph.add(terms.gradient, acc)?;
    total = graph.add(total, know)?;
    if let Some(t) = terms.triplet {
        let trip = graph.scale(t, lambda3)?;
        total = graph.add(total, trip)?;
    }
    Ok(total)
}

/// Per-iteration loss values, recorded before each update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrajectory {
    pub total: Vec<f64>,
    pub gradient: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub knowledge: Vec<f64>,
    pub triplet: Vec<f64>,
}

impl LossTrajectory {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub sample_indices: Vec<usize>,
    pub inferred_labels: Vec<f64>,
    pub trajectory: LossTrajectory,
    pub alv: Option<f64>,
    pub aer: Option<f64>,
    pub wall_ms: u64,
    /// Triplet term requested on a batch with fewer than three samples.
    pub triplet_skipped: bool,
    pub surrogate: Mlp,
}

impl AttackResult {
    fn score(&mut self, truth: Option<&[f64]>) -> Result<()> {
        if let Some(t) = truth {
            self.alv = Some(alv(&self.inferred_labels, t)?);
            self.aer = Some(aer(&self.inferred_labels, t)?);
        }
        Ok(())
    }
}

fn check_disjoint(batch: &AttackBatch, known: &[KnownSample]) -> Result<()> {
    let attacked: BTreeSet<usize> = batch.sample_indices.iter().copied().collect();
    if let Some(k) = known.iter().find(|k| attacked.contains(&k.index)) {
        return Err(Error::Config(format!(
            "sample {} is both known and attacked",
            k.index
        )));
    }
    Ok(())
}

/// Runs the attack from a freshly initialised surrogate.
pub fn run_attack(
    batch: &AttackBatch,
    known: &[KnownSample],
    cfg: &AttackConfig,
    truth: Option<&[f64]>,
) -> Result<AttackResult> {
    run_attack_inner(batch, known, cfg, None, truth)
}

/// Runs the attack starting from a given surrogate (used by oracle checks and
/// white-box diagnostics).
pub fn run_attack_from(
    batch: &AttackBatch,
    known: &[KnownSample],
    cfg: &AttackConfig,
    surrogate: Mlp,
    truth: Option<&[f64]>,
) -> Result<AttackResult> {
    run_attack_inner(batch, known, cfg, Some(surrogate), truth)
}

/// Runs the attack with the dummy labels starting at `init` instead of a random draw.
pub fn run_attack_with_dummies(
    batch: &AttackBatch,
    known: &[KnownSample],
    cfg: &AttackConfig,
    surrogate: Mlp,
    init: Vec<f64>,
    truth: Option<&[f64]>,
) -> Result<AttackResult> {
    if init.len() != batch.len() {
        return Err(Error::ShapeMismatch {
            op: "run_attack_with_dummies",
            lhs: vec![batch.len()],
            rhs: vec![init.len()],
        });
    }
    optimise(batch, known, cfg, surrogate, init, truth)
}

fn run_attack_inner(
    batch: &AttackBatch,
    known: &[KnownSample],
    cfg: &AttackConfig,
    surrogate: Option<Mlp>,
    truth: Option<&[f64]>,
) -> Result<AttackResult> {
    cfg.validate()?;
    batch.validate()?;
    let n = batch.len();
    let cut = batch.embeddings.dims2().1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let shift = match cfg.dummy_init {
        DummyInit::KnownMean if !known.is_empty() => {
            known.iter().map(|k| k.label).sum::<f64>() / known.len() as f64
        }
        _ => 0.0,
    };
    let dummy: Vec<f64> = (0..n)
        .map(|_| shift + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let surrogate = match surrogate {
        Some(m) => {
            if m.config().input_dim() != cut || m.config().output_dim() != 1 {
                return Err(Error::Config("initial surrogate does not fit the cut layer".into()));
            }
            m
        }
        None => {
            let mut m = Mlp::init(cfg.surrogate.config(cut)?, &mut rng)?;
            if shift != 0.0 {
                let b = m.parameters_mut().pop().expect("at least one layer");
                b.data_mut()[0] += shift;
            }
            m
        }
    };
    optimise(batch, known, cfg, surrogate, dummy, truth)
}

fn optimise(
    batch: &AttackBatch,
    known: &[KnownSample],
    cfg: &AttackConfig,
    mut surrogate: Mlp,
    dummy: Vec<f64>,
    truth: Option<&[f64]>,
) -> Result<AttackResult> {
    cfg.validate()?;
    batch.validate()?;
    check_disjoint(batch, known)?;
    let start = Instant::now();
    let row_scale = batch.row_scale();
    let mut dummy = Tensor::column(dummy)?;
    let mut opt = Adam::new(cfg.optimizer);
    let mut traj = LossTrajectory::default();
    let mut triplet_skipped = false;

    for it in 0..cfg.iterations {
        let mut g = Graph::new();
        let bound = surrogate.bind(&mut g, !cfg.freeze_surrogate);
        let y = g.parameter(dummy.clone());
        let e = g.constant(batch.embeddings.clone());
        let obs = g.constant(batch.gradients.clone());

        let built = (|| -> Result<_> {
            let eg = embedding_gradient_as_graph(&mut g, &bound, cfg.loss, e, y, &row_scale)?;
            let gradient = gradient_distance_loss(&mut g, obs, eg.gradient)?;
            let accuracy = accuracy_loss(&mut g, eg.prediction, y)?;
            let knowledge = knowledge_loss(&mut g, &bound, cfg.loss, known)?.total;
            let triplet = if cfg.lambda3 > 0.0 {
                let t = triplet_loss(&mut g, &batch.embeddings, y, cfg.beta)?;
                triplet_skipped |= t.too_small;
                Some(t.loss)
            } else {
                None
            };
            let terms = LossTerms {
                gradient,
                accuracy,
                knowledge,
                triplet,
            };
            let total = total_loss(&mut g, &terms, cfg.lambda1, cfg.lambda2, cfg.lambda3)?;
            Ok((terms, total))
        })();
        let (terms, total) = match built {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => {
                let last = |v: &Vec<f64>| v.last().copied().unwrap_or(f64::NAN);
                return Err(Error::AttackDiverged {
                    iteration: it,
                    gradient: last(&traj.gradient),
                    accuracy: last(&traj.accuracy),
                    knowledge: last(&traj.knowledge),
                    triplet: last(&traj.triplet),
                });
            }
            Err(e) => return Err(e),
        };

        let v = |id: NodeId| g.value(id).item();
        traj.total.push(v(total));
        traj.gradient.push(v(terms.gradient));
        traj.accuracy.push(v(terms.accuracy));
        traj.knowledge.push(v(terms.knowledge));
        traj.triplet.push(terms.triplet.map_or(0.0, v));

        let mut targets = vec![y];
        if !cfg.freeze_surrogate {
            targets.extend(bound.parameter_nodes());
        }
        let grads = g.backward(total, &targets).map_err(|_| Error::AttackDiverged {
            iteration: it,
            gradient: v(terms.gradient),
            accuracy: v(terms.accuracy),
            knowledge: v(terms.knowledge),
            triplet: terms.triplet.map_or(0.0, v),
        })?;
        let grad_refs: Vec<&Tensor> = targets.iter().map(|t| &grads[*t]).collect();
        if cfg.freeze_surrogate {
            opt.step(&mut [&mut dummy], &grad_refs)?;
        } else {
            let mut params: Vec<&mut Tensor> = vec![&mut dummy];
            params.extend(surrogate.parameters_mut());
            opt.step(&mut params, &grad_refs)?;
        }
        if !dummy.all_finite() {
            return Err(Error::AttackDiverged {
                iteration: it,
                gradient: v(terms.gradient),
                accuracy: v(terms.accuracy),
                knowledge: v(terms.knowledge),
                triplet: terms.triplet.map_or(0.0, v),
            });
        }
    }

    let mut result = AttackResult {
        sample_indices: batch.sample_indices.clone(),
        inferred_labels: dummy.into_data(),
        trajectory: traj,
        alv: None,
        aer: None,
        wall_ms: start.elapsed().as_millis() as u64,
        triplet_skipped,
        surrogate,
    };
    result.score(truth)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub surrogate: SurrogateSpec,
    /// Supervised fine-tuning steps on the known samples.
    pub iterations: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateSpec::default(),
            iterations: 2000,
            optimizer: AdamConfig::with_lr(0.005),
            seed: 0,
        }
    }
}

/// Semi-supervised baseline: fit a surrogate to `(embedding, label)` pairs of
/// the known samples by mean squared error, then read the targets' labels off
/// its predictions on their embeddings.
pub fn run_baseline(
    known: &[KnownSample],
    targets: &AttackBatch,
    cfg: &BaselineConfig,
    truth: Option<&[f64]>,
) -> Result<AttackResult> {
    if known.is_empty() {
        return Err(Error::Config("the baseline needs at least one known sample".into()));
    }
    cfg.optimizer.validate()?;
    targets.validate()?;
    check_disjoint(targets, known)?;
    let start = Instant::now();
    let cut = targets.embeddings.dims2().1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut surrogate = Mlp::init(cfg.surrogate.config(cut)?, &mut rng)?;
    let x = Tensor::from_rows(&known.iter().map(|k| k.embedding.clone()).collect::<Vec<_>>())?;
    let y = Tensor::column(known.iter().map(|k| k.label).collect())?;
    let mut opt = Adam::new(cfg.optimizer);
    let mut traj = LossTrajectory::default();
    for _ in 0..cfg.iterations {
        let mut g = Graph::new();
        let bound = surrogate.bind(&mut g, true);
        let xin = g.constant(x.clone());
        let yin = g.constant(y.clone());
        let pred = bound.forward(&mut g, xin)?.output;
        let r = g.sub(pred, yin)?;
        let sq = g.square(r)?;
        let mse = g.mean(sq)?;
        traj.total.push(g.value(mse).item());
        let params = bound.parameter_nodes();
        let grads = g.backward(mse, &params)?;
        let refs: Vec<&Tensor> = params.iter().map(|p| &grads[*p]).collect();
        opt.step(&mut surrogate.parameters_mut(), &refs)?;
    }
    let inferred = surrogate.forward(&targets.embeddings)?.into_data();
    let mut result = AttackResult {
        sample_indices: targets.sample_indices.clone(),
        inferred_labels: inferred,
        trajectory: traj,
        alv: None,
        aer: None,
        wall_ms: start.elapsed().as_millis() as u64,
        triplet_skipped: false,
        surrogate,
    };
    result.score(truth)?;
    Ok(result)
}
