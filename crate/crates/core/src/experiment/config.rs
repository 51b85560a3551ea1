use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, BaselineConfig, DummyInit, SurrogateSpec};
use crate::data::{self, hex16, Dataset, Preset, SyntheticKind};
use crate::mlp::{Activation, LossKind, MlpConfig};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub repeats: usize,
    pub output: PathBuf,
    /// Which gradient-log records to write: `none`, `observed` or `all`.
    pub logs: LogMode,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub attack: AttackSpec,
    pub baseline: BaselineSpec,
    pub defense: DefenseSpec,
    pub sweep: SweepAxes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            repeats: 5,
            output: PathBuf::from("out"),
            logs: LogMode::Observed,
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            attack: AttackSpec::default(),
            baseline: BaselineSpec::default(),
            defense: DefenseSpec::default(),
            sweep: SweepAxes::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogMode {
    None,
    Observed,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Preset,
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub preset: Preset,
    pub path: Option<PathBuf>,
    pub target: String,
    pub delimiter: char,
    pub n: usize,
    pub p: usize,
    pub kind: SyntheticKind,
    pub noise_std: f64,
    pub split_ratio: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DatasetSource::Preset,
            preset: Preset::BostonLike,
            path: None,
            target: "target".into(),
            delimiter: ',',
            n: 400,
            p: 13,
            kind: SyntheticKind::MlpTeacher,
            noise_std: 0.1,
            split_ratio: 0.8,
        }
    }
}

impl DatasetSpec {
    /// Loads or generates the raw (unstandardised) dataset.
    pub fn load(&self, seed: u64) -> anyhow::Result<Dataset> {
        Ok(match self.source {
            DatasetSource::Preset => data::preset_dataset(self.preset, seed)?,
            DatasetSource::Csv => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| anyhow::anyhow!("dataset.path is required for csv datasets"))?;
                let delim = u8::try_from(self.delimiter)
                    .map_err(|_| anyhow::anyhow!("delimiter must be a single-byte character"))?;
                data::load_csv(path, &self.target, delim)?
            }
            DatasetSource::Synthetic => {
                data::synthetic_regression(self.n, self.p, self.kind, self.noise_std, seed)?.dataset
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub user_hidden: Vec<usize>,
    pub label_hidden: Vec<usize>,
    pub cut_dim: usize,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            user_hidden: vec![64, 64],
            label_hidden: vec![64, 64],
            cut_dim: 16,
            activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    pub fn user_config(&self, input: usize) -> crate::Result<MlpConfig> {
        MlpConfig::with_hidden(input, &self.user_hidden, self.cut_dim, self.activation)
    }

    pub fn label_config(&self) -> crate::Result<MlpConfig> {
        MlpConfig::with_hidden(self.cut_dim, &self.label_hidden, 1, self.activation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    /// Completed epochs before the attacked exchanges.
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub optimizer: AdamConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 5,
            loss: LossKind::L1,
            optimizer: AdamConfig::with_lr(1e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub known: usize,
    /// Recorded batches attacked per run.
    pub batches: usize,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Weight used for the triplet term when it is switched on.
    pub triplet_weight: f64,
    pub beta: f64,
    pub iterations: usize,
    pub optimizer: AdamConfig,
    pub surrogate_hidden: Vec<usize>,
    pub surrogate_activation: Activation,
    pub dummy_init: DummyInit,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            known: 4,
            batches: 4,
            batch_size: 5,
            lambda1: 1.0,
            lambda2: 0.005,
            triplet_weight: 1.0,
            beta: 0.0,
            iterations: 2000,
            optimizer: AdamConfig::with_lr(0.005),
            surrogate_hidden: vec![64, 64],
            surrogate_activation: Activation::Relu,
            dummy_init: DummyInit::StandardNormal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub enabled: bool,
    pub iterations: usize,
    pub optimizer: AdamConfig,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            iterations: 2000,
            optimizer: AdamConfig::with_lr(0.005),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseSpec {
    /// Laplace label noise with this ε; absent means no label noise.
    pub label_epsilon: Option<f64>,
    /// Fixed sensitivity; absent means the largest label.
    pub label_sensitivity: Option<f64>,
    pub gradient_noise: bool,
}

/// Which attack regularizers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizers {
    Full,
    AccuracyOnly,
    KnowledgeOnly,
    None,
}

impl Regularizers {
    /// `(λ1, λ2)` given the configured weights.
    pub fn weights(self, lambda1: f64, lambda2: f64) -> (f64, f64) {
        match self {
            Regularizers::Full => (lambda1, lambda2),
            Regularizers::AccuracyOnly => (lambda1, 0.0),
            Regularizers::KnowledgeOnly => (0.0, lambda2),
            Regularizers::None => (0.0, 0.0),
        }
    }
}

impl fmt::Display for Regularizers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regularizers::Full => "full",
            Regularizers::AccuracyOnly => "accuracy-only",
            Regularizers::KnowledgeOnly => "knowledge-only",
            Regularizers::None => "none",
        })
    }
}

/// Lists of values to sweep; an empty list keeps the base setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub known: Vec<usize>,
    pub epochs: Vec<usize>,
    pub surrogate_hidden: Vec<Vec<usize>>,
    pub label_epsilon: Vec<f64>,
    pub gradient_noise: Vec<bool>,
    pub regularizers: Vec<Regularizers>,
    pub triplet: Vec<bool>,
}

/// One fully resolved setting of the sweep axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub known: usize,
    pub epochs: usize,
    pub surrogate_hidden: Vec<usize>,
    pub label_epsilon: Option<f64>,
    pub gradient_noise: bool,
    pub regularizers: Regularizers,
    pub triplet: bool,
    /// `axis=value` pairs of the swept axes only, e.g. `known=4,epochs=15`.
    pub label: String,
}

fn hidden_label(h: &[usize]) -> String {
    if h.is_empty() {
        "linear".into()
    } else {
        h.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if self.repeats == 0 {
            problems.push("repeats must be at least 1".to_string());
        }
        if self.name.is_empty() || self.name.contains(['/', ',']) {
            problems.push("name must be non-empty and contain no '/' or ','".to_string());
        }
        if self.model.cut_dim == 0 {
            problems.push("model.cut_dim must be positive".into());
        }
        if self.train.batch_size == 0 {
            problems.push("train.batch_size must be positive".into());
        }
        if let Err(e) = self.train.optimizer.validate() {
            problems.push(format!("train.optimizer: {e}"));
        }
        if let Err(e) = self.attack.optimizer.validate() {
            problems.push(format!("attack.optimizer: {e}"));
        }
        if self.attack.batches == 0 || self.attack.batch_size == 0 || self.attack.iterations == 0 {
            problems.push("attack.batches, attack.batch_size and attack.iterations must be positive".into());
        }
        if !(0.0 < self.dataset.split_ratio && self.dataset.split_ratio < 1.0) {
            problems.push("dataset.split_ratio must lie in (0, 1)".into());
        }
        if matches!(self.dataset.source, DatasetSource::Csv) && self.dataset.path.is_none() {
            problems.push("dataset.path is required for csv datasets".into());
        }
        for p in self.points() {
            if let Some(e) = p.label_epsilon {
                if !(e > 0.0) {
                    problems.push(format!("label epsilon must be positive, got {e}"));
                }
            }
            if self.baseline.enabled && p.known == 0 {
                problems.push(format!(
                    "point `{}` has no known samples; disable the baseline or use known >= 1",
                    p.label
                ));
            }
        }
        for (name, v) in [
            ("attack.lambda1", self.attack.lambda1),
            ("attack.lambda2", self.attack.lambda2),
            ("attack.triplet_weight", self.attack.triplet_weight),
            ("attack.beta", self.attack.beta),
        ] {
            if !(v >= 0.0) {
                problems.push(format!("{name} must be non-negative"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            problems.dedup();
            Err(problems)
        }
    }

    /// Cartesian product of the non-empty sweep axes, in a fixed axis order.
    pub fn points(&self) -> Vec<SweepPoint> {
        let s = &self.sweep;
        let pick = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
        let knowns = pick(&s.known, self.attack.known);
        let epochs = pick(&s.epochs, self.train.epochs);
        let hiddens = if s.surrogate_hidden.is_empty() {
            vec![self.attack.surrogate_hidden.clone()]
        } else {
            s.surrogate_hidden.clone()
        };
        let eps: Vec<Option<f64>> = if s.label_epsilon.is_empty() {
            vec![self.defense.label_epsilon]
        } else {
            s.label_epsilon.iter().map(|e| Some(*e)).collect()
        };
        let gnoise = if s.gradient_noise.is_empty() {
            vec![self.defense.gradient_noise]
        } else {
            s.gradient_noise.clone()
        };
        let regs = if s.regularizers.is_empty() {
            vec![Regularizers::Full]
        } else {
            s.regularizers.clone()
        };
        let trips = if s.triplet.is_empty() {
            vec![false]
        } else {
            s.triplet.clone()
        };

        let mut out = Vec::new();
        for &known in &knowns {
            for &ep in &epochs {
                for h in &hiddens {
                    for &e in &eps {
                        for &gn in &gnoise {
                            for &reg in &regs {
                                for &tr in &trips {
                                    let mut parts = Vec::new();
                                    if !s.known.is_empty() {
                                        parts.push(format!("known={known}"));
                                    }
                                    if !s.epochs.is_empty() {
                                        parts.push(format!("epochs={ep}"));
                                    }
                                    if !s.surrogate_hidden.is_empty() {
                                        parts.push(format!("surrogate={}", hidden_label(h)));
                                    }
                                    if !s.label_epsilon.is_empty() {
                                        parts.push(format!("epsilon={}", e.unwrap_or(0.0)));
                                    }
                                    if !s.gradient_noise.is_empty() {
                                        parts.push(format!("gradient_noise={gn}"));
                                    }
                                    if !s.regularizers.is_empty() {
                                        parts.push(format!("regularizers={reg}"));
                                    }
                                    if !s.triplet.is_empty() {
                                        parts.push(format!("triplet={tr}"));
                                    }
                                    let label = if parts.is_empty() {
                                        "default".to_string()
                                    } else {
                                        parts.join(",")
                                    };
                                    out.push(SweepPoint {
                                        known,
                                        epochs: ep,
                                        surrogate_hidden: h.clone(),
                                        label_epsilon: e,
                                        gradient_noise: gn,
                                        regularizers: reg,
                                        triplet: tr,
                                        label,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Attack configuration for a sweep point (seed left at 0).
    pub fn attack_config(&self, point: &SweepPoint) -> AttackConfig {
        let a = &self.attack;
        let (lambda1, lambda2) = point.regularizers.weights(a.lambda1, a.lambda2);
        AttackConfig {
            lambda1,
            lambda2,
            lambda3: if point.triplet { a.triplet_weight } else { 0.0 },
            beta: a.beta,
            iterations: a.iterations,
            batch_size: a.batch_size,
            surrogate: SurrogateSpec {
                hidden: point.surrogate_hidden.clone(),
                activation: a.surrogate_activation,
            },
            loss: self.train.loss,
            optimizer: a.optimizer,
            dummy_init: a.dummy_init,
            freeze_surrogate: false,
            seed: 0,
        }
    }

    pub fn baseline_config(&self, point: &SweepPoint) -> BaselineConfig {
        BaselineConfig {
            surrogate: SurrogateSpec {
                hidden: point.surrogate_hidden.clone(),
                activation: self.attack.surrogate_activation,
            },
            iterations: self.baseline.iterations,
            optimizer: self.baseline.optimizer,
            seed: 0,
        }
    }

    /// Digest of everything that determines a point's results.
    pub fn point_digest(&self, point: &SweepPoint) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            seed: u64,
            dataset: &'a DatasetSpec,
            model: &'a ModelSpec,
            train: &'a TrainSpec,
            attack: &'a AttackSpec,
            baseline: &'a BaselineSpec,
            defense: &'a DefenseSpec,
            point: &'a SweepPoint,
        }
        let key = Key {
            seed: self.seed,
            dataset: &self.dataset,
            model: &self.model,
            train: &self.train,
            attack: &self.attack,
            baseline: &self.baseline,
            defense: &self.defense,
            point,
        };
        let json = serde_json::to_string(&key).expect("config serialises");
        hex16(&Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Parses a TOML config and applies `key.path=value` overrides on top.
pub fn load_config(text: &str, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let mut table: toml::Table = if text.trim().is_empty() {
        toml::Table::new()
    } else {
        toml::from_str(text)?
    };
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table).try_into()?;
    Ok(cfg)
}

/// Sets one dotted key. The value is read as a TOML literal and falls back to a
/// plain string, so `--set dataset.preset=boston-like` needs no quotes.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow::anyhow!("override `{assignment}` is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        anyhow::bail!("override `{assignment}` has an empty key segment");
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow::anyhow!("`{seg}` in `{key}` is not a table"))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}
