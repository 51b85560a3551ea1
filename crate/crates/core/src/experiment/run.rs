use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LogMode, SweepPoint};
use crate::attack::{gather_known, run_attack, run_baseline, AttackBatch, AttackResult};
use crate::data::{split_dataset, standardize, Dataset, SplitIndices, Standardization};
use crate::defense::{GradientNoiseConfig, LabelNoiseConfig};
use crate::metrics::{aer, alv, write_rows_csv, rows_to_json, MetricRow};
use crate::protocol::{
    evaluate_l1, train_composite, write_gradient_log, CompositeModel, LabelPartyDefenses,
    SharedGradientRecord, TrainConfig,
};

/// SplitMix64 finaliser, used to derive independent seeds from the master seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds for one repeat of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RepeatSeeds {
    pub repeat: u64,
    pub split: u64,
    pub model: u64,
    pub train: u64,
    pub known: u64,
    pub attack: u64,
    pub label_noise: u64,
    pub gradient_noise: u64,
}

impl RepeatSeeds {
    pub fn derive(master: u64, repeat: usize) -> Self {
        let r = mix_seed(master, repeat as u64);
        Self {
            repeat: r,
            split: mix_seed(r, 1),
            model: mix_seed(r, 2),
            train: mix_seed(r, 3),
            known: mix_seed(r, 4),
            attack: mix_seed(r, 5),
            label_noise: mix_seed(r, 6),
            gradient_noise: mix_seed(r, 7),
        }
    }
}

/// Standardised dataset and the shared train/test split of one repeat.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub raw: Dataset,
    pub data: Dataset,
    pub split: SplitIndices,
    pub stats: Standardization,
}

pub fn prepare_data(cfg: &ExperimentConfig, seeds: &RepeatSeeds) -> anyhow::Result<PreparedData> {
    let raw = cfg.dataset.load(cfg.seed)?;
    let split = split_dataset(&raw, cfg.dataset.split_ratio, 0, seeds.split)?;
    let (data, stats) = standardize(&raw, &split)?;
    Ok(PreparedData {
        raw,
        data,
        split,
        stats,
    })
}

/// A trained target and everything recorded while training it.
#[derive(Debug, Clone)]
pub struct TrainedTarget {
    pub model: CompositeModel,
    pub log: Vec<SharedGradientRecord>,
    /// Test L1 after `observe_epoch` completed epochs.
    pub test_l1: f64,
    /// Epoch whose exchanges are attacked.
    pub observe_epoch: usize,
}

impl TrainedTarget {
    pub fn observed_records(&self) -> impl Iterator<Item = (usize, &SharedGradientRecord)> {
        self.log
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.epoch == self.observe_epoch)
    }
}

/// Trains for `epochs + 1` epochs: the first `epochs` shape the target, the
/// exchanges of the last one are the attacker's observations.
pub fn train_target(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    seeds: &RepeatSeeds,
    prepared: &PreparedData,
) -> anyhow::Result<TrainedTarget> {
    let model = CompositeModel::init(
        cfg.model.user_config(prepared.data.num_features())?,
        cfg.model.label_config()?,
        seeds.model,
    )?;
    let initial_l1 = evaluate_l1(&model, &prepared.data, &prepared.split.test)?;
    let train = TrainConfig {
        epochs: point.epochs + 1,
        batch_size: cfg.train.batch_size,
        loss: cfg.train.loss,
        optimizer: cfg.train.optimizer,
        seed: seeds.train,
    };
    let defenses = LabelPartyDefenses {
        label_noise: point.label_epsilon.map(|epsilon| LabelNoiseConfig {
            epsilon,
            sensitivity: cfg.defense.label_sensitivity,
            seed: seeds.label_noise,
        }),
        gradient_noise: point.gradient_noise.then_some(GradientNoiseConfig {
            seed: seeds.gradient_noise,
        }),
    };
    let out = train_composite(model, &prepared.data, &prepared.split, &train, &defenses)?;
    let test_l1 = if point.epochs == 0 {
        initial_l1
    } else {
        out.test_l1[point.epochs - 1]
    };
    Ok(TrainedTarget {
        model: out.model,
        log: out.log,
        test_l1,
        observe_epoch: point.epochs,
    })
}

/// Result of attacking one trained target at one sweep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub attack: Vec<AttackResult>,
    pub baseline: Vec<AttackResult>,
    pub truth: Vec<f64>,
    pub attack_labels: Vec<f64>,
    pub baseline_labels: Vec<f64>,
    pub test_l1: f64,
    pub attack_ms: u64,
    pub baseline_ms: u64,
}

/// Which inference methods to run against a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Methods {
    pub attack: bool,
    pub baseline: bool,
}

impl Methods {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            attack: true,
            baseline: cfg.baseline.enabled,
        }
    }
}

/// Attacks the first `attack.batches` observed exchanges of `target`.
pub fn attack_target(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    seeds: &RepeatSeeds,
    prepared: &PreparedData,
    target: &TrainedTarget,
    methods: Methods,
) -> anyhow::Result<RunOutcome> {
    let split = prepared.split.with_known(point.known, seeds.known)?;
    let known_ids = split.known_set();
    let known_pairs: Vec<(usize, f64)> = split
        .known
        .iter()
        .map(|&i| (i, prepared.raw.labels[i]))
        .collect();

    let mut attack_cfg = cfg.attack_config(point);
    let mut baseline_cfg = cfg.baseline_config(point);
    let mut out = RunOutcome {
        attack: Vec::new(),
        baseline: Vec::new(),
        truth: Vec::new(),
        attack_labels: Vec::new(),
        baseline_labels: Vec::new(),
        test_l1: target.test_l1,
        attack_ms: 0,
        baseline_ms: 0,
    };
    let batches = target
        .observed_records()
        .filter_map(|(i, r)| AttackBatch::from_record(r, &known_ids, cfg.attack.batch_size).map(|b| (i, b)))
        .take(cfg.attack.batches);
    for (b, (anchor, batch)) in batches.enumerate() {
        let truth = prepared.raw.labels_at(&batch.sample_indices);
        let known = gather_known(&target.log, anchor, &known_pairs)?;

        if methods.attack {
            attack_cfg.seed = mix_seed(seeds.attack, 2 * b as u64);
            let t = Instant::now();
            let res = run_attack(&batch, &known, &attack_cfg, Some(&truth))
                .with_context(|| format!("attack on batch {b} of `{}`", point.label))?;
            out.attack_ms += t.elapsed().as_millis() as u64;
            out.attack_labels.extend(&res.inferred_labels);
            out.attack.push(res);
        }
        if methods.baseline {
            baseline_cfg.seed = mix_seed(seeds.attack, 2 * b as u64 + 1);
            let t = Instant::now();
            let res = run_baseline(&known, &batch, &baseline_cfg, Some(&truth))
                .with_context(|| format!("baseline on batch {b} of `{}`", point.label))?;
            out.baseline_ms += t.elapsed().as_millis() as u64;
            out.baseline_labels.extend(&res.inferred_labels);
            out.baseline.push(res);
        }
        out.truth.extend(truth);
    }
    if out.truth.is_empty() {
        anyhow::bail!("no attackable exchanges in epoch {}", target.observe_epoch);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Failure {
    pub point: String,
    pub repeat: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<MetricRow>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct TrainKey {
    repeat: usize,
    epochs: usize,
    label_epsilon: Option<u64>,
    gradient_noise: bool,
}

impl TrainKey {
    fn of(point: &SweepPoint, repeat: usize) -> Self {
        Self {
            repeat,
            epochs: point.epochs,
            label_epsilon: point.label_epsilon.map(f64::to_bits),
            gradient_noise: point.gradient_noise,
        }
    }
}

/// Runs every sweep point for every repeat and returns the metric rows in
/// `(point, repeat, method)` order. Targets are trained once per distinct
/// training setting and shared across the attack-side axes.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> anyhow::Result<(SweepOutput, Vec<(TrainKeyInfo, TrainedTarget)>)> {
    if let Err(problems) = cfg.validate() {
        anyhow::bail!("invalid configuration:\n  - {}", problems.join("\n  - "));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| sweep_inner(cfg))
}

/// Identifies a cached training run in the output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainKeyInfo {
    pub repeat: usize,
    pub epochs: usize,
    pub label_epsilon: Option<f64>,
    pub gradient_noise: bool,
}

impl TrainKeyInfo {
    pub fn file_stem(&self) -> String {
        let mut s = format!("r{}-e{}", self.repeat, self.epochs);
        if let Some(e) = self.label_epsilon {
            s.push_str(&format!("-eps{e}"));
        }
        if self.gradient_noise {
            s.push_str("-gnoise");
        }
        s
    }
}

fn sweep_inner(cfg: &ExperimentConfig) -> anyhow::Result<(SweepOutput, Vec<(TrainKeyInfo, TrainedTarget)>)> {
    let points = cfg.points();
    let seeds: Vec<RepeatSeeds> = (0..cfg.repeats).map(|r| RepeatSeeds::derive(cfg.seed, r)).collect();
    let prepared: Vec<PreparedData> = seeds
        .par_iter()
        .map(|s| prepare_data(cfg, s))
        .collect::<anyhow::Result<_>>()?;

    let mut train_jobs: BTreeMap<TrainKey, (usize, usize)> = BTreeMap::new();
    for (pi, p) in points.iter().enumerate() {
        for r in 0..cfg.repeats {
            train_jobs.entry(TrainKey::of(p, r)).or_insert((pi, r));
        }
    }
    let jobs: Vec<(TrainKey, (usize, usize))> = train_jobs.into_iter().collect();
    let trained: Vec<(TrainKey, Result<Arc<TrainedTarget>, String>)> = jobs
        .par_iter()
        .map(|(key, (pi, r))| {
            let res = train_target(cfg, &points[*pi], &seeds[*r], &prepared[*r])
                .map(Arc::new)
                .map_err(|e| format!("{e:#}"));
            (key.clone(), res)
        })
        .collect();
    let cache: BTreeMap<TrainKey, Result<Arc<TrainedTarget>, String>> = trained.into_iter().collect();

    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|pi| (0..cfg.repeats).map(move |r| (pi, r)))
        .collect();
    let results: Vec<(usize, usize, Result<RunOutcome, String>)> = tasks
        .par_iter()
        .map(|&(pi, r)| {
            let p = &points[pi];
            let res = match &cache[&TrainKey::of(p, r)] {
                Ok(target) => attack_target(cfg, p, &seeds[r], &prepared[r], target, Methods::from_config(cfg))
                    .map_err(|e| format!("{e:#}")),
                Err(e) => Err(format!("training failed: {e}")),
            };
            (pi, r, res)
        })
        .collect();

    let mut out = SweepOutput::default();
    for (pi, r, res) in results {
        let p = &points[pi];
        let digest = cfg.point_digest(p);
        match res {
            Ok(run) => {
                let mut push = |method: &str, labels: &[f64], ms: u64| -> anyhow::Result<()> {
                    out.rows.push(MetricRow {
                        experiment_id: format!("{}/{}/{}", cfg.name, method, p.label),
                        dataset: prepared[r].raw.name.clone(),
                        config_digest: digest.clone(),
                        seed: seeds[r].repeat,
                        alv: alv(labels, &run.truth)?,
                        aer: aer(labels, &run.truth)?,
                        model_test_l1: run.test_l1,
                        wall_ms: ms,
                    });
                    Ok(())
                };
                push("attack", &run.attack_labels, run.attack_ms)?;
                if cfg.baseline.enabled {
                    push("baseline", &run.baseline_labels, run.baseline_ms)?;
                }
            }
            Err(error) => out.failures.push(Failure {
                point: p.label.clone(),
                repeat: r,
                error,
            }),
        }
    }

    let targets = cache
        .into_iter()
        .filter_map(|(k, v)| {
            v.ok().map(|t| {
                (
                    TrainKeyInfo {
                        repeat: k.repeat,
                        epochs: k.epochs,
                        label_epsilon: k.label_epsilon.map(f64::from_bits),
                        gradient_noise: k.gradient_noise,
                    },
                    Arc::unwrap_or_clone(t),
                )
            })
        })
        .collect();
    Ok((out, targets))
}

/// Runs the sweep and writes every output file under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> anyhow::Result<SweepOutput> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("effective-config.toml"), cfg.to_toml())?;
    let (out, targets) = run_sweep(cfg, jobs)?;

    if cfg.logs != LogMode::None {
        let dir = out_dir.join("logs");
        fs::create_dir_all(&dir)?;
        for (info, t) in &targets {
            let records: Vec<SharedGradientRecord> = match cfg.logs {
                LogMode::All => t.log.clone(),
                _ => t.observed_records().map(|(_, r)| r.clone()).collect(),
            };
            write_gradient_log(dir.join(format!("{}.jsonl", info.file_stem())), &records)?;
        }
    }
    write_results(out_dir, &out.rows)?;
    let failures = out_dir.join("failures.json");
    if out.failures.is_empty() {
        let _ = fs::remove_file(&failures);
    } else {
        fs::write(&failures, serde_json::to_string_pretty(&out.failures)?)?;
    }
    super::report::write_report(out_dir, &out.rows)?;
    Ok(out)
}

pub fn write_results(out_dir: &Path, rows: &[MetricRow]) -> anyhow::Result<()> {
    write_rows_csv(fs::File::create(out_dir.join("results.csv"))?, rows)?;
    fs::write(out_dir.join("results.json"), rows_to_json(rows))?;
    Ok(())
}
