//! Regression datasets: CSV ingestion, splitting, standardisation and
//! seeded synthetic generators sized like common tabular benchmarks.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mlp::{Activation, Mlp, MlpConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// `[n, p]`
    pub features: Tensor,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    pub provenance: String,
    /// 1-based data row numbers (header excluded) dropped while loading.
    #[serde(default)]
    pub rejected_rows: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<f64>,
        feature_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let (n, p) = features.dims2();
        if features.rank() != 2 || n != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                n,
                labels.len()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                p
            )));
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::Data("labels must be finite".into()));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            feature_names,
            provenance: provenance.into(),
            rejected_rows: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.dims2().1
    }

    pub fn max_label(&self) -> f64 {
        self.labels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_label(&self) -> f64 {
        self.labels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Short content hash over features and labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.features.data().iter().chain(&self.labels) {
            h.update(v.to_le_bytes());
        }
        hex16(&h.finalize())
    }

    pub fn rows(&self, ids: &[usize]) -> Tensor {
        self.features.select_rows(ids)
    }

    pub fn labels_at(&self, ids: &[usize]) -> Vec<f64> {
        ids.iter().map(|&i| self.labels[i]).collect()
    }

    /// Copy of the dataset with a different label vector.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(
            self.name.clone(),
            self.features.clone(),
            labels,
            self.feature_names.clone(),
            self.provenance.clone(),
        )?;
        out.rejected_rows = self.rejected_rows.clone();
        Ok(out)
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads a headered CSV. Every column except `target` becomes a feature; rows
/// with a missing or non-numeric cell are dropped and their row numbers kept in
/// [`Dataset::rejected_rows`].
pub fn load_csv(path: impl AsRef<Path>, target: &str, delimiter: u8) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    parse_csv(&name, &text, target, delimiter)
}

pub fn parse_csv(name: &str, text: &str, target: &str, delimiter: u8) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let target_col = headers.iter().position(|h| h == target).ok_or_else(|| {
        Error::Data(format!(
            "target column `{target}` not found; available columns: {}",
            headers.join(", ")
        ))
    })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_col)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::Data("no feature columns besides the target".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut rejected = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let Ok(record) = record else {
            rejected.push(row_no);
            continue;
        };
        if record.len() != headers.len() {
            rejected.push(row_no);
            continue;
        }
        let parsed: Option<Vec<f64>> = record
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(values) => {
                labels.push(values[target_col]);
                features.extend(
                    values
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != target_col)
                        .map(|(_, v)| *v),
                );
            }
            None => rejected.push(row_no),
        }
    }
    if labels.is_empty() {
        return Err(Error::Data(format!(
            "no usable rows ({} rejected)",
            rejected.len()
        )));
    }
    let p = feature_names.len();
    let mut ds = Dataset::new(
        name,
        Tensor::new(vec![labels.len(), p], features)?,
        labels,
        feature_names,
        format!("csv, target `{target}`"),
    )?;
    ds.rejected_rows = rejected;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Subset of `train` whose labels the attacker knows.
    pub known: Vec<usize>,
    pub seed: u64,
}

/// Uniform shuffle; the first `ratio` share becomes the training split and
/// `n_known` ids are drawn from it.
pub fn split_dataset(ds: &Dataset, ratio: f64, n_known: usize, seed: u64) -> Result<SplitIndices> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..ds.len()).collect();
    ids.shuffle(&mut rng);
    let n_train = ((ds.len() as f64) * ratio).round() as usize;
    let test = ids.split_off(n_train);
    let train = ids;
    if n_known > train.len() {
        return Err(Error::Config(format!(
            "{n_known} known samples requested but the training split has {}",
            train.len()
        )));
    }
    let known: Vec<usize> = train.choose_multiple(&mut rng, n_known).copied().collect();
    Ok(SplitIndices {
        train,
        test,
        known,
        seed,
    })
}

impl SplitIndices {
    /// Redraws the known subset without touching the train/test partition.
    pub fn with_known(&self, n_known: usize, seed: u64) -> Result<Self> {
        if n_known > self.train.len() {
            return Err(Error::Config(format!(
                "{n_known} known samples requested but the training split has {}",
                self.train.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let known = self.train.choose_multiple(&mut rng, n_known).copied().collect();
        Ok(Self {
            known,
            ..self.clone()
        })
    }

    pub fn known_set(&self) -> BTreeSet<usize> {
        self.known.iter().copied().collect()
    }
}

/// Per-feature z-score statistics computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain numbers serialise")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let (n, p) = x.dims2();
        let mut data = x.data().to_vec();
        for i in 0..n {
            for j in 0..p {
                let v = &mut data[i * p + j];
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        Tensor::new(vec![n, p], data).expect("shape preserved")
    }
}

/// Z-scores features with training-split statistics (sample std, clamped to 1
/// for constant columns). Labels are left untouched.
pub fn standardize(ds: &Dataset, split: &SplitIndices) -> Result<(Dataset, Standardization)> {
    if split.train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let p = ds.num_features();
    let n = split.train.len() as f64;
    let mut means = vec![0.0; p];
    for &i in &split.train {
        for (m, v) in means.iter_mut().zip(ds.features.row(i)) {
            *m += v / n;
        }
    }
    let mut stds = vec![0.0; p];
    for &i in &split.train {
        for ((s, v), m) in stds.iter_mut().zip(ds.features.row(i)).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let denom = (n - 1.0).max(1.0);
    for s in &mut stds {
        *s = (*s / denom).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let stats = Standardization {
        feature_names: ds.feature_names.clone(),
        means,
        stds,
    };
    let mut out = ds.clone();
    out.features = stats.apply(&ds.features);
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Linear,
    MlpTeacher,
}

/// The function that generated a synthetic dataset's noiseless labels.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Linear { weights: Vec<f64>, bias: f64 },
    Teacher(Mlp),
}

#[derive(Debug, Clone)]
pub struct SyntheticRegression {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

/// Width of the hidden layer of the teacher network.
pub const TEACHER_HIDDEN: usize = 32;

/// Features i.i.d. `N(0, 1)`, labels from a seeded ground-truth function plus
/// `N(0, noise_std²)` noise.
pub fn synthetic_regression(
    n: usize,
    p: usize,
    kind: SyntheticKind,
    noise_std: f64,
    seed: u64,
) -> Result<SyntheticRegression> {
    if n == 0 || p == 0 {
        return Err(Error::Config("synthetic data needs n > 0 and p > 0".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Config("noise_std must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let features = Tensor::new(vec![n, p], x)?;

    let (clean, truth) = match kind {
        SyntheticKind::Linear => {
            let weights: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let bias: f64 = rng.sample(StandardNormal);
            let clean = (0..n)
                .map(|i| {
                    features
                        .row(i)
                        .iter()
                        .zip(&weights)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        + bias
                })
                .collect::<Vec<_>>();
            (clean, GroundTruth::Linear { weights, bias })
        }
        SyntheticKind::MlpTeacher => {
            let cfg = MlpConfig::new(vec![p, TEACHER_HIDDEN, 1], Activation::Tanh)?;
            let teacher = Mlp::init(cfg, &mut rng)?;
            let clean = teacher.forward(&features)?.into_data();
            (clean, GroundTruth::Teacher(teacher))
        }
    };
    let labels = clean
        .iter()
        .map(|c| {
            let e: f64 = StandardNormal.sample(&mut rng);
            c + noise_std * e
        })
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let provenance = format!("synthetic {kind:?}, noise_std {noise_std}, seed {seed}");
    let dataset = Dataset::new("synthetic", features, labels, names, provenance)?;
    Ok(SyntheticRegression { dataset, truth })
}

/// Label statistics a synthetic stand-in is matched to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetShape {
    pub n: usize,
    pub p: usize,
    pub label_mean: f64,
    pub label_std: f64,
    pub label_min: f64,
    pub label_max: f64,
    /// Label noise relative to the label std.
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 400 rows, 13 features, prices in `[5, 50]`.
    BostonLike,
    /// 6000 rows, 4 features, power output in `[420.26, 495.76]`.
    EnergyLike,
    /// 16000 rows, 8 features, values in `[0.15, 5.0]`.
    CaliforniaLike,
}

impl Preset {
    pub fn shape(self) -> PresetShape {
        match self {
            Preset::BostonLike => PresetShape {
                n: 400,
                p: 13,
                label_mean: 22.5,
                label_std: 9.0,
                label_min: 5.0,
                label_max: 50.0,
                noise: 0.12,
            },
            Preset::EnergyLike => PresetShape {
                n: 6000,
                p: 4,
                label_mean: 454.4,
                label_std: 17.0,
                label_min: 420.26,
                label_max: 495.76,
                noise: 0.12,
            },
            Preset::CaliforniaLike => PresetShape {
                n: 16000,
                p: 8,
                label_mean: 2.07,
                label_std: 1.15,
                label_min: 0.15,
                label_max: 5.0,
                noise: 0.12,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::BostonLike => "boston-like",
            Preset::EnergyLike => "energy-like",
            Preset::CaliforniaLike => "california-like",
        }
    }
}

/// Synthetic stand-in for a benchmark: a seeded tanh teacher on `N(0, 1)`
/// features, affinely mapped to the preset's label mean and std, plus noise,
/// clamped to the preset's label range.
pub fn preset_dataset(preset: Preset, seed: u64) -> Result<Dataset> {
    let s = preset.shape();
    let syn = synthetic_regression(s.n, s.p, SyntheticKind::MlpTeacher, 0.0, seed)?;
    let clean = &syn.dataset.labels;
    let n = clean.len() as f64;
    let mean = clean.iter().sum::<f64>() / n;
    let std = (clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1abe_15);
    let labels = clean
        .iter()
        .map(|v| {
            let z = (v - mean) / std;
            let e: f64 = rng.sample(StandardNormal);
            let y = s.label_mean + s.label_std * (z + s.noise * e);
            y.clamp(s.label_min, s.label_max)
        })
        .collect();
    let mut ds = syn.dataset.with_labels(labels)?;
    ds.name = preset.name().to_string();
    ds.provenance = format!("synthetic {} stand-in, seed {seed}", preset.name());
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_csv() {
        let ds = parse_csv("toy", "a,b,price\n1,2,3\n4,5,6\n7,8,9\n", "price", b',').unwrap();
        assert_eq!(ds.features.shape(), &[3, 2]);
        assert_eq!(ds.labels, vec![3.0, 6.0, 9.0]);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn missing_target_lists_columns() {
        let err = parse_csv("toy", "a,b\n1,2\n", "price", b',').unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("price") && msg.contains("a, b"), "{msg}");
    }

    #[test]
    fn bad_rows_are_dropped_with_row_numbers() {
        let ds = parse_csv("toy", "a;y\n1;2\n;3\nx;4\n5;6\n", "y", b';').unwrap();
        assert_eq!(ds.labels, vec![2.0, 6.0]);
        assert_eq!(ds.rejected_rows, vec![2, 3]);
        assert!(parse_csv("toy", "a,y\nq,1\n", "y", b',').is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = preset_dataset(Preset::BostonLike, 3).unwrap();
        let s = split_dataset(&ds, 0.8, 4, 11).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (320, 80));
        assert_eq!(s, split_dataset(&ds, 0.8, 4, 11).unwrap());
        assert!(split_dataset(&ds, 0.8, 0, 11).unwrap().known.is_empty());
        assert!(split_dataset(&ds, 0.8, 321, 11).is_err());
    }

    #[test]
    fn constant_feature_standardises_to_zero() {
        let x = Tensor::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let ds = Dataset::new("c", x, vec![0.0; 3], vec!["a".into(), "b".into()], "").unwrap();
        let split = SplitIndices {
            train: vec![0, 1, 2],
            test: vec![],
            known: vec![],
            seed: 0,
        };
        let (out, stats) = standardize(&ds, &split).unwrap();
        assert_eq!(stats.stds[1], 1.0);
        assert!(out.features.data().iter().skip(1).step_by(2).all(|v| *v == 0.0));
    }

    #[test]
    fn linear_noiseless_labels_are_exact() {
        let syn = synthetic_regression(20, 3, SyntheticKind::Linear, 0.0, 9).unwrap();
        let GroundTruth::Linear { weights, bias } = &syn.truth else {
            panic!()
        };
        for i in 0..20 {
            let row = syn.dataset.features.row(i);
            let y: f64 = row.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + bias;
            assert_eq!(y, syn.dataset.labels[i]);
        }
    }

    #[test]
    fn presets_match_label_ranges() {
        for preset in [Preset::BostonLike, Preset::EnergyLike, Preset::CaliforniaLike] {
            let s = preset.shape();
            let ds = preset_dataset(preset, 1).unwrap();
            assert_eq!((ds.len(), ds.num_features()), (s.n, s.p));
            assert!(ds.min_label() >= s.label_min && ds.max_label() <= s.label_max);
            let mean = ds.labels.iter().sum::<f64>() / ds.len() as f64;
            assert!((mean - s.label_mean).abs() < 0.1 * s.label_std, "{preset:?} mean {mean}");
        }
    }
}
