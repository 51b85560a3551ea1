//! Attack metrics and result tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(inferred: &[f64], truth: &[f64]) -> Result<()> {
    if inferred.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    if inferred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} inferred labels for {} true labels",
            inferred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Average L1 distance between inferred and true labels.
pub fn alv(inferred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(inferred, truth)?;
    Ok(inferred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / truth.len() as f64)
}

/// Average relative error `|y* - y| / |y|`.
pub fn aer(inferred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(inferred, truth)?;
    if let Some(y) = truth.iter().find(|y| y.abs() < 1e-9) {
        return Err(Error::Metric(format!(
            "true label {y} is (near) zero, relative error undefined; use ALV instead"
        )));
    }
    Ok(inferred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs() / b.abs())
        .sum::<f64>()
        / truth.len() as f64)
}

/// One result line. The column set is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment_id: String,
    pub dataset: String,
    pub config_digest: String,
    pub seed: u64,
    pub alv: f64,
    pub aer: f64,
    pub model_test_l1: f64,
    pub wall_ms: u64,
}

pub const CSV_COLUMNS: [&str; 8] = [
    "experiment_id",
    "dataset",
    "config_digest",
    "seed",
    "alv",
    "aer",
    "model_test_l1",
    "wall_ms",
];

pub fn write_rows_csv<W: Write>(w: W, rows: &[MetricRow]) -> anyhow::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(CSV_COLUMNS)?;
    }
    for row in rows {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(r: R) -> anyhow::Result<Vec<MetricRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for row in rd.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn rows_to_json(rows: &[MetricRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialise")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single observation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub experiment_id: String,
    pub dataset: String,
    pub n: usize,
    pub alv: Stat,
    pub aer: Stat,
    pub model_test_l1: Stat,
}

/// Groups rows by `(experiment_id, dataset)`; groups come back sorted by key.
pub fn aggregate(rows: &[MetricRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(&str, &str), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.experiment_id.as_str(), r.dataset.as_str()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((id, ds), rs)| {
            // sorting makes the float sums independent of row order
            let col = |f: fn(&MetricRow) -> f64| {
                let mut v: Vec<f64> = rs.iter().map(|r| f(r)).collect();
                v.sort_by(f64::total_cmp);
                Stat::of(&v)
            };
            Aggregate {
                experiment_id: id.to_string(),
                dataset: ds.to_string(),
                n: rs.len(),
                alv: col(|r| r.alv),
                aer: col(|r| r.aer),
                model_test_l1: col(|r| r.model_test_l1),
            }
        })
        .collect()
}

pub fn write_aggregates_csv<W: Write>(w: W, aggs: &[Aggregate]) -> anyhow::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "experiment_id",
        "dataset",
        "n",
        "alv_mean",
        "alv_std",
        "aer_mean",
        "aer_std",
        "model_test_l1_mean",
        "model_test_l1_std",
    ])?;
    for a in aggs {
        wr.write_record([
            a.experiment_id.clone(),
            a.dataset.clone(),
            a.n.to_string(),
            a.alv.mean.to_string(),
            a.alv.std.to_string(),
            a.aer.mean.to_string(),
            a.aer.std.to_string(),
            a.model_test_l1.mean.to_string(),
            a.model_test_l1.std.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, aer: f64) -> MetricRow {
        MetricRow {
            experiment_id: id.into(),
            dataset: "d".into(),
            config_digest: "abc".into(),
            seed: 1,
            alv: aer * 10.0,
            aer,
            model_test_l1: 2.0,
            wall_ms: 5,
        }
    }

    #[test]
    fn alv_examples() {
        assert_eq!(alv(&[3.0], &[2.0]).unwrap(), 1.0);
        assert_eq!(alv(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(alv(&[1.0, 2.0, 4.0], &[2.0, 2.0, 2.0]).unwrap(), 1.0);
        assert!(alv(&[], &[]).is_err());
        assert!(alv(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aer_examples() {
        assert!((aer(&[11.0], &[10.0]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(aer(&[4.0, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        assert_eq!(aer(&[5.0, 15.0], &[10.0, 10.0]).unwrap(), 0.5);
        let err = aer(&[1.0], &[0.0]).unwrap_err();
        assert!(err.to_string().contains("ALV"));
        assert_eq!(aer(&[-11.0], &[-10.0]).unwrap(), 0.1);
    }

    #[test]
    fn aggregate_examples() {
        let single = aggregate(&[row("a", 0.02)]);
        assert_eq!(single[0].aer, Stat { mean: 0.02, std: 0.0 });
        let pair = aggregate(&[row("a", 0.02), row("a", 0.04)]);
        assert!((pair[0].aer.mean - 0.03).abs() < 1e-15);
        assert_eq!(pair[0].n, 2);
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &[row("a", 0.1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(read_rows_csv(text.as_bytes()).unwrap(), vec![row("a", 0.1)]);
    }
}
