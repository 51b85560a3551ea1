//! Summary tables and plot-ready series derived from metric rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::metrics::{aggregate, write_aggregates_csv, Aggregate, MetricRow, Stat};

/// Parsed `name/method/axis=value,...` experiment id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentId {
    pub name: String,
    pub method: String,
    pub axes: Vec<(String, String)>,
}

impl ExperimentId {
    pub fn parse(id: &str) -> Self {
        let mut parts = id.splitn(3, '/');
        let name = parts.next().unwrap_or_default().to_string();
        let method = parts.next().unwrap_or_default().to_string();
        let axes = parts
            .next()
            .filter(|s| *s != "default")
            .map(|s| {
                s.split(',')
                    .filter_map(|kv| kv.split_once('='))
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect()
            })
            .unwrap_or_default();
        Self { name, method, axes }
    }
}

/// One point of a plotted series.
#[derive(Debug, Clone, Serialize)]
pub struct PlotPoint {
    pub x: String,
    pub series: String,
    pub y: f64,
    pub y_std: f64,
    pub n: usize,
}

/// Series along `axis` for one statistic; every other axis and the method
/// become part of the series name.
pub fn series_along(aggs: &[Aggregate], axis: &str, stat: fn(&Aggregate) -> Stat) -> Vec<PlotPoint> {
    let mut out = Vec::new();
    for a in aggs {
        let id = ExperimentId::parse(&a.experiment_id);
        let Some((_, x)) = id.axes.iter().find(|(k, _)| k == axis) else {
            continue;
        };
        let mut series = vec![id.method.clone()];
        series.extend(
            id.axes
                .iter()
                .filter(|(k, _)| k != axis)
                .map(|(k, v)| format!("{k}={v}")),
        );
        if !a.dataset.is_empty() {
            series.push(a.dataset.clone());
        }
        let s = stat(a);
        out.push(PlotPoint {
            x: x.clone(),
            series: series.join(","),
            y: s.mean,
            y_std: s.std,
            n: a.n,
        });
    }
    out.sort_by(|a, b| {
        a.series
            .cmp(&b.series)
            .then_with(|| numeric_order(&a.x, &b.x))
    });
    out
}

fn numeric_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

fn axes_of(aggs: &[Aggregate]) -> BTreeSet<String> {
    aggs.iter()
        .flat_map(|a| ExperimentId::parse(&a.experiment_id).axes.into_iter().map(|(k, _)| k))
        .collect()
}

fn write_series(path: &Path, points: &[PlotPoint]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Wide table: one row per `x`, one `mean ± std` column per series.
fn write_pivot(path: &Path, axis: &str, points: &[PlotPoint]) -> anyhow::Result<()> {
    let series: BTreeSet<&str> = points.iter().map(|p| p.series.as_str()).collect();
    let mut xs: Vec<&str> = points.iter().map(|p| p.x.as_str()).collect();
    xs.sort_by(|a, b| numeric_order(a, b));
    xs.dedup();
    let cells: BTreeMap<(&str, &str), &PlotPoint> = points
        .iter()
        .map(|p| ((p.x.as_str(), p.series.as_str()), p))
        .collect();

    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![axis.to_string()];
    header.extend(series.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for x in xs {
        let mut rec = vec![x.to_string()];
        for s in &series {
            rec.push(match cells.get(&(x, *s)) {
                Some(p) => format!("{:.2}% ± {:.2}%", 100.0 * p.y, 100.0 * p.y_std),
                None => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv`, and for every swept axis `plotdata/<axis>_aer.csv`,
/// `plotdata/<axis>_test_l1.csv` and `table_<axis>.csv`.
pub fn write_report(out_dir: &Path, rows: &[MetricRow]) -> anyhow::Result<Vec<Aggregate>> {
    let aggs = aggregate(rows);
    write_aggregates_csv(fs::File::create(out_dir.join("summary.csv"))?, &aggs)?;
    let axes = axes_of(&aggs);
    if !axes.is_empty() {
        let plot = out_dir.join("plotdata");
        fs::create_dir_all(&plot)?;
        for axis in &axes {
            let aer = series_along(&aggs, axis, |a| a.aer);
            write_series(&plot.join(format!("{axis}_aer.csv")), &aer)?;
            let l1 = series_along(&aggs, axis, |a| a.model_test_l1);
            write_series(&plot.join(format!("{axis}_test_l1.csv")), &l1)?;
            write_pivot(&out_dir.join(format!("table_{axis}.csv")), axis, &aer)?;
        }
    }
    Ok(aggs)
}

/// Human-readable summary, one line per group.
pub fn format_summary(aggs: &[Aggregate]) -> String {
    let mut s = String::new();
    for a in aggs {
        s.push_str(&format!(
            "{:<48} n={:<3} AER {:6.2}% ± {:5.2}%  ALV {:.4} ± {:.4}  test L1 {:.4}\n",
            a.experiment_id,
            a.n,
            100.0 * a.aer.mean,
            100.0 * a.aer.std,
            a.alv.mean,
            a.alv.std,
            a.model_test_l1.mean,
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ids() {
        let id = ExperimentId::parse("exp/attack/known=4,epochs=15");
        assert_eq!(id.method, "attack");
        assert_eq!(id.axes[1], ("epochs".into(), "15".into()));
        assert!(ExperimentId::parse("exp/baseline/default").axes.is_empty());
    }

    #[test]
    fn series_sorted_numerically() {
        let row = |id: &str, aer: f64| MetricRow {
            experiment_id: id.into(),
            dataset: "d".into(),
            config_digest: String::new(),
            seed: 0,
            alv: 0.0,
            aer,
            model_test_l1: 0.0,
            wall_ms: 0,
        };
        let aggs = aggregate(&[row("e/attack/known=10", 0.1), row("e/attack/known=2", 0.3)]);
        let s = series_along(&aggs, "known", |a| a.aer);
        assert_eq!(s[0].x, "2");
        assert_eq!(s[1].x, "10");
    }
}
