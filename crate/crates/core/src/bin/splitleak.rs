use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use splitleak::experiment::run::{
    attack_target, prepare_data, train_target, Methods, RepeatSeeds, RunOutcome, TrainedTarget,
};
use splitleak::experiment::{format_summary, load_config, run_experiment, write_report, ExperimentConfig};
use splitleak::metrics::{aer, alv, read_rows_csv, MetricRow};
use splitleak::protocol::{read_gradient_log, write_gradient_log, CompositeModel};

#[derive(Parser)]
#[command(name = "splitleak", version, about = "Label leakage experiments on split-learning regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a target composite model and persist it with its gradient log.
    Train(Common),
    /// Run the gradient-inversion attack against a trained target.
    Attack(TargetArgs),
    /// Run the semi-supervised baseline against a trained target.
    Baseline(TargetArgs),
    /// Run the full grid described by the configuration.
    Sweep(Common),
    /// Aggregate a results.csv into summary tables and plot data.
    Report {
        /// results.csv produced by `sweep`.
        results: PathBuf,
        /// Directory for the report (defaults to the directory of `results`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed` in the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// Override one configuration key, e.g. `--set attack.known=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TargetArgs {
    /// Directory written by `train`.
    #[arg(long)]
    target: PathBuf,
    /// Seed for the attacker's randomness (defaults to the one derived from the master seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the target directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one attack-side configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

/// Metadata written next to a trained target.
#[derive(Serialize, Deserialize)]
struct TrainingInfo {
    dataset: String,
    dataset_digest: String,
    observe_epoch: usize,
    test_l1: f64,
    seeds: RepeatSeeds,
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = load_config(&text, &common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    if let Err(problems) = cfg.validate() {
        bail!("invalid configuration:\n  - {}", problems.join("\n  - "));
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn train(common: &Common) -> anyhow::Result<()> {
    let cfg = load(common)?;
    let point = cfg.points().remove(0);
    let seeds = RepeatSeeds::derive(cfg.seed, 0);
    let prepared = prepare_data(&cfg, &seeds)?;
    let target = train_target(&cfg, &point, &seeds, &prepared)?;

    let dir = &cfg.output;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("effective-config.toml"), cfg.to_toml())?;
    write_json(&dir.join("model.json"), &target.model)?;
    write_json(&dir.join("split.json"), &prepared.split)?;
    prepared.stats.write_json(dir.join("standardization.json"))?;
    write_gradient_log(dir.join("gradient-log.jsonl"), &target.log)?;
    write_json(
        &dir.join("training.json"),
        &TrainingInfo {
            dataset: prepared.raw.name.clone(),
            dataset_digest: prepared.raw.digest(),
            observe_epoch: target.observe_epoch,
            test_l1: target.test_l1,
            seeds,
        },
    )?;
    println!(
        "trained on {} ({} rows): test L1 {:.4} after {} epochs; {} exchanges logged to {}",
        prepared.raw.name,
        prepared.raw.len(),
        target.test_l1,
        target.observe_epoch,
        target.log.len(),
        dir.display()
    );
    Ok(())
}

fn attack(args: &TargetArgs, methods: Methods) -> anyhow::Result<()> {
    let dir = &args.target;
    let text = fs::read_to_string(dir.join("effective-config.toml"))
        .with_context(|| format!("{} does not look like a `train` output", dir.display()))?;
    let cfg = load_config(&text, &args.overrides)?;
    if let Err(problems) = cfg.validate() {
        bail!("invalid configuration:\n  - {}", problems.join("\n  - "));
    }
    let info: TrainingInfo = read_json(&dir.join("training.json"))?;
    let mut seeds = info.seeds;
    if let Some(s) = args.seed {
        seeds.attack = s;
    }
    let prepared = prepare_data(&cfg, &seeds)?;
    if prepared.raw.digest() != info.dataset_digest {
        bail!("regenerated dataset differs from the one the target was trained on");
    }
    let saved_split: splitleak::data::SplitIndices = read_json(&dir.join("split.json"))?;
    if saved_split.train != prepared.split.train || saved_split.test != prepared.split.test {
        bail!("regenerated split differs from split.json");
    }
    let target = TrainedTarget {
        model: read_json::<CompositeModel>(&dir.join("model.json"))?,
        log: read_gradient_log(dir.join("gradient-log.jsonl"))?,
        test_l1: info.test_l1,
        observe_epoch: info.observe_epoch,
    };
    let point = cfg.points().remove(0);
    let run = attack_target(&cfg, &point, &seeds, &prepared, &target, methods)?;

    let (method, labels, ms) = if methods.attack {
        ("attack", &run.attack_labels, run.attack_ms)
    } else {
        ("baseline", &run.baseline_labels, run.baseline_ms)
    };
    let out = args.out.as_deref().unwrap_or(dir);
    fs::create_dir_all(out)?;
    write_inferred(&out.join(format!("{method}-labels.csv")), &run, labels)?;
    let row = MetricRow {
        experiment_id: format!("{}/{}/{}", cfg.name, method, point.label),
        dataset: prepared.raw.name.clone(),
        config_digest: cfg.point_digest(&point),
        seed: seeds.attack,
        alv: alv(labels, &run.truth)?,
        aer: aer(labels, &run.truth)?,
        model_test_l1: run.test_l1,
        wall_ms: ms,
    };
    let rows = [row];
    splitleak::metrics::write_rows_csv(fs::File::create(out.join(format!("{method}-results.csv")))?, &rows)?;
    println!(
        "{method}: {} labels inferred, AER {:.2}%, ALV {:.4}",
        run.truth.len(),
        100.0 * rows[0].aer,
        rows[0].alv
    );
    Ok(())
}

fn write_inferred(path: &Path, run: &RunOutcome, labels: &[f64]) -> anyhow::Result<()> {
    let batches = if run.attack.is_empty() { &run.baseline } else { &run.attack };
    let ids = batches.iter().flat_map(|r| r.sample_indices.iter().copied());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_index", "label", "inferred"])?;
    for ((id, y), y_hat) in ids.zip(&run.truth).zip(labels) {
        w.write_record([id.to_string(), y.to_string(), y_hat.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn sweep(common: &Common) -> anyhow::Result<()> {
    let cfg = load(common)?;
    let out = run_experiment(&cfg, &cfg.output, common.jobs.max(1))?;
    print!("{}", format_summary(&splitleak::metrics::aggregate(&out.rows)));
    println!("{} rows written to {}", out.rows.len(), cfg.output.display());
    if !out.failures.is_empty() {
        eprintln!(
            "{} runs failed; see {}",
            out.failures.len(),
            cfg.output.join("failures.json").display()
        );
        std::process::exit(2);
    }
    Ok(())
}

fn report(results: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let rows = read_rows_csv(fs::File::open(results).with_context(|| format!("opening {}", results.display()))?)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| results.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir)?;
    let aggs = write_report(&dir, &rows)?;
    print!("{}", format_summary(&aggs));
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Attack(a) => attack(a, Methods { attack: true, baseline: false }),
        Command::Baseline(a) => attack(a, Methods { attack: false, baseline: true }),
        Command::Sweep(c) => sweep(c),
        Command::Report { results, out } => report(results, out.as_deref()),
    }
}
