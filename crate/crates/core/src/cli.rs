//! Command implementations behind the `scs-lab` binary: training runs,
//! truncation probes, hyperparameter sweeps, run aggregation, theory
//! verification, and markdown reports.
//!
//! Every command is deterministic given its config and seed; timestamps are
//! confined to run manifests so repeated runs produce byte-identical
//! metrics/CSV payloads.

use crate::config::RunConfig;
use crate::oracles::{self, TheoryCell};
use crate::policy::Policy;
use crate::rng::{scopes, RngStream};
use crate::sampler::{self, SamplerConfig};
use crate::trainer::{self, TaskSet};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FINAL_POLICY_FILE: &str = "final_policy.json";

/// Resolves the run-root directory: explicit flag, then the
/// `SCS_LAB_RUN_ROOT` environment variable, then `./runs`.
pub fn resolve_run_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("SCS_LAB_RUN_ROOT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("runs")
}

/// Recorded alongside every run for reproducibility checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub created_at: String,
    pub command: String,
    pub overrides: Vec<String>,
    pub master_seed: u64,
    pub config: RunConfig,
}

impl Manifest {
    fn new(command: &str, overrides: &[String], config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
            command: command.to_string(),
            overrides: overrides.to_vec(),
            master_seed: config.trainer.seed,
            config: config.clone(),
        }
    }
}

fn unique_run_dir(root: &Path, stem: &str) -> PathBuf {
    let base = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let mut candidate = root.join(format!("{stem}-{base}"));
    let mut counter = 1;
    while candidate.exists() {
        counter += 1;
        candidate = root.join(format!("{stem}-{base}-{counter}"));
    }
    candidate
}

fn load_config(config_path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("cannot read config {}", config_path.display()))?;
    RunConfig::load(&text, overrides).map_err(|e| anyhow!("{e}"))
}

/// Runs one training job and writes metrics.jsonl, periodic and final policy
/// checkpoints, and the manifest into a fresh run directory. Nothing is
/// created until the configuration has parsed and validated.
pub fn cmd_train(
    config_path: &Path,
    overrides: &[String],
    run_root: &Path,
    out_name: Option<&str>,
) -> Result<PathBuf> {
    let config = load_config(config_path, overrides)?;

    let run_dir = match out_name {
        Some(name) => {
            let dir = run_root.join(name);
            if dir.exists() {
                bail!("run directory {} already exists", dir.display());
            }
            dir
        }
        None => unique_run_dir(run_root, "train"),
    };
    fs::create_dir_all(&run_dir)?;

    let manifest = Manifest::new("train", overrides, &config);
    fs::write(run_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;

    let metrics_path = run_dir.join(METRICS_FILE);
    let mut metrics_file = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
    let interval = config.trainer.checkpoint_interval;
    let run_dir_ref = &run_dir;

    let (final_policy, _metrics) = trainer::run_training(&config, |step, policy, m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(metrics_file, "{line}").map_err(crate::error::Error::Io)?;
        if interval > 0 && (step + 1) % interval == 0 {
            let name = format!("policy-step{:05}.json", step + 1);
            fs::write(run_dir_ref.join(name), policy.to_checkpoint_json())
                .map_err(crate::error::Error::Io)?;
        }
        Ok(())
    })
    .map_err(|e| anyhow!("{e}"))?;
    metrics_file.flush()?;

    fs::write(run_dir.join(FINAL_POLICY_FILE), final_policy.to_checkpoint_json())?;
    Ok(run_dir)
}

/// One row of the truncation-divergence probe.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub ratio: f64,
    pub mean_distinct_options: f64,
    pub stderr: f64,
}

/// For each ratio: one initial trajectory per task (shared across ratios),
/// m perturbed continuations from its truncation, and the distinct-answer
/// count averaged over tasks.
pub fn probe_truncation(
    policy: &Policy,
    task_set: &TaskSet,
    sampler_cfg: &SamplerConfig,
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    if ratios.is_empty() {
        bail!("probe needs at least one ratio");
    }
    for &r in ratios {
        if !(r > 0.0 && r < 1.0) {
            bail!("ratio {r} outside (0, 1)");
        }
    }
    let root = RngStream::from_seed(seed).child(scopes::PROBE);
    let initial: Vec<_> = task_set
        .tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            policy
                .sample_trajectory(task, &mut root.descend(&[0, i as u64]).rng())
                .map_err(|e| anyhow!("{e}"))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(ratios.len());
    for (ri, &ratio) in ratios.iter().enumerate() {
        let cfg = SamplerConfig { truncation_ratio: ratio, ..sampler_cfg.clone() };
        let mut counts = Vec::with_capacity(task_set.len());
        for (i, task) in task_set.tasks.iter().enumerate() {
            let stream = root.descend(&[1, ri as u64, i as u64]);
            let set = sampler::collect_answers(policy, task, &initial[i], &cfg, &stream)
                .map_err(|e| anyhow!("{e}"))?;
            counts.push(set.distinct_count as f64);
        }
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<f64>() / n;
        let stderr = if counts.len() < 2 {
            0.0
        } else {
            (counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0)).sqrt()
                / n.sqrt()
        };
        rows.push(ProbeRow { ratio, mean_distinct_options: mean, stderr });
    }
    Ok(rows)
}

/// CLI wrapper around `probe_truncation`: loads config and optionally a
/// checkpoint, writes a CSV report.
pub fn cmd_probe_truncation(
    config_path: &Path,
    overrides: &[String],
    ratios: &[f64],
    resamples: Option<usize>,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let config = load_config(config_path, overrides)?;
    let task_set = TaskSet::generate(&config.env, config.trainer.seed).map_err(|e| anyhow!("{e}"))?;
    let policy = match checkpoint {
        Some(path) => Policy::from_checkpoint_json(&fs::read_to_string(path)?)
            .map_err(|e| anyhow!("{e}"))?,
        None => trainer::init_policy(&config.env, &config.policy, config.trainer.seed)
            .map_err(|e| anyhow!("{e}"))?,
    };
    let mut sampler_cfg = config.sampler.clone();
    if let Some(m) = resamples {
        sampler_cfg.n_resamples = m;
    }
    let rows = probe_truncation(&policy, &task_set, &sampler_cfg, ratios, config.trainer.seed)?;
    let mut writer = csv_writer(out)?;
    writer.write_record(["ratio", "mean_distinct_options", "stderr"])?;
    for row in rows {
        writer.write_record([
            row.ratio.to_string(),
            row.mean_distinct_options.to_string(),
            row.stderr.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub truncation_ratio: f64,
    pub n_resamples: usize,
    pub status: String,
    pub final_mean_r_acc: Option<f64>,
    pub final_unfaithful_mass: Option<f64>,
    pub error: Option<String>,
}

/// One full training run per (truncation ratio, resample count) cell.
/// Cells persist as JSON files under `<sweep dir>/cells/`, so an interrupted
/// sweep resumes where it stopped; the assembled CSV is rewritten at the end.
pub fn cmd_sweep(
    config_path: &Path,
    overrides: &[String],
    ratios: &[f64],
    resample_grid: &[usize],
    run_root: &Path,
    name: Option<&str>,
) -> Result<PathBuf> {
    if ratios.is_empty() || resample_grid.is_empty() {
        bail!("sweep needs non-empty ratio and resample grids");
    }
    let base_config = load_config(config_path, overrides)?;
    let sweep_dir = match name {
        Some(n) => run_root.join(n),
        None => unique_run_dir(run_root, "sweep"),
    };
    let cells_dir = sweep_dir.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let manifest = Manifest::new("sweep", overrides, &base_config);
    fs::write(sweep_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;

    let mut cells = Vec::new();
    for &ratio in ratios {
        for &m in resample_grid {
            let cell_file = cells_dir.join(format!("k{ratio}_m{m}.json"));
            if cell_file.exists() {
                let cell: SweepCell = serde_json::from_str(&fs::read_to_string(&cell_file)?)?;
                cells.push(cell);
                continue;
            }
            let mut config = base_config.clone();
            config.sampler.truncation_ratio = ratio;
            config.sampler.n_resamples = m;
            let cell = match config.validate().map_err(|e| anyhow!("{e}")).and_then(|_| {
                trainer::run_training(&config, |_, _, _| Ok(())).map_err(|e| anyhow!("{e}"))
            }) {
                Ok((_, metrics)) => {
                    let last = metrics.last().expect("at least one step");
                    SweepCell {
                        truncation_ratio: ratio,
                        n_resamples: m,
                        status: "ok".into(),
                        final_mean_r_acc: Some(last.mean_r_acc),
                        final_unfaithful_mass: Some(last.unfaithful_mass),
                        error: None,
                    }
                }
                Err(e) => SweepCell {
                    truncation_ratio: ratio,
                    n_resamples: m,
                    status: "failed".into(),
                    final_mean_r_acc: None,
                    final_unfaithful_mass: None,
                    error: Some(e.to_string()),
                },
            };
            fs::write(&cell_file, serde_json::to_string_pretty(&cell)?)?;
            cells.push(cell);
        }
    }

    let csv_path = sweep_dir.join("sweep.csv");
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record([
        "truncation_ratio",
        "n_resamples",
        "status",
        "final_mean_r_acc",
        "final_unfaithful_mass",
        "error",
    ])?;
    for cell in &cells {
        writer.write_record([
            cell.truncation_ratio.to_string(),
            cell.n_resamples.to_string(),
            cell.status.clone(),
            cell.final_mean_r_acc.map(|v| v.to_string()).unwrap_or_default(),
            cell.final_unfaithful_mass.map(|v| v.to_string()).unwrap_or_default(),
            cell.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(sweep_dir)
}

/// Sample mean and two-sided Student-t interval half-width at `confidence`.
pub fn mean_and_t_half_width(values: &[f64], confidence: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        bail!("need at least 2 values, got {}", values.len());
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        bail!("confidence must lie in (0, 1), got {confidence}");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok((mean, 0.0));
    }
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let t_dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| anyhow!("{e}"))?;
    let t = t_dist.inverse_cdf(0.5 + confidence / 2.0);
    Ok((mean, t * (var / n).sqrt()))
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalSummary {
    pub mean: f64,
    pub half_width: f64,
    pub lo: f64,
    pub hi: f64,
    pub per_run: Vec<f64>,
}

fn interval_summary(values: Vec<f64>, confidence: f64) -> Result<IntervalSummary> {
    let (mean, half_width) = mean_and_t_half_width(&values, confidence)?;
    Ok(IntervalSummary { mean, half_width, lo: mean - half_width, hi: mean + half_width, per_run: values })
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateSummary {
    pub n_runs: usize,
    pub confidence: f64,
    pub final_mean_r_acc: IntervalSummary,
    pub final_unfaithful_mass: IntervalSummary,
}

fn read_final_metrics(run_dir: &Path) -> Result<trainer::StepMetrics> {
    let text = fs::read_to_string(run_dir.join(METRICS_FILE))
        .with_context(|| format!("cannot read metrics in {}", run_dir.display()))?;
    let last = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .next_back()
        .ok_or_else(|| anyhow!("{}: empty metrics file", run_dir.display()))?;
    Ok(serde_json::from_str(last)?)
}

/// Lists JSON paths at which the two manifests' resolved configs differ,
/// ignoring the master seed (aggregation is across seeds by design).
fn config_differences(a: &Manifest, b: &Manifest) -> Vec<String> {
    let mut left = serde_json::to_value(&a.config).expect("config to json");
    let mut right = serde_json::to_value(&b.config).expect("config to json");
    if let Some(t) = left.get_mut("trainer").and_then(|t| t.as_object_mut()) {
        t.remove("seed");
    }
    if let Some(t) = right.get_mut("trainer").and_then(|t| t.as_object_mut()) {
        t.remove("seed");
    }
    let mut diffs = Vec::new();
    diff_json("config", &left, &right, &mut diffs);
    diffs
}

fn diff_json(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: std::collections::BTreeSet<_> = ma.keys().chain(mb.keys()).collect();
            for k in keys {
                let next = format!("{path}.{k}");
                match (ma.get(k), mb.get(k)) {
                    (Some(va), Some(vb)) => diff_json(&next, va, vb, out),
                    _ => out.push(next),
                }
            }
        }
        _ if a != b => out.push(path.to_string()),
        _ => {}
    }
}

/// Aggregates final metrics across comparable run directories into means and
/// t-intervals.
pub fn cmd_aggregate(run_dirs: &[PathBuf], confidence: f64, out: Option<&Path>) -> Result<AggregateSummary> {
    if run_dirs.len() < 2 {
        bail!("aggregate needs at least 2 run directories, got {}", run_dirs.len());
    }
    let manifests: Vec<Manifest> = run_dirs
        .iter()
        .map(|d| {
            let text = fs::read_to_string(d.join(MANIFEST_FILE))
                .with_context(|| format!("cannot read manifest in {}", d.display()))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect::<Result<_>>()?;
    for (i, m) in manifests.iter().enumerate().skip(1) {
        let diffs = config_differences(&manifests[0], m);
        if !diffs.is_empty() {
            bail!(
                "run {} is not comparable with {}: differing fields: {}",
                run_dirs[i].display(),
                run_dirs[0].display(),
                diffs.join(", ")
            );
        }
    }

    let finals: Vec<trainer::StepMetrics> =
        run_dirs.iter().map(|d| read_final_metrics(d)).collect::<Result<_>>()?;
    let summary = AggregateSummary {
        n_runs: run_dirs.len(),
        confidence,
        final_mean_r_acc: interval_summary(finals.iter().map(|m| m.mean_r_acc).collect(), confidence)?,
        final_unfaithful_mass: interval_summary(
            finals.iter().map(|m| m.unfaithful_mass).collect(),
            confidence,
        )?,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    match out {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(summary)
}

/// Runs the closed-form vs Monte Carlo grid and writes one CSV row per cell.
/// Returns whether every cell passed the three-standard-error criterion.
/// `inject_bias` shifts the closed form and exists as a negative control.
pub fn cmd_verify_theory(
    trials: usize,
    seed: u64,
    out: Option<&Path>,
    inject_bias: f64,
) -> Result<bool> {
    let cells = oracles::run_theory_grid(
        &oracles::THEORY_GRID_N,
        &oracles::THEORY_GRID_P,
        &oracles::THEORY_GRID_M,
        trials,
        seed,
        inject_bias,
    )
    .map_err(|e| anyhow!("{e}"))?;
    write_theory_csv(&cells, out)?;
    Ok(cells.iter().all(|c| c.pass))
}

pub fn write_theory_csv(cells: &[TheoryCell], out: Option<&Path>) -> Result<()> {
    let mut writer = csv_writer(out)?;
    writer.write_record(["n", "p", "m", "closed_form", "mc_mean", "mc_stderr", "pass"])?;
    for c in cells {
        writer.write_record([
            c.n.to_string(),
            c.p.to_string(),
            c.m.to_string(),
            c.closed_form.to_string(),
            c.mc_mean.to_string(),
            c.mc_stderr.to_string(),
            c.pass.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_writer(out: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

/// Renders CSV tables and aggregate JSON files into one markdown summary.
pub fn cmd_report(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    if inputs.is_empty() {
        bail!("report needs at least one input file");
    }
    let mut doc = String::from("# Run report\n");
    for input in inputs {
        doc.push_str(&format!("\n## {}\n\n", input.display()));
        let text = fs::read_to_string(input)
            .with_context(|| format!("cannot read {}", input.display()))?;
        if input.extension().and_then(|e| e.to_str()) == Some("csv") {
            doc.push_str(&csv_to_markdown(&text)?);
        } else {
            doc.push_str("```json\n");
            doc.push_str(text.trim_end());
            doc.push_str("\n```\n");
        }
    }
    match out {
        Some(path) => fs::write(path, doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn csv_to_markdown(text: &str) -> Result<String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut out = String::new();
    out.push_str(&format!("| {} |\n", headers.iter().collect::<Vec<_>>().join(" | ")));
    out.push_str(&format!("|{}\n", "---|".repeat(headers.len())));
    for record in reader.records() {
        let record = record?;
        out.push_str(&format!("| {} |\n", record.iter().collect::<Vec<_>>().join(" | ")));
    }
    Ok(out)
}
