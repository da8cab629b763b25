use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use nt_core::metrics::MetricsReport;
use nt_core::models::{load_checkpoint, save_checkpoint, ModelBundle};
use nt_core::objectives::Mode;
use nt_core::synthgen::{
    gen_multiclass, gen_multilabel, gen_sequences, load_dataset, save_dataset, write_dataset,
    SparseDataset,
};

use crate::config::{ExperimentConfig, GeneratorConfig, Task};
use crate::evaluate::evaluate;
use crate::train::{train, RunHistory};

pub const DATASET_FILE: &str = "dataset.ntd";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const HISTORY_JSON: &str = "history.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const BEST_CHECKPOINT: &str = "checkpoint-best.ntc";
pub const LAST_CHECKPOINT: &str = "checkpoint-last.ntc";
pub const FAILED_MARKER: &str = "FAILED";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Deterministic id of a resolved configuration (seed included).
pub fn run_id(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(cfg)?)[..16].to_string())
}

pub fn dataset_fingerprint(ds: &SparseDataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, ds)?;
    Ok(sha256_hex(&buf))
}

/// Generates the toy dataset or reads the configured feature file.
pub fn load_or_generate(cfg: &ExperimentConfig) -> Result<SparseDataset> {
    let ds = match cfg.generator_config()? {
        Some(GeneratorConfig::Multiclass(c)) => gen_multiclass(&c, cfg.seed)?,
        Some(GeneratorConfig::Multilabel(c)) => gen_multilabel(&c, cfg.seed)?,
        Some(GeneratorConfig::Sequence(c)) => gen_sequences(&c, cfg.seed)?,
        None => {
            let path = cfg.dataset_path.as_ref().context("dataset_path missing")?;
            load_features(path)?
        }
    };
    Ok(ds)
}

/// Reads an externally prepared feature file in the dataset format.
pub fn load_features(path: &Path) -> Result<SparseDataset> {
    load_dataset(path).with_context(|| format!("loading features from {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    let mut json = report.to_json()?;
    json.push('\n');
    fs::write(dir.join(REPORT_JSON), json)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(dir.join(REPORT_CSV), csv)?;
    Ok(())
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub history: RunHistory,
}

/// Evaluates `bundle` and assembles the report.
pub fn make_report(
    cfg: &ExperimentConfig,
    ds: &SparseDataset,
    bundle: &ModelBundle,
    history: Option<&RunHistory>,
    started: Instant,
) -> Result<MetricsReport> {
    let mut metrics = evaluate(bundle, ds, &cfg.eval, cfg.seed)?;
    if let Some(h) = history {
        metrics.insert(format!("validation.{}", h.metric), h.best_metric);
        metrics.insert("best_step".into(), h.best_step as f64);
    }
    Ok(MetricsReport {
        run_id: run_id(cfg)?,
        run_group: None,
        metrics,
        config: serde_json::to_value(cfg)?,
        seed: cfg.seed,
        dataset_fingerprint: dataset_fingerprint(ds)?,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Train and evaluate without touching the filesystem.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let ds = load_or_generate(cfg)?;
    let outcome = train(cfg, &ds)?;
    let report = make_report(cfg, &ds, &outcome.best, Some(&outcome.history), started)?;
    Ok(RunOutput {
        report,
        history: outcome.history,
    })
}

fn stages(cfg: &ExperimentConfig, out: &Path, group: Option<&str>) -> Result<RunOutput> {
    let started = Instant::now();
    write_json(&out.join(RESOLVED_CONFIG), cfg)?;
    let ds = load_or_generate(cfg)?;
    save_dataset(&out.join(DATASET_FILE), &ds)?;
    let mut outcome = train(cfg, &ds)?;
    save_checkpoint(&out.join(BEST_CHECKPOINT), &outcome.best, cfg.seed, outcome.history.best_step)?;
    save_checkpoint(&out.join(LAST_CHECKPOINT), &outcome.last, cfg.seed, outcome.history.steps_run)?;
    outcome.history.checkpoints = vec![BEST_CHECKPOINT.into(), LAST_CHECKPOINT.into()];
    write_json(&out.join(HISTORY_JSON), &outcome.history)?;
    let mut report = make_report(cfg, &ds, &outcome.best, Some(&outcome.history), started)?;
    report.run_group = group.map(str::to_string);
    write_report(out, &report)?;
    info!("run {} finished: {:?}", report.run_id, report.metrics);
    Ok(RunOutput {
        report,
        history: outcome.history,
    })
}

/// Generate or load, train, evaluate, and write every artifact into `out`.
/// On failure a `FAILED` marker with the error is left beside whatever was
/// written.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    run_grouped(cfg, out, None)
}

fn run_grouped(cfg: &ExperimentConfig, out: &Path, group: Option<&str>) -> Result<RunOutput> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let _ = fs::remove_file(out.join(FAILED_MARKER));
    let result = stages(cfg, out, group);
    if let Err(e) = &result {
        fs::write(out.join(FAILED_MARKER), format!("{e:#}\n"))?;
    }
    result
}

fn lambda_label(v: f64) -> String {
    format!("lambda-{v}")
}

/// One run per lambda value, each in its own subdirectory, sharing a run
/// group id derived from the base configuration.
pub fn sweep_lambda(base: &ExperimentConfig, lambdas: &[f64], out: &Path, threads: usize) -> Result<Vec<MetricsReport>> {
    let group = run_id(base)?;
    let jobs: Vec<(PathBuf, ExperimentConfig)> = lambdas
        .iter()
        .map(|&l| {
            let mut cfg = base.clone();
            cfg.objective.lambda = l;
            cfg.validate()?;
            Ok((out.join(lambda_label(l)), cfg))
        })
        .collect::<Result<_>>()?;
    run_jobs(&jobs, Some(&group), threads)
}

/// One run per mode, plus a comparison table `compare.csv` in `out`.
pub fn compare_modes(base: &ExperimentConfig, modes: &[Mode], out: &Path, threads: usize) -> Result<Vec<MetricsReport>> {
    let group = run_id(base)?;
    let jobs: Vec<(PathBuf, ExperimentConfig)> = modes
        .iter()
        .map(|&m| (out.join(m.name()), base.clone().with_mode(m)))
        .collect();
    let reports = run_jobs(&jobs, Some(&group), threads)?;
    let table = comparison_table(modes, &reports);
    fs::write(out.join("compare.csv"), &table)?;
    Ok(reports)
}

/// CSV with one row per mode and one column per metric.
pub fn comparison_table(modes: &[Mode], reports: &[MetricsReport]) -> String {
    let mut names: Vec<&String> = reports.iter().flat_map(|r| r.metrics.keys()).collect();
    names.sort();
    names.dedup();
    let mut out = String::from("mode");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (m, r) in modes.iter().zip(reports) {
        out.push_str(m.name());
        for n in &names {
            out.push(',');
            if let Some(v) = r.metrics.get(*n) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

fn run_jobs(jobs: &[(PathBuf, ExperimentConfig)], group: Option<&str>, threads: usize) -> Result<Vec<MetricsReport>> {
    let threads = threads.max(1);
    let mut results: BTreeMap<usize, Result<MetricsReport>> = BTreeMap::new();
    for chunk in jobs.iter().enumerate().collect::<Vec<_>>().chunks(threads) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(i, (dir, cfg))| (*i, s.spawn(move || run_grouped(cfg, dir, group).map(|o| o.report))))
                .collect();
            for (i, h) in handles {
                let r = h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("run thread panicked")));
                results.insert(i, r);
            }
        });
    }
    results.into_values().collect()
}

/// Evaluates a saved checkpoint on a dataset file.
pub fn eval_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path, dataset: &Path, out: &Path) -> Result<MetricsReport> {
    let started = Instant::now();
    let (bundle, _) = load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let ds = load_dataset(dataset).with_context(|| format!("loading {}", dataset.display()))?;
    fs::create_dir_all(out)?;
    let report = make_report(cfg, &ds, &bundle, None, started)?;
    write_report(out, &report)?;
    Ok(report)
}

/// Trains and writes checkpoints plus history, without evaluation.
pub fn train_only(cfg: &ExperimentConfig, out: &Path) -> Result<RunHistory> {
    fs::create_dir_all(out)?;
    write_json(&out.join(RESOLVED_CONFIG), cfg)?;
    let ds = load_or_generate(cfg)?;
    save_dataset(&out.join(DATASET_FILE), &ds)?;
    let mut outcome = train(cfg, &ds)?;
    save_checkpoint(&out.join(BEST_CHECKPOINT), &outcome.best, cfg.seed, outcome.history.best_step)?;
    save_checkpoint(&out.join(LAST_CHECKPOINT), &outcome.last, cfg.seed, outcome.history.steps_run)?;
    outcome.history.checkpoints = vec![BEST_CHECKPOINT.into(), LAST_CHECKPOINT.into()];
    write_json(&out.join(HISTORY_JSON), &outcome.history)?;
    Ok(outcome.history)
}

/// Writes the configured dataset.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    if cfg.task == Task::Dataset {
        anyhow::bail!("`gen` needs a toy task, not `dataset`");
    }
    fs::create_dir_all(out)?;
    let ds = load_or_generate(cfg)?;
    let path = out.join(DATASET_FILE);
    save_dataset(&path, &ds)?;
    Ok(path)
}
