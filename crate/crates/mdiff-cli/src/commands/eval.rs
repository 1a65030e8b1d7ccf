//! Meta-test evaluation: plan on held-out tasks with the trained models and
//! compare against the scripted expert run under the same episode protocol.
//!
//! The command is deterministic end to end — rerunning it over the same
//! artifacts produces a byte-identical `report.json`.

use std::path::{Path, PathBuf};

use mdiff_core::datastore::{self, OfflineDataset};
use mdiff_core::envsuite::{self, TaskSpec};
use mdiff_core::planner::{meta_test, EvalReport, WarmStartConfig};
use mdiff_core::rng;
use mdiff_core::{Error, Result};

use crate::artifacts::{write_json, CsvLog};
use crate::commands::train::{load_bundle, TrainedBundle};
use crate::config::ExperimentConfig;

/// Extra switches for `eval`.
#[derive(Debug, Clone, Default)]
pub struct EvalOpts {
    /// Evaluate the tasks in this task-set file instead of the dataset's
    /// held-out split.
    pub task_set: Option<PathBuf>,
}

/// One warm-start quality's aggregate over all evaluation seeds.
pub struct QualityBlock {
    pub quality: String,
    pub reports: Vec<EvalReport>,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_dyn_gap: f64,
}

/// What an evaluation produced, for callers that need the numbers rather
/// than the files (`ablate` rows, tests).
pub struct EvalSummary {
    pub oracle: OracleReturns,
    pub blocks: Vec<QualityBlock>,
}

pub fn run(cfg: &ExperimentConfig, opts: &EvalOpts) -> Result<()> {
    let root = cfg.out_root();
    let summary = evaluate(cfg, &root, &root, opts)?;
    for b in &summary.blocks {
        println!(
            "eval [{} warm-start]: mean return {:.4} (oracle {:.4}, gap {:+.1}%), dyn gap {:.4}",
            b.quality,
            b.mean_return,
            summary.oracle.mean,
            gap_vs(&summary.oracle, b.mean_return).map_or(f64::NAN, |g| g * 100.0),
            b.mean_dyn_gap
        );
    }
    println!("report: {}", root.join("eval").join("report.json").display());
    Ok(())
}

/// Evaluates trained artifacts under `read_root`, writing the report under
/// `write_root` (they differ for `ablate` cells that reuse base models).
pub fn evaluate(
    cfg: &ExperimentConfig,
    read_root: &Path,
    write_root: &Path,
    opts: &EvalOpts,
) -> Result<EvalSummary> {
    cfg.validate()?;
    let ds = datastore::load_dataset(&read_root.join("dataset"))?;
    let bundle = load_bundle(read_root)?;
    let specs = match &opts.task_set {
        Some(path) => {
            let (specs, _) = envsuite::load_task_set(path)?;
            if specs.iter().any(|s| s.family != cfg.family) {
                return Err(Error::Config(format!(
                    "task set {} contains tasks outside family {}",
                    path.display(),
                    cfg.family
                )));
            }
            specs
        }
        None => ds.test_specs(),
    };

    let oracle = oracle_returns(&specs, &cfg.eval.seeds, cfg.eval.episodes_per_task)?;
    let mut qualities = vec![cfg.eval.warmstart.quality.clone()];
    qualities.extend(cfg.eval.extra_qualities.iter().cloned());
    let blocks: Vec<QualityBlock> = qualities
        .iter()
        .map(|q| eval_quality(cfg, &bundle, &ds, &specs, q))
        .collect::<Result<_>>()?;

    let dir = write_root.join("eval");
    write_report_json(&dir.join("report.json"), cfg, &specs, &oracle, &blocks)?;
    write_report_csv(&dir.join("report.csv"), cfg, &blocks)?;
    Ok(EvalSummary { oracle, blocks })
}

fn eval_quality(
    cfg: &ExperimentConfig,
    bundle: &TrainedBundle,
    ds: &OfflineDataset,
    specs: &[TaskSpec],
    quality: &str,
) -> Result<QualityBlock> {
    let warm = WarmStartConfig {
        quality: quality.to_string(),
        ..cfg.eval.warmstart.clone()
    };
    let reports: Vec<EvalReport> = cfg
        .eval
        .seeds
        .iter()
        .map(|&seed| {
            meta_test(
                specs,
                &bundle.model,
                &bundle.sched,
                &bundle.ctx,
                &ds.norm,
                &warm,
                &cfg.guide,
                cfg.eval.episodes_per_task,
                seed,
            )
        })
        .collect::<Result<_>>()?;
    let n = reports.len().max(1) as f64;
    let mean_return = reports.iter().map(|r| r.mean_return).sum::<f64>() / n;
    let var = reports
        .iter()
        .map(|r| (r.mean_return - mean_return).powi(2))
        .sum::<f64>()
        / (reports.len().saturating_sub(1)).max(1) as f64;
    let mean_dyn_gap = reports.iter().map(|r| r.mean_dyn_gap).sum::<f64>() / n;
    Ok(QualityBlock {
        quality: quality.to_string(),
        reports,
        mean_return,
        std_return: var.sqrt(),
        mean_dyn_gap,
    })
}

/// Scripted-expert returns under the planner's episode protocol: the same
/// seeds, tasks, and episode counts, just with the expert acting directly.
pub struct OracleReturns {
    pub mean: f64,
    pub per_task: Vec<(u32, f64)>,
}

pub fn oracle_returns(specs: &[TaskSpec], seeds: &[u64], episodes_per_task: usize) -> Result<OracleReturns> {
    let mut per_task = Vec::with_capacity(specs.len());
    let mut total = 0.0;
    for (ti, spec) in specs.iter().enumerate() {
        let mut returns = Vec::new();
        for &seed in seeds {
            let base = rng::derive_labeled(seed, "oracle");
            for e in 0..episodes_per_task {
                let traj = datastore::rollout(spec, "expert", rng::derive2(base, ti as u64, e as u64))?;
                returns.push(traj.ret as f64);
            }
        }
        let mean = if returns.is_empty() {
            0.0
        } else {
            returns.iter().sum::<f64>() / returns.len() as f64
        };
        per_task.push((spec.task_id, mean));
        total += mean;
    }
    let mean = if per_task.is_empty() { 0.0 } else { total / per_task.len() as f64 };
    Ok(OracleReturns { mean, per_task })
}

/// Relative shortfall against the oracle; positive means worse. `None` when
/// the oracle mean is zero (nothing to normalize by).
pub fn gap_vs(oracle: &OracleReturns, planned_mean: f64) -> Option<f64> {
    if oracle.mean == 0.0 {
        return None;
    }
    Some((oracle.mean - planned_mean) / oracle.mean.abs())
}

fn write_report_json(
    path: &Path,
    cfg: &ExperimentConfig,
    specs: &[TaskSpec],
    oracle: &OracleReturns,
    blocks: &[QualityBlock],
) -> Result<()> {
    let results: Vec<serde_json::Value> = blocks
        .iter()
        .map(|b| {
            serde_json::json!({
                "quality": b.quality,
                "mean_return": b.mean_return,
                "std_return": b.std_return,
                "mean_dyn_gap": b.mean_dyn_gap,
                "gap_vs_oracle": gap_vs(oracle, b.mean_return),
                "seeds": b.reports,
            })
        })
        .collect();
    write_json(
        path,
        &serde_json::json!({
            "run": cfg.provenance(),
            "family": cfg.family,
            "episodes_per_task": cfg.eval.episodes_per_task,
            "seeds": cfg.eval.seeds,
            "tasks": specs,
            "oracle": {
                "mean_return": oracle.mean,
                "per_task": oracle.per_task.iter()
                    .map(|(id, m)| serde_json::json!({"task_id": id, "mean_return": m}))
                    .collect::<Vec<_>>(),
            },
            "results": results,
        }),
    )
}

fn write_report_csv(path: &Path, cfg: &ExperimentConfig, blocks: &[QualityBlock]) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let mut log = CsvLog::open(
        path,
        "quality,seed,task_id,mean_return,std_return,mean_dyn_gap",
        &cfg.provenance(),
    )?;
    for b in blocks {
        for r in &b.reports {
            for t in &r.tasks {
                log.row(format_args!(
                    "{},{},{},{},{},{}",
                    b.quality, r.seed, t.task_id, t.mean_return, t.std_return, t.mean_dyn_gap
                ))?;
            }
        }
    }
    Ok(())
}
