//! Ablation sweeps: a grid file maps config paths to value lists, and every
//! point of the cross product becomes one independently seeded cell.
//!
//! Cells that only touch test-time settings (`guide.*`, `eval.*`) reuse the
//! base checkpoints; anything else retrains from scratch inside the cell's
//! own directory. A failed cell becomes a `failed` row in the table — the
//! sweep keeps going.

use std::path::{Path, PathBuf};

use mdiff_core::{Error, Result};
use rayon::prelude::*;

use crate::artifacts::{csv_quote, read_json, CsvLog};
use crate::commands::{eval, gen_data, train};
use crate::config::ExperimentConfig;

/// Extra switches for `ablate`.
#[derive(Debug, Clone, Default)]
pub struct AblateOpts {
    /// Grid file: JSON object mapping dotted config paths to value arrays.
    pub grid: PathBuf,
    /// Worker pool size; defaults to the number of physical cores.
    pub jobs: Option<usize>,
}

/// One sweep axis: a config path and the values it takes.
struct Axis {
    path: String,
    values: Vec<serde_json::Value>,
}

/// One point of the cross product.
struct Cell {
    index: usize,
    overrides: Vec<(String, serde_json::Value)>,
}

/// A finished cell row, in table order.
struct Row {
    index: usize,
    overrides: serde_json::Value,
    outcome: Result<eval::EvalSummary>,
}

pub fn run(cfg: &ExperimentConfig, opts: &AblateOpts) -> Result<()> {
    cfg.validate()?;
    let root = cfg.out_root();
    let axes = load_grid(&opts.grid)?;
    let cells = cross_product(&axes);
    let test_time_only = axes
        .iter()
        .all(|a| a.path.starts_with("guide.") || a.path.starts_with("eval."));
    if test_time_only && !root.join("train").join("manifest.json").exists() {
        return Err(Error::Config(format!(
            "ablation over test-time settings reuses base checkpoints, but {} has no completed training run",
            root.display()
        )));
    }
    let jobs = opts.jobs.unwrap_or_else(num_cpus::get_physical).max(1);
    println!(
        "ablate: {} cells over {} axes ({}), {} worker(s)",
        cells.len(),
        axes.len(),
        if test_time_only { "reusing base checkpoints" } else { "retraining per cell" },
        jobs
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::State(format!("cannot build worker pool: {e}")))?;
    let rows: Vec<Row> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| Row {
                index: cell.index,
                overrides: overrides_json(cell),
                outcome: run_cell(cfg, &root, cell, test_time_only),
            })
            .collect()
    });

    let table = root.join("ablate").join("table.csv");
    if table.exists() {
        std::fs::remove_file(&table)?;
    }
    let mut log = CsvLog::open(
        &table,
        "cell,overrides,status,error,mean_return,std_return,mean_dyn_gap,gap_vs_oracle",
        &cfg.provenance(),
    )?;
    let mut failed = 0usize;
    for row in &rows {
        match &row.outcome {
            Ok(summary) => {
                let b = &summary.blocks[0];
                let gap = eval::gap_vs(&summary.oracle, b.mean_return)
                    .map_or(String::new(), |g| g.to_string());
                log.row(format_args!(
                    "{},{},ok,,{},{},{},{}",
                    row.index,
                    csv_quote(&row.overrides.to_string()),
                    b.mean_return,
                    b.std_return,
                    b.mean_dyn_gap,
                    gap
                ))?;
            }
            Err(e) => {
                failed += 1;
                log.row(format_args!(
                    "{},{},failed,{},,,,",
                    row.index,
                    csv_quote(&row.overrides.to_string()),
                    csv_quote(&e.to_string())
                ))?;
            }
        }
    }
    println!(
        "ablate: {} cells done ({} failed) -> {}",
        rows.len(),
        failed,
        table.display()
    );
    Ok(())
}

/// Reads and checks the grid file. An empty grid is a configuration error.
fn load_grid(path: &Path) -> Result<Vec<Axis>> {
    let doc = read_json(path)?;
    let map = doc
        .as_object()
        .ok_or_else(|| Error::Config(format!("grid {} must be a JSON object", path.display())))?;
    if map.is_empty() {
        return Err(Error::Config(format!("grid {} has no axes", path.display())));
    }
    let mut axes = Vec::new();
    for (key, value) in map {
        let values = value
            .as_array()
            .ok_or_else(|| Error::Config(format!("grid axis {key} must map to an array")))?;
        if values.is_empty() {
            return Err(Error::Config(format!("grid axis {key} has no values")));
        }
        axes.push(Axis {
            path: key.clone(),
            values: values.clone(),
        });
    }
    Ok(axes)
}

/// Row-major cross product over the axes (serde keeps object keys sorted,
/// so cell indices are stable for a given grid file).
fn cross_product(axes: &[Axis]) -> Vec<Cell> {
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    (0..total)
        .map(|index| {
            let mut rem = index;
            let overrides = axes
                .iter()
                .rev()
                .map(|axis| {
                    let v = axis.values[rem % axis.values.len()].clone();
                    rem /= axis.values.len();
                    (axis.path.clone(), v)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect();
            Cell { index, overrides }
        })
        .collect()
}

fn overrides_json(cell: &Cell) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    for (path, value) in &cell.overrides {
        obj.insert(path.clone(), value.clone());
    }
    serde_json::Value::Object(obj)
}

/// Builds the cell's config: apply overrides, then derive independent seeds
/// by XOR-ing the cell index into the base seed and every eval seed.
fn cell_config(cfg: &ExperimentConfig, cell: &Cell) -> Result<ExperimentConfig> {
    let mut doc = serde_json::to_value(cfg)?;
    for (path, value) in &cell.overrides {
        set_path(&mut doc, path, value.clone())?;
    }
    let mut cell_cfg: ExperimentConfig = serde_json::from_value(doc)
        .map_err(|e| Error::Config(format!("cell {} has an invalid override: {e}", cell.index)))?;
    cell_cfg.seed ^= cell.index as u64;
    for s in &mut cell_cfg.eval.seeds {
        *s ^= cell.index as u64;
    }
    cell_cfg.validate()?;
    Ok(cell_cfg)
}

/// Assigns `value` at a dotted path inside a JSON document. Unknown leaves
/// are caught later when the document deserializes back into the config.
fn set_path(doc: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("grid path {path} does not name a config field")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    Err(Error::Config(format!("grid path {path} is empty")))
}

fn run_cell(
    cfg: &ExperimentConfig,
    root: &Path,
    cell: &Cell,
    test_time_only: bool,
) -> Result<eval::EvalSummary> {
    let cell_cfg = cell_config(cfg, cell)?;
    let cell_root = root.join("ablate").join(format!("cell_{}", cell.index));
    if test_time_only {
        eval::evaluate(&cell_cfg, root, &cell_root, &eval::EvalOpts::default())
    } else {
        gen_data::run_at(&cell_cfg, &cell_root)?;
        train::run_at(&cell_cfg, &cell_root, &train::TrainOpts::default())?;
        eval::evaluate(&cell_cfg, &cell_root, &cell_root, &eval::EvalOpts::default())
    }
}
