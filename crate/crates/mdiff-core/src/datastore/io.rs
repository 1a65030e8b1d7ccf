//! Dataset persistence.
//!
//! Layout under a dataset directory:
//!
//! * `meta.json` — family, seed, policy, dims, normalization bounds, task
//!   table (id, params, split, trajectory count), and an opaque `run` blob
//!   the caller can use to embed its resolved config and build identifier.
//! * `tasks/<task_id>.jsonl` — one JSON object per trajectory.
//!
//! Floats in trajectory files are written in scientific notation with nine
//! significant digits, which round-trips every finite f32 exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NormStats, OfflineDataset, Split, TaskEntry, Trajectory};
use crate::envsuite::{self, TaskSpec};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct MetaTask {
    task_id: u32,
    params: Vec<f32>,
    split: Split,
    n_traj: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    family: String,
    seed: u64,
    policy: String,
    state_dim: usize,
    action_dim: usize,
    norm: NormStats,
    tasks: Vec<MetaTask>,
    #[serde(default)]
    run: serde_json::Value,
}

#[derive(Debug, Deserialize)]
struct TrajLine {
    task_id: u32,
    states: Vec<Vec<f32>>,
    actions: Vec<Vec<f32>>,
    rewards: Vec<f32>,
    #[serde(rename = "return")]
    ret: f32,
}

fn push_f32(out: &mut String, v: f32) {
    write!(out, "{v:.8e}").expect("writing to string cannot fail");
}

fn push_vec(out: &mut String, v: &[f32]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_f32(out, *x);
    }
    out.push(']');
}

fn push_mat(out: &mut String, rows: &[Vec<f32>]) {
    out.push('[');
    for (i, r) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_vec(out, r);
    }
    out.push(']');
}

fn traj_line(t: &Trajectory) -> Result<String> {
    let all_finite = t.states.iter().chain(&t.actions).flatten().all(|v| v.is_finite())
        && t.rewards.iter().all(|v| v.is_finite())
        && t.ret.is_finite();
    if !all_finite {
        return Err(Error::Numeric(format!(
            "trajectory for task {} contains non-finite values",
            t.task_id
        )));
    }
    let mut line = String::with_capacity(64 * t.states.len());
    write!(line, "{{\"task_id\":{},\"states\":", t.task_id).unwrap();
    push_mat(&mut line, &t.states);
    line.push_str(",\"actions\":");
    push_mat(&mut line, &t.actions);
    line.push_str(",\"rewards\":");
    push_vec(&mut line, &t.rewards);
    line.push_str(",\"return\":");
    push_f32(&mut line, t.ret);
    line.push('}');
    Ok(line)
}

/// Writes `meta.json` plus one `tasks/<task_id>.jsonl` per task. `run` is
/// stored verbatim in the manifest for provenance (resolved config, build
/// identifier); pass `json!({})` if there is nothing to record.
pub fn save_dataset(ds: &OfflineDataset, dir: &Path, run: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = MetaFile {
        family: ds.family.clone(),
        seed: ds.seed,
        policy: ds.policy.clone(),
        state_dim: ds.state_dim,
        action_dim: ds.action_dim,
        norm: ds.norm.clone(),
        tasks: ds
            .tasks
            .iter()
            .map(|t| MetaTask {
                task_id: t.spec.task_id,
                params: t.spec.params.clone(),
                split: t.split,
                n_traj: t.trajs.len(),
            })
            .collect(),
        run: run.clone(),
    };
    let mut meta_text = serde_json::to_string_pretty(&meta)?;
    meta_text.push('\n');
    fs::write(dir.join("meta.json"), meta_text)?;
    if ds.tasks.is_empty() {
        return Ok(());
    }
    let tasks_dir = dir.join("tasks");
    fs::create_dir_all(&tasks_dir)?;
    for entry in &ds.tasks {
        let mut text = String::new();
        for t in &entry.trajs {
            text.push_str(&traj_line(t)?);
            text.push('\n');
        }
        fs::write(tasks_dir.join(format!("{}.jsonl", entry.spec.task_id)), text)?;
    }
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        msg: msg.to_string(),
    }
}

fn load_task_file(
    path: &Path,
    expect: &MetaTask,
    state_dim: usize,
    action_dim: usize,
) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    let mut trajs = Vec::with_capacity(expect.n_traj);
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajLine =
            serde_json::from_str(line).map_err(|e| parse_err(path, lineno, e))?;
        if parsed.task_id != expect.task_id {
            return Err(parse_err(
                path,
                lineno,
                format!("task_id {} does not match file {}", parsed.task_id, expect.task_id),
            ));
        }
        let n = parsed.actions.len();
        if parsed.states.len() != n + 1 || parsed.rewards.len() != n {
            return Err(parse_err(
                path,
                lineno,
                format!(
                    "inconsistent lengths: {} states, {} actions, {} rewards",
                    parsed.states.len(),
                    n,
                    parsed.rewards.len()
                ),
            ));
        }
        if parsed.states.iter().any(|s| s.len() != state_dim)
            || parsed.actions.iter().any(|a| a.len() != action_dim)
        {
            return Err(parse_err(path, lineno, "row width does not match dims"));
        }
        trajs.push(Trajectory {
            task_id: parsed.task_id,
            states: parsed.states,
            actions: parsed.actions,
            rewards: parsed.rewards,
            ret: parsed.ret,
        });
    }
    if trajs.len() != expect.n_traj {
        return Err(parse_err(
            path,
            trajs.len() + 1,
            format!("expected {} trajectories, found {}", expect.n_traj, trajs.len()),
        ));
    }
    Ok(trajs)
}

/// Loads a dataset directory written by [`save_dataset`]. Malformed content
/// is reported with the offending file and line number.
pub fn load_dataset(dir: &Path) -> Result<OfflineDataset> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path)?;
    let meta: MetaFile = serde_json::from_str(&meta_text)
        .map_err(|e| parse_err(&meta_path, e.line(), &e))?;
    let fam = envsuite::family(&meta.family)?;
    if fam.state_dim() != meta.state_dim || fam.action_dim() != meta.action_dim {
        return Err(parse_err(
            &meta_path,
            1,
            format!(
                "dims ({}, {}) do not match family '{}'",
                meta.state_dim, meta.action_dim, meta.family
            ),
        ));
    }
    let mut tasks = Vec::with_capacity(meta.tasks.len());
    for mt in &meta.tasks {
        fam.validate_params(&mt.params)?;
        let path = dir.join("tasks").join(format!("{}.jsonl", mt.task_id));
        let trajs = load_task_file(&path, mt, meta.state_dim, meta.action_dim)?;
        tasks.push(TaskEntry {
            spec: TaskSpec {
                family: meta.family.clone(),
                task_id: mt.task_id,
                params: mt.params.clone(),
            },
            split: mt.split,
            trajs,
        });
    }
    Ok(OfflineDataset {
        family: meta.family,
        seed: meta.seed,
        policy: meta.policy,
        state_dim: meta.state_dim,
        action_dim: meta.action_dim,
        tasks,
        norm: meta.norm,
    })
}

// ─── Tests ──────────────────────────────────────────────────────────────────
