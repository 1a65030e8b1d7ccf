//! Dataset generation: sample a task set, roll out the behavior policy on
//! every task, and persist the result under `<out>/dataset`.

use std::path::Path;

use mdiff_core::datastore::{self, Split};
use mdiff_core::envsuite;
use mdiff_core::Result;

use crate::config::ExperimentConfig;

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    run_at(cfg, &cfg.out_root())
}

/// Same as [`run`] but with an explicit output root (used by `ablate`,
/// whose cells each write under their own directory).
pub fn run_at(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    cfg.validate()?;
    let dir = root.join("dataset");
    let n = cfg.data.train_tasks + cfg.data.test_tasks;
    let specs = envsuite::sample_tasks(&cfg.family, n, cfg.seed)?;
    let mut splits = vec![Split::Train; cfg.data.train_tasks];
    splits.extend(vec![Split::Test; cfg.data.test_tasks]);
    let ds = datastore::collect(&specs, &splits, &cfg.data.policy, cfg.data.n_traj, cfg.seed)?;
    datastore::save_dataset(&ds, &dir, &cfg.provenance())?;
    envsuite::save_task_set(&specs, cfg.seed, &dir.join("task_set.json"))?;
    let transitions: usize = ds
        .tasks
        .iter()
        .flat_map(|t| t.trajs.iter())
        .map(|tr| tr.actions.len())
        .sum();
    println!(
        "dataset: {} family, {} train + {} test tasks, {} trajectories/task ({} policy, {} transitions) -> {}",
        cfg.family,
        cfg.data.train_tasks,
        cfg.data.test_tasks,
        cfg.data.n_traj,
        cfg.data.policy,
        transitions,
        dir.display()
    );
    Ok(())
}
