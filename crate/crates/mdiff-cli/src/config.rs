//! Experiment configuration: one JSON document covering every phase, with
//! CLI flags overriding file values and `MDIFF_OUT` overriding the output
//! root. Every emitted artifact embeds the fully resolved config plus the
//! build identifier, so results stay traceable to exact settings.

use std::path::{Path, PathBuf};

use mdiff_core::datastore;
use mdiff_core::diffusion::NoiseTrainConfig;
use mdiff_core::diffusion::GuideConfig;
use mdiff_core::envsuite;
use mdiff_core::planner::WarmStartConfig;
use mdiff_core::taskcontext::ContextTrainConfig;
use mdiff_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Compile-time build identifier (git describe of the build tree).
pub const BUILD_ID: &str = env!("MDIFF_BUILD_ID");

/// Dataset-generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_tasks: usize,
    pub test_tasks: usize,
    /// Trajectories recorded per task.
    pub n_traj: usize,
    /// Behavior policy quality: expert, medium, random, or replay.
    pub policy: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_tasks: 30,
            test_tasks: 10,
            n_traj: 10,
            policy: "medium".to_string(),
        }
    }
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Independent evaluation seeds; results aggregate over all of them.
    pub seeds: Vec<u64>,
    pub episodes_per_task: usize,
    pub warmstart: WarmStartConfig,
    /// Extra warm-start qualities to evaluate alongside `warmstart.quality`
    /// (each gets its own block in the report).
    pub extra_qualities: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: vec![1, 2, 3, 4, 5],
            episodes_per_task: 10,
            warmstart: WarmStartConfig::default(),
            extra_qualities: Vec::new(),
        }
    }
}

/// The complete experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: String,
    pub seed: u64,
    pub out_dir: String,
    pub data: DataConfig,
    pub context: ContextTrainConfig,
    pub diffusion: NoiseTrainConfig,
    pub guide: GuideConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: "point_robot".to_string(),
            seed: 1,
            out_dir: "out".to_string(),
            data: DataConfig::default(),
            context: ContextTrainConfig::default(),
            diffusion: NoiseTrainConfig::default(),
            guide: GuideConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file (JSON). A missing `path` yields pure defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("bad config {}: {e}", p.display())))
            }
        }
    }

    /// Checks every field against module preconditions before any work runs.
    pub fn validate(&self) -> Result<()> {
        envsuite::family(&self.family)?;
        datastore::policy(&self.data.policy)?;
        datastore::policy(&self.eval.warmstart.quality)?;
        for q in &self.eval.extra_qualities {
            datastore::policy(q)?;
        }
        if self.data.train_tasks == 0 {
            return Err(Error::Config("data.train_tasks must be >= 1".into()));
        }
        if self.data.n_traj == 0 {
            return Err(Error::Config("data.n_traj must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.diffusion.beta) {
            return Err(Error::Config(format!(
                "diffusion.beta must lie in [0, 1], got {}",
                self.diffusion.beta
            )));
        }
        if self.diffusion.lr <= 0.0 || self.context.lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.diffusion.steps == 0 {
            return Err(Error::Config("diffusion.steps must be >= 1".into()));
        }
        if self.context.epochs == 0 {
            return Err(Error::Config("context.epochs must be >= 1".into()));
        }
        if self.context.d_z == 0 {
            return Err(Error::Config("context.d_z must be >= 1".into()));
        }
        for (name, v) in [
            ("guide.omega", self.guide.omega),
            ("guide.lambda", self.guide.lambda),
            ("guide.guide_step", self.guide.guide_step),
            ("guide.sample_temperature", self.guide.sample_temperature),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if self.guide.sample_temperature < 0.0 {
            return Err(Error::Config(
                "guide.sample_temperature must be >= 0".into(),
            ));
        }
        if self.eval.warmstart.n_traj == 0 || self.eval.warmstart.segments == 0 {
            return Err(Error::Config(
                "eval.warmstart needs n_traj >= 1 and segments >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Output root: `MDIFF_OUT` wins over the config value.
    pub fn out_root(&self) -> PathBuf {
        match std::env::var("MDIFF_OUT") {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(&self.out_dir),
        }
    }

    /// The provenance blob embedded in every artifact: resolved config plus
    /// build identifier.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::json!({
            "build": BUILD_ID,
            "config": self,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = serde_json::from_str::<ExperimentConfig>(r#"{"somethng": 1}"#);
        assert!(e.is_err());
        let e = serde_json::from_str::<ExperimentConfig>(r#"{"guide": {"omgea": 1.0}}"#);
        assert!(e.is_err());
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut c = ExperimentConfig::default();
        c.diffusion.beta = 1.5;
        assert!(c.validate().is_err());

        let mut c = ExperimentConfig::default();
        c.family = "walker".into();
        assert!(c.validate().is_err());

        let mut c = ExperimentConfig::default();
        c.data.policy = "perfect".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn provenance_embeds_build_and_config() {
        let c = ExperimentConfig::default();
        let p = c.provenance();
        assert_eq!(p["build"].as_str().unwrap(), BUILD_ID);
        assert_eq!(p["config"]["family"], "point_robot");
    }
}
