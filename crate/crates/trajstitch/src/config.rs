//! Run configuration: a flat JSON file with command-line overrides.
//!
//! Every field has a default, so a missing config file means "all defaults".
//! `--set key=value` overrides parse the value as JSON (falling back to a
//! bare string), which covers numbers, arrays, and strings alike. The
//! resolved config is echoed into every artifact directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use trajstitch_core::diffusion::DenoiserTrainConfig;
use trajstitch_core::env::{BcConfig, DisjointFamiliesScenario, MixConfig, PointMazeSpec};
use trajstitch_core::aux::AuxTrainConfig;
use trajstitch_core::stitch::StitchConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid --set override {arg:?}: {message}")]
    Override { arg: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Everything one run needs; serialized losslessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario name for `gen-data` (`disjoint-families`).
    pub scenario: String,
    pub n_per_family: usize,
    pub family_gap: f64,
    /// Dataset file; defaults to `<out_dir>/maze.jsonl`.
    pub dataset_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Evaluation discount.
    pub gamma: f64,

    // Generation horizon and diffusion steps.
    pub horizon: usize,
    pub k_steps: usize,

    // Stitching.
    pub delta_threshold: f64,
    pub iterations: usize,
    pub min_keep: usize,
    pub low_quantile: f64,
    pub high_quantile: f64,

    // Downstream learner.
    pub ratio_original: u32,
    pub ratio_augmented: u32,
    pub percentile: f64,
    pub bc_hidden: Vec<usize>,
    pub bc_steps: usize,
    pub bc_batch: usize,

    // Model sizes and budgets.
    pub denoiser_hidden: Vec<usize>,
    pub denoiser_steps: usize,
    pub denoiser_batch: usize,
    pub aux_width: usize,
    pub aux_steps: usize,
    pub aux_batch: usize,
    pub learning_rate: f64,

    // Evaluation.
    pub eval_episodes: usize,
    pub eval_seeds: usize,
    pub episode_cap: usize,
    pub goal_radius: f64,
    pub max_step_norm: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "disjoint-families".into(),
            n_per_family: 50,
            family_gap: 1.0,
            dataset_path: None,
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            gamma: 0.99,
            horizon: 32,
            k_steps: 100,
            delta_threshold: 2.0,
            iterations: 400,
            min_keep: 5,
            low_quantile: 0.5,
            high_quantile: 0.8,
            ratio_original: 4,
            ratio_augmented: 1,
            percentile: 0.5,
            bc_hidden: vec![64, 64],
            bc_steps: 6000,
            bc_batch: 128,
            denoiser_hidden: vec![256, 256],
            denoiser_steps: 6000,
            denoiser_batch: 64,
            aux_width: 256,
            aux_steps: 4000,
            aux_batch: 128,
            learning_rate: 1e-3,
            eval_episodes: 20,
            eval_seeds: 3,
            episode_cap: 100,
            goal_radius: 0.3,
            max_step_norm: 0.15,
        }
    }
}

impl RunConfig {
    /// Load from a JSON file (or defaults when `path` is `None`), then apply
    /// `--seed`, `--out`, and `--set key=value` overrides in that order.
    pub fn resolve(
        path: Option<&Path>,
        seed: Option<u64>,
        out: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| ConfigError::File {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                serde_json::from_slice(&bytes).map_err(|e| ConfigError::File {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?
            }
            None => serde_json::to_value(RunConfig::default()).expect("defaults serialize"),
        };
        if let Some(seed) = seed {
            value["seed"] = serde_json::Value::from(seed);
        }
        if let Some(out) = out {
            value["out_dir"] = serde_json::Value::from(out.to_string_lossy().into_owned());
        }
        for arg in overrides {
            apply_override(&mut value, arg)?;
        }
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bail = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bail("gamma must lie in (0, 1]");
        }
        if self.horizon < 4 {
            return bail("horizon must be at least 4");
        }
        if self.k_steps < 2 {
            return bail("k_steps must be at least 2");
        }
        if !(self.delta_threshold > 0.0) {
            return bail("delta_threshold must be positive");
        }
        if self.iterations == 0 {
            return bail("iterations must be at least 1");
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return bail("percentile must lie in (0, 1]");
        }
        if self.ratio_original == 0 && self.ratio_augmented == 0 {
            return bail("ratio parts cannot both be zero");
        }
        if !(self.low_quantile > 0.0
            && self.low_quantile <= self.high_quantile
            && self.high_quantile < 1.0)
        {
            return bail("quantiles must satisfy 0 < low <= high < 1");
        }
        if self.eval_seeds == 0 || self.eval_episodes == 0 {
            return bail("eval_seeds and eval_episodes must be positive");
        }
        self.maze_spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset_path
            .clone()
            .unwrap_or_else(|| self.out_dir.join("maze.jsonl"))
    }

    pub fn maze_spec(&self) -> PointMazeSpec {
        PointMazeSpec {
            episode_cap: self.episode_cap,
            goal_radius: self.goal_radius,
            max_step_norm: self.max_step_norm,
            ..PointMazeSpec::default()
        }
    }

    pub fn scenario(&self) -> DisjointFamiliesScenario {
        DisjointFamiliesScenario {
            n_per_family: self.n_per_family,
            family_gap: self.family_gap,
        }
    }

    pub fn stitch_config(&self) -> StitchConfig {
        StitchConfig {
            horizon: self.horizon,
            delta_threshold: self.delta_threshold,
            iterations: self.iterations,
            min_keep: self.min_keep,
            low_quantile: self.low_quantile,
            high_quantile: self.high_quantile,
            seed: self.seed,
        }
    }

    pub fn denoiser_config(&self) -> DenoiserTrainConfig {
        DenoiserTrainConfig {
            hidden_widths: self.denoiser_hidden.clone(),
            steps: self.denoiser_steps,
            batch_size: self.denoiser_batch,
            learning_rate: self.learning_rate,
        }
    }

    pub fn aux_config(&self) -> AuxTrainConfig {
        AuxTrainConfig {
            hidden_width: self.aux_width,
            steps: self.aux_steps,
            batch_size: self.aux_batch,
            learning_rate: self.learning_rate,
            holdout_fraction: 0.1,
        }
    }

    pub fn bc_config(&self) -> BcConfig {
        BcConfig {
            hidden_widths: self.bc_hidden.clone(),
            steps: self.bc_steps,
            learning_rate: self.learning_rate,
        }
    }

    pub fn mix_config(&self) -> MixConfig {
        MixConfig::new(self.ratio_original, self.ratio_augmented, self.bc_batch)
    }

    pub fn echo_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn apply_override(value: &mut serde_json::Value, arg: &str) -> Result<(), ConfigError> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| ConfigError::Override {
        arg: arg.into(),
        message: "expected key=value".into(),
    })?;
    let map = value.as_object_mut().expect("config is an object");
    if !map.contains_key(key) {
        return Err(ConfigError::Override {
            arg: arg.into(),
            message: format!("unknown config key {key:?}"),
        });
    }
    let parsed = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_owned()));
    map.insert(key.to_owned(), parsed);
    Ok(())
}
