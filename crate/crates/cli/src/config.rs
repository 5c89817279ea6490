//! Run configuration: one flat TOML document.
//!
//! Precedence is built-in default, then the `--config` file, then flags.
//! Endpoints and secrets never live here; they come from the environment.

use std::path::Path;

use prefcurate::btrm::{Arch, Schedule, TrainConfig};
use prefcurate::curate::CurateConfig;
use prefcurate::judge::LabelConfig;
use prefcurate::manifest::config_digest;
use prefcurate_serve::{PriorityScheme, QueueConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Keys that steer a single invocation rather than the experiment. They are
/// left out of the digest so changing them never invalidates a run.
pub const RUN_CONTROL_KEYS: [&str; 12] = [
    "iterations",
    "max_in_flight",
    "stub_judges",
    "queue_humans",
    "bind",
    "lease_ttl_secs",
    "priority",
    "display_seed",
    "annotators",
    "preverify_model",
    "bon_grid",
    "judge_retries",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Share of each ingest that joins the seed pool.
    pub seed_fraction: f64,
    /// Share of the seed pool sent to humans when it is first verified.
    pub seed_human_fraction: f64,
    /// Share of each Stage-1 annotation queue sent to humans.
    pub human_ratio: f64,
    pub k_max: usize,
    pub samples_per_model: usize,
    pub exemplars: usize,
    pub max_in_flight: usize,
    pub judge_retries: usize,
    /// HTTP judge model names; the endpoint comes from the environment.
    pub judge_models: Vec<String>,
    /// Use offline stub judges (and stub humans) instead of `judge_models`.
    pub stub_judges: bool,
    /// Queue the human slice for the annotation service even when stub
    /// judges are on. Without stub judges it is always queued.
    pub queue_humans: bool,
    pub stub_judge_count: usize,
    pub stub_judge_accuracy: f64,
    pub embed_dim: usize,
    /// Remote embedding model; empty selects the offline hashing embedder.
    pub embed_model: String,
    /// 0 trains a linear head, otherwise an MLP with this many hidden units.
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// "linear_decay" or "constant".
    pub schedule: Schedule,
    pub warmup_fraction: f64,
    pub momentum: f64,
    pub eval_interval: usize,
    pub min_gold: usize,
    pub gold_holdout_fraction: f64,
    pub include_recycled: bool,
    /// Frozen pairwise file scored after every Stage-1 iteration; empty
    /// disables the sanity check.
    pub validation_set: String,
    /// Stage-1 iteration count to reach.
    pub iterations: u32,
    pub bind: String,
    pub lease_ttl_secs: u64,
    pub priority: PriorityScheme,
    pub display_seed: u64,
    /// Annotator ids allowed to lease tasks; empty admits anyone.
    pub annotators: Vec<String>,
    /// Model used to pre-verify objective pairs before serving; empty skips.
    pub preverify_model: String,
    pub bon_grid: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let curate = CurateConfig::default();
        let train = TrainConfig::default();
        let label = LabelConfig::default();
        RunConfig {
            seed: 0,
            seed_fraction: 0.1,
            seed_human_fraction: curate.seed_human_fraction,
            human_ratio: curate.human_ratio,
            k_max: curate.k_max,
            samples_per_model: label.samples_per_model,
            exemplars: label.exemplars,
            max_in_flight: label.max_in_flight,
            judge_retries: label.retries,
            judge_models: Vec::new(),
            stub_judges: false,
            queue_humans: false,
            stub_judge_count: 3,
            stub_judge_accuracy: 0.95,
            embed_dim: 256,
            embed_model: String::new(),
            hidden_dim: 0,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            schedule: train.schedule,
            warmup_fraction: train.warmup_fraction,
            momentum: train.momentum,
            eval_interval: train.eval_interval,
            min_gold: curate.min_gold,
            gold_holdout_fraction: curate.gold_holdout_fraction,
            include_recycled: curate.include_recycled,
            validation_set: String::new(),
            iterations: 3,
            bind: "127.0.0.1:8080".into(),
            lease_ttl_secs: prefcurate_serve::DEFAULT_LEASE_TTL_MS / 1000,
            priority: PriorityScheme::default(),
            display_seed: 0,
            annotators: Vec::new(),
            preverify_model: String::new(),
            bon_grid: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::user(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::user(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.curate().validate().map_err(|e| CliError::user(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.seed_fraction) {
            return Err(CliError::user("seed_fraction must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.stub_judge_accuracy) {
            return Err(CliError::user("stub_judge_accuracy must be in [0, 1]"));
        }
        if self.embed_dim < 2 {
            return Err(CliError::user("embed_dim must be >= 2"));
        }
        if self.bon_grid.is_empty() || self.bon_grid.windows(2).any(|w| w[0] >= w[1]) || self.bon_grid[0] == 0 {
            return Err(CliError::user("bon_grid must be strictly increasing positive integers"));
        }
        Ok(())
    }

    pub fn arch(&self) -> Arch {
        match self.hidden_dim {
            0 => Arch::Linear,
            h => Arch::Mlp { hidden_dim: h },
        }
    }

    pub fn curate(&self) -> CurateConfig {
        CurateConfig {
            rng_seed: self.seed,
            human_ratio: self.human_ratio,
            seed_human_fraction: self.seed_human_fraction,
            k_max: self.k_max,
            train: TrainConfig {
                arch: self.arch(),
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                schedule: self.schedule,
                epochs: self.epochs,
                rng_seed: self.seed,
                warmup_fraction: self.warmup_fraction,
                momentum: self.momentum,
                eval_interval: self.eval_interval,
            },
            label: LabelConfig {
                rng_seed: self.seed,
                samples_per_model: self.samples_per_model,
                max_in_flight: self.max_in_flight,
                retries: self.judge_retries,
                retry_backoff_ms: LabelConfig::default().retry_backoff_ms,
                exemplars: self.exemplars,
            },
            min_gold: self.min_gold,
            gold_holdout_fraction: self.gold_holdout_fraction,
            include_recycled: self.include_recycled,
        }
    }

    pub fn queue(&self) -> QueueConfig {
        QueueConfig {
            lease_ttl_ms: self.lease_ttl_secs * 1000,
            priority: self.priority,
            display_seed: self.display_seed,
            annotators: (!self.annotators.is_empty()).then(|| self.annotators.iter().cloned().collect()),
            ..QueueConfig::default()
        }
    }

    /// The experiment-defining part of the config, as sorted JSON.
    pub fn pipeline_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            for k in RUN_CONTROL_KEYS {
                m.remove(k);
            }
        }
        v
    }

    pub fn digest(&self) -> String {
        config_digest(&self.pipeline_view())
    }
}

/// What a run directory remembers about the config that created it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredConfig {
    pub digest: String,
    pub config: serde_json::Value,
}

/// Names of the pipeline keys whose values differ.
pub fn differing_keys(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
        return Vec::new();
    };
    let mut keys: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .cloned()
        .collect();
    keys.sort();
    keys.dedup();
    keys
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c: RunConfig = toml::from_str("seed = 7\nhidden_dim = 16\nschedule = \"constant\"").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.arch(), Arch::Mlp { hidden_dim: 16 });
        assert_eq!(c.k_max, RunConfig::default().k_max);
    }

    #[test]
    fn run_control_keys_do_not_move_the_digest() {
        let a = RunConfig::default();
        let b = RunConfig {
            iterations: 9,
            stub_judges: true,
            bind: "0.0.0.0:1".into(),
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.digest(), c.digest());
        assert_eq!(differing_keys(&a.pipeline_view(), &c.pipeline_view()), vec!["seed"]);
    }

    #[test]
    fn book_lists_the_real_defaults() {
        let md = include_str!("../../../book/src/configuration.md");
        let block = md.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
        let c: RunConfig = toml::from_str(block).unwrap();
        assert_eq!(c, RunConfig::default());
        let listed = toml::from_str::<toml::Table>(block).unwrap().len();
        assert_eq!(listed, serde_json::to_value(&c).unwrap().as_object().unwrap().len());
    }

    #[test]
    fn every_control_key_is_a_field() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        for k in RUN_CONTROL_KEYS {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
