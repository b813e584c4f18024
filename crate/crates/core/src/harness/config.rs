use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::navpolicy::{LossConfig, SelectMode};
use crate::tpn::DeadlockConfig;

/// Which imitation supervision the navigation stage receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImitationMode {
    Off,
    /// Only on deadlock-flagged steps.
    Deadlock,
    /// On every step.
    EveryStep,
}

/// Which deadlock steps carry imitation supervision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImitationGating {
    /// Every step whose feature repeats an earlier one.
    WhileRepeating,
    /// Only the first step of each run of repeating steps.
    OnsetOnly,
}

/// Named model variants selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    NoOrg,
    NoIl,
    IlAll,
}

impl std::str::FromStr for Ablation {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Ablation::None),
            "no-org" => Ok(Ablation::NoOrg),
            "no-il" => Ok(Ablation::NoIl),
            "il-all" => Ok(Ablation::IlAll),
            other => Err(HarnessError::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

/// Procedural scene suite with fixed per-type split sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub train_per_type: usize,
    pub val_per_type: usize,
    pub test_per_type: usize,
    pub pair_probability: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train_per_type: 20,
            val_per_type: 5,
            test_per_type: 5,
            pair_probability: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Nav,
    Tpn,
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub seed: u64,
    pub nav_episodes: u64,
    pub tpn_episodes: u64,
    pub workers: usize,
    pub unroll: usize,
    pub learning_rate: f64,
    pub tpn_learning_rate: f64,
    pub adapt_learning_rate: f64,
    pub loss: LossConfig,
    pub use_graph: bool,
    pub imitation: ImitationMode,
    pub gating: ImitationGating,
    /// Supervised steps execute the expert action instead of the sampled one.
    pub execute_expert: bool,
    pub deadlock: DeadlockConfig,
    pub train_select: SelectMode,
    pub tpn_select: SelectMode,
    /// Confidence noise amplitude during training; evaluation is noise-free.
    pub sensor_noise: f64,
    /// Validation period in episodes; 0 keeps the final parameters.
    pub val_every: u64,
    pub val_episodes_per_scene: usize,
    pub suite: SuiteConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Nav,
            seed: 0,
            nav_episodes: 50_000,
            tpn_episodes: 10_000,
            workers: 12,
            unroll: 20,
            learning_rate: 1e-4,
            tpn_learning_rate: 1e-4,
            adapt_learning_rate: 1e-4,
            loss: LossConfig::default(),
            use_graph: true,
            imitation: ImitationMode::Deadlock,
            gating: ImitationGating::WhileRepeating,
            execute_expert: true,
            deadlock: DeadlockConfig::default(),
            train_select: SelectMode::Sample,
            tpn_select: SelectMode::Greedy,
            sensor_noise: 0.1,
            val_every: 5_000,
            val_episodes_per_scene: 10,
            suite: SuiteConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::None => {}
            Ablation::NoOrg => self.use_graph = false,
            Ablation::NoIl => self.imitation = ImitationMode::Off,
            Ablation::IlAll => self.imitation = ImitationMode::EveryStep,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.unroll == 0 {
            return bad("unroll must be at least 1");
        }
        for lr in [self.learning_rate, self.tpn_learning_rate, self.adapt_learning_rate] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rates must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.loss.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.sensor_noise) {
            return bad("sensor noise must lie in [0, 1]");
        }
        if self.suite.train_per_type == 0 {
            return bad("empty training scene set");
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let cfg: TrainConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
