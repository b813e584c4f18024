//! Two-stage training, evaluation protocol, metrics, checkpoints and
//! trajectory rendering.

mod checkpoint;
mod config;
mod eval;
mod metrics;
mod render;
mod suite;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ablation, ImitationGating, ImitationMode, Stage, SuiteConfig, TrainConfig};
pub use eval::{
    episode_seed, evaluate, evaluate_checkpoint, mix_seed, perceive, run_episode, Adaptation, Decision, DonePolicy, EpisodeRunner,
    EpisodeTrace, ExpertPolicy, NavAgent, Policy, RandomPolicy, StepView, TraceStep,
};
pub use metrics::{
    compute_spl, compute_success_rate, filter_long, EpisodeResult, MetricsReport, SplitMetrics,
    LONG_EPISODE_MIN_OPTIMAL,
};
pub use render::{render_trajectory, Rendering};
pub use suite::{load_scene_dir, save_scene_dir, SceneSuite, Split};
pub use train::{
    build_worlds, collect_deadlock_samples, probe_loss, tpn_rollout_config, train_navigation, train_tpn,
    validation_success, NavTrainLog, NavTrainOutcome, TpnTrainLog, TpnTrainOutcome, UpdateLog,
};

use thiserror::Error;

use crate::diffcore::DiffError;
use crate::gridworld::WorldError;
use crate::tpn::TpnError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty {0} scene set")]
    EmptySceneSet(&'static str),
    #[error("scene {0} appears in more than one split")]
    SplitOverlap(String),
    #[error("metrics of an empty result set")]
    EmptyResults,
    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    Checksum,
    #[error("checkpoint version {found} is incompatible with version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("TPN missing: checkpoint holds no tentative policy parameters; run train-tpn first")]
    TpnMissing,
    #[error("cannot render trajectory: {0}")]
    Render(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Tpn(#[from] TpnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
