//! Deterministic procedural indoor rooms with oracle detections, episode
//! mechanics and a shortest-path expert.

mod category;
mod expert;
mod scene;
mod sensor;
mod state;
mod world;

pub use category::{category_by_name, category_name, SceneType, CATEGORY_HEIGHTS, CATEGORY_NAMES, NUM_CATEGORIES};
pub use expert::{expert_action, optimal_length, DistanceField};
pub use scene::{
    generate_scene, ConcurrencePair, ObjectInstance, SceneSpec, SceneTemplate, DEFAULT_CELL_SIZE,
    MIN_TARGET_CATEGORIES, SCENE_FILE_VERSION,
};
pub use sensor::{
    category_signature, line_cells, render_observation, sight, Detection, Observation, SensorConfig, Sighting,
    APPEARANCE_DIM, GLOBAL_DIM,
};
pub use state::{Action, AgentState, Heading, Pitch, NUM_ACTIONS};
pub use world::{
    reset, success_check, transition, Episode, EpisodeConfig, EpisodeStatus, StepEvent, StepOutcome, World,
    POSES_PER_CELL,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("template cannot be satisfied: {objects} objects in a {width}x{height} room")]
    Unsatisfiable { width: usize, height: usize, objects: usize },
    #[error("invalid template: {0}")]
    Template(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene file: {0}")]
    SceneFile(String),
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error("pose {0:?} is not a valid agent state")]
    InvalidState(AgentState),
    #[error("category {0} is not present in the scene")]
    TargetAbsent(usize),
    #[error("no target category is reachable in scene {0}")]
    NoReachableTarget(String),
    #[error("target {target} unreachable from {state:?}")]
    Unreachable { state: AgentState, target: usize },
    #[error("episode already finished")]
    EpisodeFinished,
}
