use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expert::DistanceField;
use super::scene::SceneSpec;
use super::sensor::{sight, SensorConfig};
use super::state::{Action, AgentState, Heading, Pitch};
use super::WorldError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub success_distance_m: f64,
    pub step_penalty: f64,
    pub success_reward: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 99,
            success_distance_m: 1.5,
            step_penalty: -0.001,
            success_reward: 5.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.max_steps < 1 {
            return Err(WorldError::Config("max_steps must be at least 1".into()));
        }
        if !(self.success_distance_m > 0.0) {
            return Err(WorldError::Config("success distance must be positive".into()));
        }
        Ok(())
    }
}

/// Number of poses per cell: 4 headings x 3 pitches.
pub const POSES_PER_CELL: usize = 12;

/// A scene prepared for simulation: occupancy lookups plus the shortest-path
/// distance field of every category present. Immutable and shareable.
#[derive(Clone, Debug)]
pub struct World {
    pub scene: SceneSpec,
    pub sensor: SensorConfig,
    pub episode: EpisodeConfig,
    wall: Vec<bool>,
    object: Vec<bool>,
    fields: BTreeMap<usize, DistanceField>,
}

impl World {
    pub fn new(scene: SceneSpec, sensor: SensorConfig, episode: EpisodeConfig) -> Result<World, WorldError> {
        scene.validate()?;
        episode.validate()?;
        let (w, h) = (scene.width, scene.height);
        let mut wall = vec![false; w * h];
        for c in &scene.walls {
            wall[c[1] * w + c[0]] = true;
        }
        let mut object = vec![false; w * h];
        for o in &scene.objects {
            object[o.y * w + o.x] = true;
        }
        let mut world = World {
            scene,
            sensor,
            episode,
            wall,
            object,
            fields: BTreeMap::new(),
        };
        let fields = world
            .scene
            .distinct_categories()
            .into_iter()
            .map(|c| (c, DistanceField::compute(&world, c)))
            .collect();
        world.fields = fields;
        Ok(world)
    }

    pub fn with_defaults(scene: SceneSpec) -> Result<World, WorldError> {
        World::new(scene, SensorConfig::default(), EpisodeConfig::default())
    }

    pub fn width(&self) -> usize {
        self.scene.width
    }

    pub fn height(&self) -> usize {
        self.scene.height
    }

    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        self.wall[y * self.scene.width + x]
    }

    pub fn is_object(&self, x: usize, y: usize) -> bool {
        self.object[y * self.scene.width + x]
    }

    /// Walkable: inside the grid, not a wall, not an object.
    pub fn is_free(&self, x: i64, y: i64) -> bool {
        self.scene.in_bounds(x, y) && {
            let i = y as usize * self.scene.width + x as usize;
            !self.wall[i] && !self.object[i]
        }
    }

    pub fn is_valid_state(&self, s: &AgentState) -> bool {
        self.is_free(s.x as i64, s.y as i64)
    }

    pub fn state_count(&self) -> usize {
        self.scene.width * self.scene.height * POSES_PER_CELL
    }

    pub fn state_index(&self, s: &AgentState) -> usize {
        ((s.y * self.scene.width + s.x) * 4 + s.heading.index()) * 3 + s.pitch.index()
    }

    pub fn state_at(&self, index: usize) -> AgentState {
        let p = index % 3;
        let h = (index / 3) % 4;
        let cell = index / POSES_PER_CELL;
        AgentState::new(cell % self.scene.width, cell / self.scene.width, Heading::ALL[h], Pitch::ALL[p])
    }

    /// All valid poses, in index order.
    pub fn free_states(&self) -> Vec<AgentState> {
        (0..self.state_count())
            .map(|i| self.state_at(i))
            .filter(|s| self.is_valid_state(s))
            .collect()
    }

    /// Categories with at least one reachable success pose.
    pub fn reachable_targets(&self) -> Vec<usize> {
        self.fields
            .iter()
            .filter(|(_, f)| f.has_goal())
            .map(|(&c, _)| c)
            .collect()
    }

    pub fn distance_field(&self, target: usize) -> Result<&DistanceField, WorldError> {
        self.fields
            .get(&target)
            .ok_or(WorldError::TargetAbsent(target))
    }
}

/// Outcome class of a single action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepEvent {
    Moved,
    Collision,
    Rotated,
    Looked,
    Success,
    Failure,
}

/// Pure pose transition for motion actions; `Done` leaves the pose unchanged.
pub fn transition(world: &World, state: &AgentState, action: Action) -> (AgentState, StepEvent) {
    let mut next = *state;
    let event = match action {
        Action::MoveAhead => {
            let (dx, dy) = state.heading.delta();
            let (nx, ny) = (state.x as i64 + dx, state.y as i64 + dy);
            if world.is_free(nx, ny) {
                next.x = nx as usize;
                next.y = ny as usize;
                StepEvent::Moved
            } else {
                StepEvent::Collision
            }
        }
        Action::RotateLeft => {
            next.heading = state.heading.left();
            StepEvent::Rotated
        }
        Action::RotateRight => {
            next.heading = state.heading.right();
            StepEvent::Rotated
        }
        Action::LookUp => {
            next.pitch = state.pitch.up();
            StepEvent::Looked
        }
        Action::LookDown => {
            next.pitch = state.pitch.down();
            StepEvent::Looked
        }
        Action::Done => StepEvent::Failure,
    };
    (next, event)
}

/// Some instance of `target` is within the success radius and visible.
pub fn success_check(world: &World, state: &AgentState, target: usize) -> bool {
    let limit_cells = world.episode.success_distance_m / world.scene.cell_size;
    world
        .scene
        .objects
        .iter()
        .filter(|o| o.category == target)
        .any(|o| {
            let s = sight(world, state, (o.x, o.y), o.category);
            s.visible && s.distance_cells <= limit_cells + 1e-9
        })
}

/// Seeded start pose and target: the target is drawn uniformly from the
/// categories with a reachable success pose, the pose uniformly from all
/// valid poses.
pub fn reset(world: &World, episode_seed: u64) -> Result<(AgentState, usize), WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let targets = world.reachable_targets();
    let target = *targets
        .choose(&mut rng)
        .ok_or_else(|| WorldError::NoReachableTarget(world.scene.scene_id.clone()))?;
    let free: Vec<usize> = (0..world.width() * world.height())
        .filter(|&i| world.is_free((i % world.width()) as i64, (i / world.width()) as i64))
        .collect();
    let cell = free[rng.gen_range(0..free.len())];
    let heading = Heading::ALL[rng.gen_range(0..4)];
    let pitch = Pitch::ALL[rng.gen_range(0..3)];
    Ok((
        AgentState::new(cell % world.width(), cell / world.width(), heading, pitch),
        target,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeStatus {
    Running,
    Success,
    /// `Done` issued away from a success pose.
    Failure,
    /// Step limit reached without `Done`.
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: AgentState,
    pub reward: f64,
    pub done: bool,
    pub event: StepEvent,
    pub status: EpisodeStatus,
}

/// Mutable state of one navigation attempt.
#[derive(Clone, Debug)]
pub struct Episode<'w> {
    world: &'w World,
    state: AgentState,
    target: usize,
    steps: usize,
    status: EpisodeStatus,
}

impl<'w> Episode<'w> {
    pub fn start(world: &'w World, state: AgentState, target: usize) -> Result<Self, WorldError> {
        if !world.is_valid_state(&state) {
            return Err(WorldError::InvalidState(state));
        }
        Ok(Self {
            world,
            state,
            target,
            steps: 0,
            status: EpisodeStatus::Running,
        })
    }

    pub fn from_seed(world: &'w World, episode_seed: u64) -> Result<Self, WorldError> {
        let (state, target) = reset(world, episode_seed)?;
        Self::start(world, state, target)
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn state(&self) -> AgentState {
        self.state
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    pub fn is_done(&self) -> bool {
        self.status != EpisodeStatus::Running
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, WorldError> {
        if self.is_done() {
            return Err(WorldError::EpisodeFinished);
        }
        let cfg = &self.world.episode;
        self.steps += 1;
        let (next, mut event) = transition(self.world, &self.state, action);
        let mut reward = cfg.step_penalty;
        if action == Action::Done {
            if success_check(self.world, &self.state, self.target) {
                event = StepEvent::Success;
                reward = cfg.success_reward;
                self.status = EpisodeStatus::Success;
            } else {
                self.status = EpisodeStatus::Failure;
            }
        } else if self.steps >= cfg.max_steps {
            self.status = EpisodeStatus::Timeout;
        }
        self.state = next;
        Ok(StepOutcome {
            state: next,
            reward,
            done: self.is_done(),
            event,
            status: self.status,
        })
    }
}
