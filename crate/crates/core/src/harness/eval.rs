use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::metrics::EpisodeResult;
use super::HarnessError;
use crate::diffcore::AdamState;
use crate::gridworld::{
    category_name, expert_action, optimal_length, render_observation, Action, AgentState, Episode, EpisodeStatus,
    World, NUM_ACTIONS,
};
use crate::navpolicy::{action_one_hot, infer, select_action, NavParameters, PerceptInput, SelectMode};
use crate::tpn::{
    detect_deadlock, record_step, test_time_adapt, tpn_action, visual_feature, DeadlockConfig, ExternalMemory,
    InternalMemory, RecurrentState, TpnParameters,
};

/// Deterministic 64-bit mixing of a seed with two indices.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a policy sees before choosing an action.
pub struct StepView<'a> {
    pub world: &'a World,
    pub state: AgentState,
    pub target: usize,
    pub input: &'a PerceptInput,
    pub feature: &'a [f64],
    pub deadlock: bool,
    pub internal: &'a InternalMemory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// Distribution recorded in the internal memory.
    pub distribution: [f64; NUM_ACTIONS],
}

impl Decision {
    pub fn deterministic(action: Action) -> Self {
        let mut distribution = [0.0; NUM_ACTIONS];
        distribution.copy_from_slice(action_one_hot(Some(action)).data());
        Self { action, distribution }
    }
}

pub trait Policy {
    fn begin_episode(&mut self) -> Result<(), HarnessError>;
    fn act(&mut self, view: &StepView) -> Result<Decision, HarnessError>;
    /// Test-time updates applied during the current episode.
    fn adaptations(&self) -> usize {
        0
    }
}

pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn begin_episode(&mut self) -> Result<(), HarnessError> {
        Ok(())
    }

    fn act(&mut self, view: &StepView) -> Result<Decision, HarnessError> {
        Ok(Decision::deterministic(expert_action(view.world, &view.state, view.target)?))
    }
}

/// Uniform over all actions.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn begin_episode(&mut self) -> Result<(), HarnessError> {
        Ok(())
    }

    fn act(&mut self, _view: &StepView) -> Result<Decision, HarnessError> {
        let a = Action::from_index(self.rng.gen_range(0..NUM_ACTIONS)).expect("in range");
        Ok(Decision { action: a, distribution: [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS] })
    }
}

/// Always issues `Done`.
pub struct DonePolicy;

impl Policy for DonePolicy {
    fn begin_episode(&mut self) -> Result<(), HarnessError> {
        Ok(())
    }

    fn act(&mut self, _view: &StepView) -> Result<Decision, HarnessError> {
        Ok(Decision::deterministic(Action::Done))
    }
}

/// Test-time adaptation settings.
#[derive(Clone, Copy, Debug)]
pub struct Adaptation<'a> {
    pub tpn: &'a TpnParameters,
    pub learning_rate: f64,
}

/// The navigation network as a policy, optionally adapted by the TPN at
/// deadlock steps. Each episode starts from the base parameters.
#[derive(Clone)]
pub struct NavAgent<'a> {
    base: &'a NavParameters,
    working: Option<NavParameters>,
    adaptation: Option<Adaptation<'a>>,
    use_graph: bool,
    mode: SelectMode,
    rng: ChaCha8Rng,
    context: RecurrentState,
    adam: AdamState,
    adaptations: usize,
}

impl<'a> NavAgent<'a> {
    pub fn new(base: &'a NavParameters, use_graph: bool, mode: SelectMode, seed: u64) -> Self {
        Self {
            base,
            working: None,
            adaptation: None,
            use_graph,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            context: RecurrentState::default(),
            adam: AdamState::default(),
            adaptations: 0,
        }
    }

    pub fn with_adaptation(mut self, adaptation: Adaptation<'a>) -> Self {
        self.adam = AdamState::new(adaptation.learning_rate);
        self.adaptation = Some(adaptation);
        self
    }

    /// Parameters the next action will use.
    pub fn current_params(&self) -> &NavParameters {
        self.working.as_ref().unwrap_or(self.base)
    }

    pub fn context(&self) -> &RecurrentState {
        &self.context
    }

    pub fn set_context(&mut self, context: RecurrentState) {
        self.context = context;
    }

    /// Discards test-time updates and optimizer state.
    pub fn restore(&mut self) {
        self.working = None;
        self.adam.reset();
        self.adaptations = 0;
    }
}

impl Policy for NavAgent<'_> {
    fn begin_episode(&mut self) -> Result<(), HarnessError> {
        self.restore();
        self.context = RecurrentState::default();
        Ok(())
    }

    fn act(&mut self, view: &StepView) -> Result<Decision, HarnessError> {
        if let (true, Some(ad)) = (view.deadlock, self.adaptation) {
            let guidance = tpn_action(ad.tpn, view.feature, view.internal)?;
            let base = self.base;
            let params = self.working.get_or_insert_with(|| base.clone());
            test_time_adapt(params, &mut self.adam, view.input, &self.context, self.use_graph, guidance)?;
            self.adaptations += 1;
        }
        let params = self.working.as_ref().unwrap_or(self.base);
        let out = infer(params, view.input, self.context.prev_action, &self.context.hidden, self.use_graph)?;
        let action = select_action(&out.distribution, self.mode, &mut self.rng);
        self.context = RecurrentState { hidden: out.next_hidden, prev_action: Some(action) };
        Ok(Decision { action, distribution: out.distribution })
    }

    fn adaptations(&self) -> usize {
        self.adaptations
    }
}

/// One step of a trace: the pose acted from and the action taken.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub state: AgentState,
    pub action: Action,
    pub deadlock: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub final_state: AgentState,
    pub target: usize,
    pub status: EpisodeStatus,
}

impl EpisodeTrace {
    pub fn success(&self) -> bool {
        self.status == EpisodeStatus::Success
    }
}

/// Drives one episode: perception, memories and deadlock flags.
#[derive(Clone)]
pub struct EpisodeRunner<'w> {
    world: &'w World,
    episode: Episode<'w>,
    episode_seed: u64,
    optimal: usize,
    deadlock_cfg: DeadlockConfig,
    input: PerceptInput,
    feature: Vec<f64>,
    external: ExternalMemory,
    internal: InternalMemory,
    trace: Vec<TraceStep>,
    deadlock_events: usize,
}

impl<'w> EpisodeRunner<'w> {
    pub fn new(world: &'w World, episode_seed: u64, deadlock_cfg: DeadlockConfig) -> Result<Self, HarnessError> {
        let episode = Episode::from_seed(world, episode_seed)?;
        Self::from_episode(world, episode, episode_seed, deadlock_cfg)
    }

    pub fn from_episode(
        world: &'w World,
        episode: Episode<'w>,
        episode_seed: u64,
        deadlock_cfg: DeadlockConfig,
    ) -> Result<Self, HarnessError> {
        let target = episode.target();
        let optimal = optimal_length(world, &episode.state(), target)?;
        let input = perceive(world, &episode.state(), target, episode_seed);
        let feature = visual_feature(&input);
        Ok(Self {
            world,
            episode,
            episode_seed,
            optimal,
            deadlock_cfg,
            input,
            feature,
            external: ExternalMemory::default(),
            internal: InternalMemory::default(),
            trace: Vec::new(),
            deadlock_events: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.episode.is_done()
    }

    pub fn episode(&self) -> &Episode<'w> {
        &self.episode
    }

    pub fn external(&self) -> &ExternalMemory {
        &self.external
    }

    pub fn internal(&self) -> &InternalMemory {
        &self.internal
    }

    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    /// The current feature repeats an earlier one of this episode.
    pub fn at_deadlock(&self) -> bool {
        detect_deadlock(&self.external, &self.feature, &self.deadlock_cfg)
    }

    pub fn step(&mut self, policy: &mut dyn Policy) -> Result<Decision, HarnessError> {
        let deadlock = self.at_deadlock();
        if deadlock {
            self.deadlock_events += 1;
        }
        let state = self.episode.state();
        let target = self.episode.target();
        let decision = policy.act(&StepView {
            world: self.world,
            state,
            target,
            input: &self.input,
            feature: &self.feature,
            deadlock,
            internal: &self.internal,
        })?;
        let out = self.episode.step(decision.action)?;
        let next_input = perceive(self.world, &out.state, target, self.episode_seed);
        let next_feature = visual_feature(&next_input);
        record_step(&mut self.external, &mut self.internal, &self.feature, decision.distribution, &next_feature);
        self.input = next_input;
        self.feature = next_feature;
        self.trace.push(TraceStep { state, action: decision.action, deadlock });
        Ok(decision)
    }

    pub fn trace(&self) -> EpisodeTrace {
        EpisodeTrace {
            steps: self.trace.clone(),
            final_state: self.episode.state(),
            target: self.episode.target(),
            status: self.episode.status(),
        }
    }

    pub fn result(&self, adaptations: usize) -> EpisodeResult {
        let scene = &self.world.scene;
        EpisodeResult {
            scene_id: scene.scene_id.clone(),
            scene_type: scene.scene_type.as_str().to_string(),
            target: category_name(self.episode.target()).to_string(),
            episode_seed: self.episode_seed,
            success: self.episode.status() == EpisodeStatus::Success,
            steps: self.episode.steps(),
            optimal: self.optimal,
            deadlock_events: self.deadlock_events,
            adaptations,
        }
    }
}

pub fn perceive(world: &World, state: &AgentState, target: usize, noise_seed: u64) -> PerceptInput {
    PerceptInput::from_observation(&render_observation(world, state, target, noise_seed), target)
}

/// Runs one full episode.
pub fn run_episode(
    world: &World,
    episode_seed: u64,
    policy: &mut dyn Policy,
    deadlock_cfg: DeadlockConfig,
) -> Result<(EpisodeResult, EpisodeTrace), HarnessError> {
    let mut runner = EpisodeRunner::new(world, episode_seed, deadlock_cfg)?;
    policy.begin_episode()?;
    while !runner.is_done() {
        runner.step(policy)?;
    }
    Ok((runner.result(policy.adaptations()), runner.trace()))
}

/// Seed of episode `episode` in scene `scene` for an evaluation seeded `seed`.
pub fn episode_seed(seed: u64, scene: usize, episode: usize) -> u64 {
    mix_seed(seed, scene as u64 + 1, episode as u64 + 1)
}

/// Every scene for `episodes_per_scene` episodes, in scene then episode order.
pub fn evaluate(
    policy: &mut dyn Policy,
    worlds: &[World],
    episodes_per_scene: usize,
    seed: u64,
    deadlock_cfg: DeadlockConfig,
) -> Result<Vec<EpisodeResult>, HarnessError> {
    let mut results = Vec::with_capacity(worlds.len() * episodes_per_scene);
    for (si, world) in worlds.iter().enumerate() {
        for e in 0..episodes_per_scene {
            let (r, _) = run_episode(world, episode_seed(seed, si, e), policy, deadlock_cfg)?;
            results.push(r);
        }
    }
    Ok(results)
}

/// Greedy evaluation of a checkpoint; `adapt` requires its TPN.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    worlds: &[World],
    episodes_per_scene: usize,
    adapt: bool,
    seed: u64,
) -> Result<Vec<EpisodeResult>, HarnessError> {
    let cfg = &checkpoint.meta.config;
    let mut agent = NavAgent::new(&checkpoint.nav, cfg.use_graph, SelectMode::Greedy, seed);
    if adapt {
        let tpn = checkpoint.require_tpn()?;
        agent = agent.with_adaptation(Adaptation { tpn, learning_rate: cfg.adapt_learning_rate });
    }
    evaluate(&mut agent, worlds, episodes_per_scene, seed, cfg.deadlock)
}
