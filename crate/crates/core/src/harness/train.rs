use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::config::{ImitationGating, ImitationMode, Stage, TrainConfig};
use super::eval::{evaluate, mix_seed, perceive, NavAgent};
use super::metrics::compute_success_rate;
use super::suite::SceneSuite;
use super::HarnessError;
use crate::diffcore::{adam_step, AdamState, Tape, Tensor};
use crate::gridworld::{expert_action, Action, Episode, EpisodeConfig, SceneSpec, SensorConfig, World};
use crate::navpolicy::{
    a3c_loss, buffer_il_loss, infer, joint_representation, policy_forward, select_action, total_loss, LossBreakdown,
    NavParameters, PerceptInput, SelectMode, StepRecord, TrajectoryBuffer, NAV_TENSOR_COUNT,
};
use crate::tpn::{
    detect_deadlock, roll_frozen_nav, tpn_loss, train_tpn_step, visual_feature, DeadlockSample, ExternalMemory,
    RecurrentState, TpnParameters, TpnRolloutConfig,
};

pub fn build_worlds(scenes: &[SceneSpec], noise: f64) -> Result<Vec<World>, HarnessError> {
    let sensor = SensorConfig { confidence_noise: noise, ..SensorConfig::default() };
    scenes
        .iter()
        .map(|s| Ok(World::new(s.clone(), sensor.clone(), EpisodeConfig::default())?))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub episodes: u64,
    pub steps: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NavTrainLog {
    pub updates: Vec<UpdateLog>,
    /// `(episodes finished, validation success)`.
    pub validation: Vec<(u64, f64)>,
    pub train_successes: u64,
    pub episodes: u64,
    pub expert_calls: u64,
    pub imitation_steps: u64,
    pub steps: u64,
}

pub struct NavTrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: NavTrainLog,
}

struct ActiveEpisode<'w> {
    world: &'w World,
    episode: Episode<'w>,
    seed: u64,
    external: ExternalMemory,
    context: RecurrentState,
    prev_deadlock: bool,
    input: PerceptInput,
    feature: Vec<f64>,
}

struct Worker<'w> {
    rng: ChaCha8Rng,
    active: Option<ActiveEpisode<'w>>,
}

struct SegmentOut {
    grads: Vec<Tensor>,
    loss: LossBreakdown,
    steps: usize,
    finished: Option<bool>,
    expert_calls: u64,
    imitation_steps: u64,
}

fn start_episode<'w>(worlds: &'w [World], rng: &mut ChaCha8Rng) -> Result<ActiveEpisode<'w>, HarnessError> {
    let world = &worlds[rng.gen_range(0..worlds.len())];
    let seed: u64 = rng.gen();
    let episode = Episode::from_seed(world, seed)?;
    let input = perceive(world, &episode.state(), episode.target(), seed);
    let feature = visual_feature(&input);
    Ok(ActiveEpisode {
        world,
        episode,
        seed,
        external: ExternalMemory::default(),
        context: RecurrentState::default(),
        prev_deadlock: false,
        input,
        feature,
    })
}

fn run_segment<'w>(
    params: &NavParameters,
    worlds: &'w [World],
    worker: &mut Worker<'w>,
    cfg: &TrainConfig,
) -> Result<SegmentOut, HarnessError> {
    if worker.active.is_none() {
        worker.active = Some(start_episode(worlds, &mut worker.rng)?);
    }
    let ep = worker.active.as_mut().expect("just started");
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let mut hidden = tape.constant(ep.context.hidden.clone());
    let mut prev = ep.context.prev_action;
    let mut buffer = TrajectoryBuffer::default();
    let (mut expert_calls, mut imitation_steps) = (0, 0);
    for _ in 0..cfg.unroll {
        let deadlock = detect_deadlock(&ep.external, &ep.feature, &cfg.deadlock);
        let supervised = match cfg.imitation {
            ImitationMode::Off => false,
            ImitationMode::EveryStep => true,
            ImitationMode::Deadlock => match cfg.gating {
                ImitationGating::WhileRepeating => deadlock,
                ImitationGating::OnsetOnly => deadlock && !ep.prev_deadlock,
            },
        };
        let joint = joint_representation(&mut tape, &vars, &ep.input, prev, hidden, cfg.use_graph)?;
        let out = policy_forward(&mut tape, &vars, joint)?;
        let mut dist = [0.0; 6];
        dist.copy_from_slice(tape.value(out.probs).data());
        let sampled = select_action(&dist, cfg.train_select, &mut worker.rng);
        let expert = if supervised {
            expert_calls += 1;
            imitation_steps += 1;
            Some(expert_action(ep.world, &ep.episode.state(), ep.episode.target())?)
        } else {
            None
        };
        let action = match expert {
            Some(e) if cfg.execute_expert => e,
            _ => sampled,
        };
        let expert = expert.map(Action::index);
        let step = ep.episode.step(action)?;
        ep.external.push(std::mem::take(&mut ep.feature));
        ep.prev_deadlock = deadlock;
        ep.input = perceive(ep.world, &step.state, ep.episode.target(), ep.seed);
        ep.feature = visual_feature(&ep.input);
        buffer.steps.push(StepRecord { probs: out.probs, value: out.value, action: action.index(), reward: step.reward, expert });
        hidden = out.next_hidden;
        prev = Some(action);
        if step.done {
            break;
        }
    }
    let done = ep.episode.is_done();
    let hidden_value = tape.value(hidden).clone();
    buffer.bootstrap = if done { 0.0 } else { infer(params, &ep.input, prev, &hidden_value, cfg.use_graph)?.value };
    ep.context = RecurrentState { hidden: hidden_value, prev_action: prev };
    let nav = a3c_loss(&mut tape, &buffer, &cfg.loss)?;
    let il = buffer_il_loss(&mut tape, &buffer)?;
    let (loss, breakdown) = total_loss(&mut tape, nav, il)?;
    tape.backward(loss)?;
    let grads = tape.grads(vars.all())?;
    let finished = done.then(|| ep.episode.status() == crate::gridworld::EpisodeStatus::Success);
    if done {
        worker.active = None;
    }
    Ok(SegmentOut { grads, loss: breakdown, steps: buffer.len(), finished, expert_calls, imitation_steps })
}

fn run_workers<'w>(
    params: &NavParameters,
    worlds: &'w [World],
    workers: &mut [Worker<'w>],
    cfg: &TrainConfig,
) -> Result<Vec<SegmentOut>, HarnessError> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(workers.len());
    if threads <= 1 {
        return workers.iter_mut().map(|w| run_segment(params, worlds, w, cfg)).collect();
    }
    let chunk = workers.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = workers
            .chunks_mut(chunk)
            .map(|ws| {
                s.spawn(move || ws.iter_mut().map(|w| run_segment(params, worlds, w, cfg)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("rollout worker panicked"))
            .collect()
    })
}

/// Greedy success rate on `worlds`.
pub fn validation_success(
    params: &NavParameters,
    use_graph: bool,
    worlds: &[World],
    episodes_per_scene: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<f64, HarnessError> {
    let mut agent = NavAgent::new(params, use_graph, SelectMode::Greedy, seed);
    let results = evaluate(&mut agent, worlds, episodes_per_scene, seed, cfg.deadlock)?;
    compute_success_rate(&results)
}

/// Stage one: actor-critic plus imitation on the training split, keeping the
/// parameters that score best on the validation split.
pub fn train_navigation(cfg: &TrainConfig, suite: &SceneSuite) -> Result<NavTrainOutcome, HarnessError> {
    cfg.validate()?;
    suite.check_disjoint()?;
    if suite.train.is_empty() {
        return Err(HarnessError::EmptySceneSet("train"));
    }
    let mut cfg = cfg.clone();
    cfg.stage = Stage::Nav;
    let train_worlds = build_worlds(&suite.train, cfg.sensor_noise)?;
    let val_worlds = build_worlds(&suite.val, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NavParameters::init(&mut rng);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut workers: Vec<Worker> = (0..cfg.workers)
        .map(|w| Worker { rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5eed, w as u64)), active: None })
        .collect();
    let val_seed = mix_seed(cfg.seed, 0x7a1, 0);
    let validate_now = !val_worlds.is_empty() && cfg.val_every > 0;
    let mut best: Option<(f64, NavParameters)> = None;
    let mut next_val = cfg.val_every;
    let mut log = NavTrainLog::default();
    while log.episodes < cfg.nav_episodes {
        let outs = run_workers(&params, &train_worlds, &mut workers, &cfg)?;
        let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        let mut loss = LossBreakdown { nav: 0.0, il: 0.0, total: 0.0 };
        let mut steps = 0;
        for out in outs {
            for (g, o) in grads.iter_mut().zip(&out.grads) {
                for (a, b) in g.data_mut().iter_mut().zip(o.data()) {
                    *a += b;
                }
            }
            loss.nav += out.loss.nav;
            loss.il += out.loss.il;
            loss.total += out.loss.total;
            steps += out.steps;
            log.expert_calls += out.expert_calls;
            log.imitation_steps += out.imitation_steps;
            if let Some(s) = out.finished {
                log.episodes += 1;
                log.train_successes += s as u64;
            }
        }
        debug_assert_eq!(grads.len(), NAV_TENSOR_COUNT);
        let mut ts = params.tensors_mut();
        adam_step(&mut ts, &grads, &mut adam)?;
        log.steps += steps as u64;
        log.updates.push(UpdateLog { episodes: log.episodes, steps, loss });
        if validate_now && (log.episodes >= next_val || log.episodes >= cfg.nav_episodes) {
            next_val = (log.episodes / cfg.val_every + 1) * cfg.val_every;
            let s = validation_success(&params, cfg.use_graph, &val_worlds, cfg.val_episodes_per_scene, val_seed, &cfg)?;
            info!("episodes {} validation success {:.3}", log.episodes, s);
            log.validation.push((log.episodes, s));
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, params.clone()));
            }
        }
    }
    let (val_success, nav) = match best {
        Some((s, p)) => (Some(s), p),
        None => (None, params),
    };
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            config: cfg.clone(),
            nav_episodes_trained: log.episodes,
            tpn_episodes_trained: 0,
            rng_seed: rng.gen(),
            val_success,
        },
        nav,
        tpn: None,
    };
    Ok(NavTrainOutcome { checkpoint, log })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TpnTrainLog {
    pub episodes: u64,
    pub updates: u64,
    pub episodes_with_deadlock: u64,
    pub probe_size: usize,
    pub initial_probe_loss: Option<f64>,
    pub final_probe_loss: Option<f64>,
}

pub struct TpnTrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TpnTrainLog,
}

/// Mean cross-entropy of the TPN over `samples`.
pub fn probe_loss(tpn: &TpnParameters, samples: &[DeadlockSample]) -> Result<Option<f64>, HarnessError> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for s in samples {
        total += tpn_loss(tpn, s)?;
    }
    Ok(Some(total / samples.len() as f64))
}

/// Deadlock samples from up to `max_episodes` rollouts of the frozen navigator.
pub fn collect_deadlock_samples(
    nav: &NavParameters,
    worlds: &[World],
    rollout: &TpnRolloutConfig,
    seed: u64,
    max_episodes: usize,
    max_samples: usize,
) -> Result<Vec<DeadlockSample>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for _ in 0..max_episodes {
        if samples.len() >= max_samples {
            break;
        }
        let world = &worlds[rng.gen_range(0..worlds.len())];
        let ep_seed: u64 = rng.gen();
        roll_frozen_nav(nav, world, ep_seed, rollout, &mut rng, |s| {
            samples.push(s.clone());
            Ok(())
        })?;
    }
    samples.truncate(max_samples);
    Ok(samples)
}

pub fn tpn_rollout_config(cfg: &TrainConfig) -> TpnRolloutConfig {
    TpnRolloutConfig { use_graph: cfg.use_graph, select: cfg.tpn_select, deadlock: cfg.deadlock }
}

/// Stage two: the navigation parameters stay fixed while the TPN learns to
/// imitate the expert at the navigator's deadlock states.
pub fn train_tpn(
    cfg: &TrainConfig,
    nav_checkpoint: &Checkpoint,
    suite: &SceneSuite,
) -> Result<TpnTrainOutcome, HarnessError> {
    cfg.validate()?;
    suite.check_disjoint()?;
    if suite.train.is_empty() {
        return Err(HarnessError::EmptySceneSet("train"));
    }
    let nav_cfg = &nav_checkpoint.meta.config;
    let mut cfg = cfg.clone();
    cfg.stage = Stage::Tpn;
    cfg.use_graph = nav_cfg.use_graph;
    let worlds = build_worlds(&suite.train, cfg.sensor_noise)?;
    let nav = &nav_checkpoint.nav;
    let rollout = tpn_rollout_config(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x7e9, 0));
    let mut tpn = TpnParameters::init(&mut rng);
    let mut adam = AdamState::new(cfg.tpn_learning_rate);
    let probe = collect_deadlock_samples(nav, &worlds, &rollout, mix_seed(cfg.seed, 0x9b0be, 0), 200, 200)?;
    let mut log = TpnTrainLog {
        probe_size: probe.len(),
        initial_probe_loss: probe_loss(&tpn, &probe)?,
        ..TpnTrainLog::default()
    };
    for _ in 0..cfg.tpn_episodes {
        let world = &worlds[rng.gen_range(0..worlds.len())];
        let ep_seed: u64 = rng.gen();
        let report = train_tpn_step(nav, world, ep_seed, &mut tpn, &mut adam, &rollout, &mut rng)?;
        log.episodes += 1;
        log.updates += report.updates as u64;
        log.episodes_with_deadlock += (report.updates > 0) as u64;
    }
    if log.updates == 0 {
        warn!("no deadlock encountered in {} episodes; TPN left at initialization", log.episodes);
    }
    log.final_probe_loss = probe_loss(&tpn, &probe)?;
    info!("tpn probe loss {:?} -> {:?}", log.initial_probe_loss, log.final_probe_loss);
    let mut meta = nav_checkpoint.meta.clone();
    meta.tpn_episodes_trained = log.episodes;
    meta.config.tpn_episodes = cfg.tpn_episodes;
    meta.config.tpn_learning_rate = cfg.tpn_learning_rate;
    meta.config.tpn_select = cfg.tpn_select;
    meta.rng_seed = rng.gen();
    let checkpoint = Checkpoint { meta, nav: nav.clone(), tpn: Some(tpn) };
    Ok(TpnTrainOutcome { checkpoint, log })
}
