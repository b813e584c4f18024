#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use orgnav::diffcore::{DiffError, Tape, Tensor, Var};
use orgnav::gridworld::*;
use orgnav::navpolicy::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random observation with `detected` categories visible.
pub fn random_observation(rng: &mut ChaCha8Rng, detected: usize) -> Observation {
    let mut obs = Observation::empty();
    for c in rand::seq::index::sample(rng, NUM_CATEGORIES, detected) {
        let x1: f64 = rng.gen_range(0.0..0.6);
        let y1: f64 = rng.gen_range(0.0..0.6);
        obs.detections[c] = Detection {
            bbox: [x1, y1, x1 + rng.gen_range(0.05..0.4), y1 + rng.gen_range(0.05..0.4)],
            confidence: rng.gen_range(0.1..1.0),
        };
        for v in obs.appearance[c].iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
    }
    for v in obs.global.iter_mut() {
        *v = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
    }
    obs
}

/// Parameters with non-negligible policy head so the check is not trivially flat.
pub fn random_params(seed: u64) -> NavParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NavParameters::init(&mut rng);
    p.policy_w = Tensor::uniform(HIDDEN_STATE_DIM, NUM_ACTIONS, -0.5, 0.5, &mut rng);
    p.dense1_b = Tensor::uniform(1, DENSE_DIM, -0.1, 0.1, &mut rng);
    p.dense2_b = Tensor::uniform(1, DENSE_DIM, -0.1, 0.1, &mut rng);
    p
}

/// Cross-entropy of the full model (detections through graph, attention and
/// policy) against `action`, with parameters given as tape variables in
/// `NAV_TENSOR_NAMES` order.
pub fn composed_ce(
    tape: &mut Tape,
    vars: &[Var],
    input: &PerceptInput,
    prev: Option<Action>,
    hidden: &Tensor,
    action: usize,
) -> Result<Var, DiffError> {
    let mut arr = [Var::default(); NAV_TENSOR_COUNT];
    arr.copy_from_slice(vars);
    let nv = NavVars(arr);
    let h = tape.constant(hidden.clone());
    let joint = joint_representation(tape, &nv, input, prev, h, true)?;
    let out = policy_forward(tape, &nv, joint)?;
    tape.cross_entropy(out.probs, action)
}

pub fn result(success: bool, steps: usize, optimal: usize) -> orgnav::harness::EpisodeResult {
    orgnav::harness::EpisodeResult {
        scene_id: "fixture".into(),
        scene_type: "living_room".into(),
        target: "Laptop".into(),
        episode_seed: 0,
        success,
        steps,
        optimal,
        deadlock_events: 0,
        adaptations: 0,
    }
}

/// Ten `(success, steps, optimal)` cases; per-episode SPL terms are
/// 0.5, 0, 1, 0.5, 0, 2/3, 0.5, 1, 0, 0.25.
pub fn metric_fixture() -> Vec<orgnav::harness::EpisodeResult> {
    [
        (true, 10, 5),
        (false, 20, 5),
        (true, 5, 5),
        (true, 8, 4),
        (false, 99, 3),
        (true, 3, 2),
        (true, 12, 6),
        (true, 7, 7),
        (false, 1, 6),
        (true, 4, 1),
    ]
    .into_iter()
    .map(|(s, l, o)| result(s, l, o))
    .collect()
}

pub const FIXTURE_SUCCESS: f64 = 0.7;
/// `(3.75 + 2/3) / 10 = 53/120`.
pub const FIXTURE_SPL: f64 = 53.0 / 120.0;

/// Single-room template without interior walls.
pub fn open_template(size: usize, objects: (usize, usize)) -> SceneTemplate {
    SceneTemplate {
        scene_type: SceneType::LivingRoom,
        width: (size, size),
        height: (size, size),
        cell_size: DEFAULT_CELL_SIZE,
        interior_walls: 0,
        object_count: objects,
        required: vec![12, 13, 7, 16],
        pool: vec![8],
        pairs: vec![],
    }
}

fn scenes(template: &SceneTemplate, base: u64, n: usize) -> Vec<SceneSpec> {
    (0..n as u64).map(|i| generate_scene(base + i, template).unwrap()).collect()
}

/// `n` open 8x8 training rooms plus two validation and two test rooms.
pub fn small_suite(seed: u64, n: usize) -> orgnav::harness::SceneSuite {
    let t = open_template(8, (4, 5));
    let base = 10_000 * (seed + 1);
    orgnav::harness::SceneSuite {
        train: scenes(&t, base, n),
        val: scenes(&t, base + 1000, 2),
        test: scenes(&t, base + 2000, 2),
    }
}

/// Four open 5x5 rooms.
pub fn tiny_suite() -> orgnav::harness::SceneSuite {
    let t = open_template(5, (4, 4));
    orgnav::harness::SceneSuite { train: scenes(&t, 300, 4), val: vec![], test: vec![] }
}

pub fn checkpoint_with(
    nav: NavParameters,
    tpn: Option<orgnav::tpn::TpnParameters>,
) -> orgnav::harness::Checkpoint {
    orgnav::harness::Checkpoint {
        meta: orgnav::harness::CheckpointMeta {
            config: orgnav::harness::TrainConfig::default(),
            nav_episodes_trained: 0,
            tpn_episodes_trained: 0,
            rng_seed: 0,
            val_success: None,
        },
        nav,
        tpn,
    }
}

/// Independent oracle: forward breadth-first search from `start` to the first
/// pose where `success_check` holds; returns the action count including Done.
pub fn bfs_length(world: &World, start: AgentState, target: usize) -> Option<usize> {
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((s, d)) = queue.pop_front() {
        if success_check(world, &s, target) {
            return Some(d + 1);
        }
        for a in Action::MOTIONS {
            let (n, _) = transition(world, &s, a);
            if seen.insert(n) {
                queue.push_back((n, d + 1));
            }
        }
    }
    None
}

/// Expert actions from `start` until the episode ends; panics unless it succeeds.
pub fn rollout_expert(world: &World, start: AgentState, target: usize) -> Vec<Action> {
    let mut ep = Episode::start(world, start, target).unwrap();
    let mut actions = Vec::new();
    while !ep.is_done() {
        let a = expert_action(world, &ep.state(), target).unwrap();
        actions.push(a);
        ep.step(a).unwrap();
    }
    assert_eq!(ep.status(), EpisodeStatus::Success);
    actions
}

/// 12x1 corridor with three fillers at the west end and a laptop at the east end.
pub fn corridor() -> World {
    let obj = |category, x| ObjectInstance { category, x, y: 0 };
    World::with_defaults(SceneSpec {
        scene_id: "corridor".into(),
        scene_type: SceneType::LivingRoom,
        width: 12,
        height: 1,
        cell_size: DEFAULT_CELL_SIZE,
        walls: vec![],
        objects: vec![obj(16, 0), obj(13, 1), obj(7, 2), obj(12, 11)],
        seed: 0,
    })
    .unwrap()
}
