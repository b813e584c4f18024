use std::collections::BTreeSet;

mod common;

use common::{bfs_length, rollout_expert};
use orgnav::gridworld::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TV: usize = 8;
const REMOTE: usize = 9;
const LAPTOP: usize = 12;
const BOOK: usize = 16;
const FLOOR_LAMP: usize = 13;
const GARBAGE: usize = 7;

fn obj(category: usize, x: usize, y: usize) -> ObjectInstance {
    ObjectInstance { category, x, y }
}

fn scene(width: usize, height: usize, walls: Vec<[usize; 2]>, objects: Vec<ObjectInstance>) -> SceneSpec {
    SceneSpec {
        scene_id: "test".into(),
        scene_type: SceneType::LivingRoom,
        width,
        height,
        cell_size: DEFAULT_CELL_SIZE,
        walls,
        objects,
        seed: 0,
    }
}

/// 10x10 room, laptop (mid height) at (5, 5), fillers in the far corners.
fn open_room() -> World {
    World::with_defaults(scene(
        10,
        10,
        vec![],
        vec![obj(LAPTOP, 5, 5), obj(BOOK, 0, 9), obj(FLOOR_LAMP, 9, 9), obj(GARBAGE, 9, 0)],
    ))
    .unwrap()
}

fn pose(x: usize, y: usize, deg: i32) -> AgentState {
    AgentState::new(x, y, Heading::from_degrees(deg).unwrap(), Pitch::LEVEL)
}

#[test]
fn co_placement_rate_matches_probability() {
    let template = SceneTemplate {
        scene_type: SceneType::LivingRoom,
        width: (8, 10),
        height: (8, 10),
        cell_size: DEFAULT_CELL_SIZE,
        interior_walls: 1,
        object_count: (6, 8),
        required: vec![LAPTOP, FLOOR_LAMP, GARBAGE],
        pool: vec![BOOK],
        pairs: vec![ConcurrencePair {
            anchor: TV,
            partner: REMOTE,
            probability: 0.8,
            radius: 2.0,
        }],
    };
    let near = (0..1000u64)
        .filter(|&seed| {
            let s = generate_scene(seed, &template).unwrap();
            let a = s.objects.iter().find(|o| o.category == TV).unwrap();
            let p = s.objects.iter().find(|o| o.category == REMOTE).unwrap();
            let d = ((a.x as f64 - p.x as f64).powi(2) + (a.y as f64 - p.y as f64).powi(2)).sqrt();
            d <= 2.0
        })
        .count();
    let rate = near as f64 / 1000.0;
    assert!((rate - 0.8).abs() <= 0.05, "rate {rate}");
}

#[test]
fn reset_is_deterministic_and_valid() {
    let world = open_room();
    assert_eq!(reset(&world, 7).unwrap(), reset(&world, 7).unwrap());
    for seed in 0..10_000u64 {
        let (s, t) = reset(&world, seed).unwrap();
        assert!(world.is_valid_state(&s), "{s:?}");
        assert!(world.scene.distinct_categories().contains(&t));
    }
}

#[test]
fn reset_covers_free_cells() {
    let world = open_room();
    let mut cells = BTreeSet::new();
    for seed in 0..100_000u64 {
        let (s, _) = reset(&world, seed).unwrap();
        cells.insert((s.x, s.y));
    }
    let free = 100 - world.scene.objects.len();
    assert!(cells.len() as f64 >= 0.9 * free as f64, "{} of {free}", cells.len());
}

#[test]
fn done_next_to_visible_target_succeeds() {
    let world = open_room();
    let mut ep = Episode::start(&world, pose(4, 5, 0), LAPTOP).unwrap();
    let out = ep.step(Action::Done).unwrap();
    assert_eq!(out.reward, 5.0);
    assert!(out.done);
    assert_eq!(out.event, StepEvent::Success);
    assert_eq!(ep.status(), EpisodeStatus::Success);
    assert!(matches!(ep.step(Action::MoveAhead), Err(WorldError::EpisodeFinished)));
}

#[test]
fn failed_done_ends_with_step_penalty() {
    let world = open_room();
    let mut ep = Episode::start(&world, pose(0, 0, 180), LAPTOP).unwrap();
    let out = ep.step(Action::Done).unwrap();
    assert_eq!(out.reward, -0.001);
    assert_eq!(out.status, EpisodeStatus::Failure);
}

#[test]
fn move_into_wall_is_a_collision() {
    let world = open_room();
    let start = pose(0, 3, 180);
    let mut ep = Episode::start(&world, start, LAPTOP).unwrap();
    let out = ep.step(Action::MoveAhead).unwrap();
    assert_eq!(out.state, start);
    assert_eq!(out.reward, -0.001);
    assert_eq!(out.event, StepEvent::Collision);
    assert!(!out.done);
    // An object cell blocks like a wall.
    let mut ep = Episode::start(&world, pose(4, 5, 0), LAPTOP).unwrap();
    assert_eq!(ep.step(Action::MoveAhead).unwrap().event, StepEvent::Collision);
}

#[test]
fn look_up_clamps_at_thirty_degrees() {
    let world = open_room();
    let start = AgentState::new(2, 2, Heading::ALL[0], Pitch::from_degrees(30).unwrap());
    let mut ep = Episode::start(&world, start, LAPTOP).unwrap();
    let out = ep.step(Action::LookUp).unwrap();
    assert_eq!(out.state.pitch.degrees(), 30);
    assert_eq!(out.reward, -0.001);
}

#[test]
fn episode_times_out_at_step_cap() {
    let world = open_room();
    let mut ep = Episode::start(&world, pose(1, 1, 0), LAPTOP).unwrap();
    let mut last = None;
    for _ in 0..99 {
        last = Some(ep.step(Action::RotateLeft).unwrap());
    }
    let last = last.unwrap();
    assert!(last.done);
    assert_eq!(last.status, EpisodeStatus::Timeout);
    assert_eq!(ep.steps(), 99);
}

#[test]
fn success_check_distance_and_frustum() {
    let world = open_room();
    assert!(success_check(&world, &pose(4, 5, 0), LAPTOP));
    // 4 cells = 2.0 m away, facing the target.
    assert!(!success_check(&world, &pose(1, 5, 0), LAPTOP));
    // 2 cells = 1.0 m away but facing away.
    assert!(!success_check(&world, &pose(3, 5, 180), LAPTOP));
    assert!(success_check(&world, &pose(3, 5, 0), LAPTOP));
}

#[test]
fn walls_occlude_the_target() {
    let world = World::with_defaults(scene(
        10,
        10,
        vec![[4, 4], [4, 5], [4, 6]],
        vec![obj(LAPTOP, 5, 5), obj(BOOK, 0, 9), obj(FLOOR_LAMP, 9, 9), obj(GARBAGE, 9, 0)],
    ))
    .unwrap();
    assert!(!success_check(&world, &pose(3, 5, 0), LAPTOP));
    let obs = render_observation(&world, &pose(3, 5, 0), LAPTOP, 0);
    assert_eq!(obs.detections[LAPTOP], Detection::default());
}

#[test]
fn empty_view_gives_zero_detections() {
    let world = open_room();
    let obs = render_observation(&world, &pose(0, 0, 180), LAPTOP, 3);
    assert_eq!(obs.detected_count(), 0);
    assert!(obs.detections.iter().all(|d| d.bbox == [0.0; 4] && d.confidence == 0.0));
    assert!(obs.appearance.iter().all(|a| a.iter().all(|&v| v == 0.0)));
}

#[test]
fn rendering_is_deterministic_with_noise() {
    let world = World::new(open_room().scene, SensorConfig::noisy(), EpisodeConfig::default()).unwrap();
    let s = pose(2, 5, 0);
    assert_eq!(
        render_observation(&world, &s, LAPTOP, 99),
        render_observation(&world, &s, LAPTOP, 99)
    );
    let c1 = render_observation(&world, &s, LAPTOP, 1).detections[LAPTOP].confidence;
    let c2 = render_observation(&world, &s, LAPTOP, 2).detections[LAPTOP].confidence;
    assert!(c1 != c2 && (c1 - 0.7).abs() <= 0.1 + 1e-12 && (c2 - 0.7).abs() <= 0.1 + 1e-12);
}

#[test]
fn nearer_objects_look_bigger_and_more_confident() {
    let world = open_room();
    let area = |d: &Detection| (d.bbox[2] - d.bbox[0]) * (d.bbox[3] - d.bbox[1]);
    let near = render_observation(&world, &pose(4, 5, 0), LAPTOP, 0).detections[LAPTOP];
    let far = render_observation(&world, &pose(0, 5, 0), LAPTOP, 0).detections[LAPTOP];
    assert!(near.confidence > far.confidence);
    assert!(area(&near) > area(&far));
    // Non-increasing confidence with distance along a fixed bearing.
    let confs: Vec<f64> = (0..5)
        .map(|x| render_observation(&world, &pose(x, 5, 0), LAPTOP, 0).detections[LAPTOP].confidence)
        .collect();
    assert!(confs.windows(2).all(|w| w[0] <= w[1]), "{confs:?}");
}

#[test]
fn global_feature_sees_walls_ahead() {
    let world = open_room();
    let obs = render_observation(&world, &pose(0, 5, 180), LAPTOP, 0);
    assert!(obs.global[..42].iter().all(|&v| v == 1.0));
    let obs = render_observation(&world, &pose(4, 5, 0), LAPTOP, 0);
    assert_eq!(obs.global[42 + LAPTOP], 0.5);
}

#[test]
fn expert_says_done_at_success_state() {
    let world = open_room();
    assert_eq!(expert_action(&world, &pose(4, 5, 0), LAPTOP).unwrap(), Action::Done);
    assert_eq!(optimal_length(&world, &pose(4, 5, 0), LAPTOP).unwrap(), 1);
    // 2.0 m away facing the target: one MoveAhead then Done.
    assert_eq!(expert_action(&world, &pose(1, 5, 0), LAPTOP).unwrap(), Action::MoveAhead);
    assert_eq!(optimal_length(&world, &pose(1, 5, 0), LAPTOP).unwrap(), 2);
}

#[test]
fn corridor_facing_away_rotates_left() {
    let world = World::with_defaults(scene(
        12,
        1,
        vec![],
        vec![obj(BOOK, 0, 0), obj(FLOOR_LAMP, 1, 0), obj(GARBAGE, 2, 0), obj(LAPTOP, 11, 0)],
    ))
    .unwrap();
    let start = pose(5, 0, 180);
    assert_eq!(expert_action(&world, &start, LAPTOP).unwrap(), Action::RotateLeft);
    // Rollout never revisits a pose and ends in success.
    let plan = rollout_expert(&world, start, LAPTOP);
    assert_eq!(plan.last(), Some(&Action::Done));
    assert_eq!(plan.len(), bfs_length(&world, start, LAPTOP).unwrap());
}

#[test]
fn unreachable_and_absent_targets_error() {
    let world = open_room();
    assert!(matches!(
        expert_action(&world, &pose(1, 1, 0), TV),
        Err(WorldError::TargetAbsent(TV))
    ));
}

#[test]
fn expert_rollouts_match_bfs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..200u64 {
        let st = SceneType::ALL[(i % 4) as usize];
        let scene = generate_scene(rng.gen(), &SceneTemplate::builtin(st, 0.9)).unwrap();
        let world = World::with_defaults(scene).unwrap();
        let (start, target) = reset(&world, rng.gen()).unwrap();
        let oracle = bfs_length(&world, start, target).unwrap();
        let plan = rollout_expert(&world, start, target);
        assert_eq!(plan.len(), oracle, "case {i}");
        assert_eq!(optimal_length(&world, &start, target).unwrap(), oracle);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_action_sequences_keep_valid_poses(seed in any::<u64>(), actions in prop::collection::vec(0usize..5, 1..150)) {
        let world = open_room();
        let (start, target) = reset(&world, seed).unwrap();
        let run = |world: &World| {
            let mut ep = Episode::start(world, start, target).unwrap();
            let mut trace = Vec::new();
            for &a in &actions {
                if ep.is_done() { break; }
                let out = ep.step(Action::from_index(a).unwrap()).unwrap();
                prop_assert!(world.is_valid_state(&out.state));
                trace.push((out.state, out.reward));
            }
            Ok(trace)
        };
        let a = run(&world)?;
        let b = run(&world)?;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn episode_reward_follows_closed_form(seed in any::<u64>(), actions in prop::collection::vec(0usize..6, 1..120)) {
        let world = open_room();
        let mut ep = Episode::from_seed(&world, seed).unwrap();
        let mut total = 0.0;
        for &a in &actions {
            if ep.is_done() { break; }
            total += ep.step(Action::from_index(a).unwrap()).unwrap().reward;
        }
        if ep.is_done() {
            let steps = ep.steps() as f64;
            let last = if ep.status() == EpisodeStatus::Success { 5.0 } else { -0.001 };
            prop_assert!((total - ((steps - 1.0) * -0.001 + last)).abs() < 1e-12);
        }
    }
}
