mod common;

use common::*;
use orgnav::diffcore::*;
use orgnav::gridworld::*;
use orgnav::navpolicy::*;
use orgnav::orggraph::*;
use orgnav::tpn::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn relu_matmul_reference(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc.max(0.0));
        }
    }
    out
}

fn forward_graph(laf: &Tensor, org: &OrgParameters, appearance: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let x = tape.constant(laf.clone());
    let a = tape.constant(org.adjacency.clone());
    let w = tape.constant(org.embedding.clone());
    let f = tape.constant(appearance.clone());
    let z = org_forward(&mut tape, x, a, w).unwrap();
    let fh = graph_attention(&mut tape, z, f).unwrap();
    (tape.value(z).clone(), tape.value(fh).clone())
}

fn random_graph_inputs(seed: u64) -> (Tensor, OrgParameters, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = random_observation(&mut rng, 6);
    let target = rng.gen_range(0..NUM_CATEGORIES);
    let mut org = OrgParameters::init(&mut rng);
    org.adjacency = Tensor::uniform(NUM_CATEGORIES, NUM_CATEGORIES, -1.0, 1.0, &mut rng);
    (build_laf(&obs, target), org, appearance_matrix(&obs))
}

#[test]
fn graph_layers_match_straight_line_reference() {
    for seed in 0..20 {
        let (laf, org, app) = random_graph_inputs(seed);
        let (z, fh) = forward_graph(&laf, &org, &app);
        let ax = org.adjacency.matmul(&laf).unwrap();
        let mut z_ref = Tensor::zeros(NUM_CATEGORIES, NUM_CATEGORIES);
        for i in 0..NUM_CATEGORIES {
            for j in 0..NUM_CATEGORIES {
                let s: f64 = (0..LAF_DIM).map(|k| ax.get(i, k) * org.embedding.get(k, j)).sum();
                z_ref.set(i, j, s.max(0.0));
            }
        }
        assert!(z.max_abs_diff(&z_ref) <= 1e-10);
        assert!(fh.max_abs_diff(&relu_matmul_reference(&z_ref, &app)) <= 1e-10);
        assert!(z.data().iter().chain(fh.data()).all(|&v| v >= 0.0));
    }
}

#[test]
fn zero_inputs_give_zero_graph_outputs() {
    let (laf, org, app) = random_graph_inputs(3);
    let (z, _) = forward_graph(&Tensor::zeros(NUM_CATEGORIES, LAF_DIM), &org, &app);
    assert!(z.data().iter().all(|&v| v == 0.0));
    let (_, fh) = forward_graph(&laf, &org, &Tensor::zeros(NUM_CATEGORIES, APPEARANCE_DIM));
    assert!(fh.data().iter().all(|&v| v == 0.0));
}

#[test]
fn identity_relation_passes_appearance_through_relu() {
    let (_, _, app) = random_graph_inputs(4);
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::identity(NUM_CATEGORIES));
    let f = tape.constant(app.clone());
    let fh = graph_attention(&mut tape, z, f).unwrap();
    assert_eq!(tape.value(fh), &app.map(|v| v.max(0.0)));
}

#[test]
fn identity_adjacency_is_transparent() {
    let (laf, mut org, _) = random_graph_inputs(5);
    org.adjacency = Tensor::identity(NUM_CATEGORIES);
    let (z, _) = forward_graph(&laf, &org, &Tensor::zeros(NUM_CATEGORIES, APPEARANCE_DIM));
    assert!(z.max_abs_diff(&relu_matmul_reference(&laf, &org.embedding)) <= 1e-12);
}

fn swap_rows(t: &Tensor, i: usize, j: usize) -> Tensor {
    let mut out = t.clone();
    for c in 0..t.cols() {
        out.set(i, c, t.get(j, c));
        out.set(j, c, t.get(i, c));
    }
    out
}

fn swap_cols(t: &Tensor, i: usize, j: usize) -> Tensor {
    swap_rows(&t.transpose(), i, j).transpose()
}

#[test]
fn swapping_two_categories_permutes_graph_outputs() {
    for seed in 0..10 {
        let (laf, org, app) = random_graph_inputs(seed);
        let target = (0..NUM_CATEGORIES).find(|&r| laf.get(r, 5) == 1.0).unwrap();
        let (i, j) = if target < 2 { (5, 9) } else { (0, 1) };
        let swapped_org = OrgParameters {
            adjacency: swap_cols(&swap_rows(&org.adjacency, i, j), i, j),
            embedding: swap_cols(&org.embedding, i, j),
        };
        let (z, fh) = forward_graph(&laf, &org, &app);
        let (z2, fh2) = forward_graph(&swap_rows(&laf, i, j), &swapped_org, &swap_rows(&app, i, j));
        assert!(z2.max_abs_diff(&swap_cols(&swap_rows(&z, i, j), i, j)) <= 1e-12);
        assert!(fh2.max_abs_diff(&swap_rows(&fh, i, j)) <= 1e-12);
    }
}

#[test]
fn perturbing_one_detection_touches_only_its_laf_block() {
    let (laf, org, app) = random_graph_inputs(11);
    let local = |laf: &Tensor| {
        let mut tape = Tape::new();
        let x = tape.constant(laf.clone());
        let f = tape.constant(app.clone());
        let a = tape.constant(org.adjacency.clone());
        let w = tape.constant(org.embedding.clone());
        let v = local_feature(&mut tape, x, f, Some((a, w))).unwrap();
        tape.value(v).data().to_vec()
    };
    let row = 7;
    let mut moved = laf.clone();
    moved.set(row, 0, laf.get(row, 0) + 0.05);
    let (before, after) = (local(&laf), local(&moved));
    assert_eq!(before.len(), LOCAL_DIM);
    let width = APPEARANCE_DIM + LAF_DIM;
    for r in 0..NUM_CATEGORIES {
        for c in 0..LAF_DIM {
            let k = r * width + APPEARANCE_DIM + c;
            assert_eq!(before[k] != after[k], r == row && c == 0, "laf entry {r},{c}");
        }
    }
}

#[test]
fn without_graph_the_local_feature_is_raw_appearance_and_detections() {
    let (laf, _, app) = random_graph_inputs(12);
    let mut tape = Tape::new();
    let x = tape.constant(laf.clone());
    let f = tape.constant(app.clone());
    let v = local_feature(&mut tape, x, f, None).unwrap();
    let data = tape.value(v).data().to_vec();
    for r in 0..NUM_CATEGORIES {
        let block = &data[r * 22..(r + 1) * 22];
        assert_eq!(&block[..APPEARANCE_DIM], app.row_slice(r));
        assert_eq!(&block[APPEARANCE_DIM..], laf.row_slice(r));
    }
}

#[test]
fn parameter_count_is_independent_of_the_graph_switch() {
    let params = random_params(0);
    let count = |use_graph: bool| {
        let input = PerceptInput::from_observation(&Observation::empty(), 2);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let h = tape.constant(Tensor::zeros(1, HIDDEN_STATE_DIM));
        let j = joint_representation(&mut tape, &vars, &input, None, h, use_graph).unwrap();
        assert_eq!(tape.value(j).shape(), (1, JOINT_DIM));
        vars.all().len()
    };
    assert_eq!(count(true), count(false));
    assert_eq!(params.scalar_count(), params.tensors().iter().map(|t| t.len()).sum::<usize>());
}

#[test]
fn composed_model_gradient_matches_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let params = random_params(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let obs = random_observation(&mut rng, 5);
        let target = rng.gen_range(0..NUM_CATEGORIES);
        let input = PerceptInput::from_observation(&obs, target);
        let hidden = Tensor::uniform(1, HIDDEN_STATE_DIM, -0.5, 0.5, &mut rng);
        let action = rng.gen_range(0..NUM_ACTIONS);
        let ts: Vec<Tensor> = params.tensors().iter().map(|t| (*t).clone()).collect();
        let opts = GradCheckOptions { max_coords_per_param: Some(12), seed, ..GradCheckOptions::default() };
        let report = finite_difference_check(
            |tape, vars| composed_ce(tape, vars, &input, Some(Action::RotateLeft), &hidden, action),
            &ts,
            &opts,
        )
        .unwrap();
        worst = worst.max(report.max_rel_error);
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

fn random_input(seed: u64) -> PerceptInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = random_observation(&mut rng, 4);
    PerceptInput::from_observation(&obs, rng.gen_range(0..NUM_CATEGORIES))
}

#[test]
fn policy_is_a_pure_function_of_its_inputs() {
    let params = random_params(1);
    let input = random_input(1);
    let h = Tensor::zeros(1, HIDDEN_STATE_DIM);
    let a = infer(&params, &input, Some(Action::LookUp), &h, true).unwrap();
    let b = infer(&params, &input, Some(Action::LookUp), &h, true).unwrap();
    assert_eq!(a, b);
    let s: f64 = a.distribution.iter().sum();
    assert!((s - 1.0).abs() <= 1e-6);
}

#[test]
fn sampling_matches_the_distribution() {
    let p = [0.05, 0.3, 0.15, 0.2, 0.1, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    let mut counts = [0usize; NUM_ACTIONS];
    for _ in 0..n {
        counts[select_action(&p, SelectMode::Sample, &mut rng).index()] += 1;
    }
    for (c, &pi) in counts.iter().zip(&p) {
        assert!((*c as f64 / n as f64 - pi).abs() <= 0.01);
    }
}

#[test]
fn greedy_selection_breaks_ties_by_action_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let uniform = [1.0 / 6.0; NUM_ACTIONS];
    assert_eq!(select_action(&uniform, SelectMode::Greedy, &mut rng), Action::MoveAhead);
    let tie = [0.1, 0.1, 0.35, 0.35, 0.05, 0.05];
    assert_eq!(select_action(&tie, SelectMode::Greedy, &mut rng), Action::RotateRight);
    let one_hot = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for mode in [SelectMode::Sample, SelectMode::Greedy] {
        assert_eq!(select_action(&one_hot, mode, &mut rng), Action::MoveAhead);
    }
}

#[test]
fn three_step_returns_match_hand_unroll() {
    let (r, b, g) = ([-0.001, -0.001, 5.0], 0.7, 0.99);
    let expected = [
        r[0] + g * r[1] + g * g * r[2] + g * g * g * b,
        r[1] + g * r[2] + g * g * b,
        r[2] + g * b,
    ];
    let got = discounted_returns(&r, b, g);
    for (x, y) in got.iter().zip(expected) {
        assert!((x - y).abs() <= 1e-10);
    }
}

fn constant_step(tape: &mut Tape, probs: [f64; 6], value: f64, action: usize, reward: f64) -> StepRecord {
    StepRecord {
        probs: tape.constant(Tensor::row(probs.to_vec())),
        value: tape.constant(Tensor::scalar(value)),
        action,
        reward,
        expert: None,
    }
}

#[test]
fn terminal_step_with_exact_value_has_zero_actor_critic_loss() {
    let mut tape = Tape::new();
    let step = constant_step(&mut tape, [0.5, 0.1, 0.1, 0.1, 0.1, 0.1], 5.0, 0, 5.0);
    let buffer = TrajectoryBuffer { steps: vec![step], bootstrap: 0.0 };
    let cfg = LossConfig { entropy_beta: 0.0, ..LossConfig::default() };
    let l = a3c_loss(&mut tape, &buffer, &cfg).unwrap();
    assert_eq!(tape.scalar(l), 0.0);
}

#[test]
fn uniform_policy_entropy_term_is_minus_beta_ln6() {
    let mut tape = Tape::new();
    let u = 1.0 / 6.0;
    let step = constant_step(&mut tape, [u; 6], 5.0, 2, 5.0);
    let buffer = TrajectoryBuffer { steps: vec![step], bootstrap: 0.0 };
    let cfg = LossConfig::default();
    let l = a3c_loss(&mut tape, &buffer, &cfg).unwrap();
    assert!((tape.scalar(l) + cfg.entropy_beta * 6f64.ln()).abs() <= 1e-12);
}

#[test]
fn imitation_loss_values() {
    let mut tape = Tape::new();
    let exact = tape.constant(Tensor::row(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
    let uniform = tape.constant(Tensor::row(vec![1.0 / 6.0; 6]));
    let a = il_loss(&mut tape, exact, 3).unwrap();
    let b = il_loss(&mut tape, uniform, 0).unwrap();
    assert!(tape.scalar(a).abs() <= 1e-12);
    assert!((tape.scalar(b) - 6f64.ln()).abs() <= 1e-12);
    let x = tape.constant(Tensor::scalar(1.0));
    let y = tape.constant(Tensor::scalar(0.5));
    assert_eq!(total_loss(&mut tape, x, Some(y)).unwrap().1.total, 1.5);
    assert_eq!(total_loss(&mut tape, x, None).unwrap().1, LossBreakdown { nav: 1.0, il: 0.0, total: 1.0 });
}

#[test]
fn unsupervised_buffer_has_no_imitation_term() {
    let mut tape = Tape::new();
    let steps = (0..3).map(|i| constant_step(&mut tape, [1.0 / 6.0; 6], 0.0, i, -0.001)).collect();
    let buffer = TrajectoryBuffer { steps, bootstrap: 0.0 };
    assert!(buffer_il_loss(&mut tape, &buffer).unwrap().is_none());
}

/// Gradients of `loss(params)` for every nav tensor, two-step episode buffer.
fn buffer_grads(params: &NavParameters, which: &str) -> Vec<Tensor> {
    let inputs = [random_input(40), random_input(41)];
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let mut hidden = tape.constant(Tensor::zeros(1, HIDDEN_STATE_DIM));
    let mut steps = Vec::new();
    for (t, input) in inputs.iter().enumerate() {
        let j = joint_representation(&mut tape, &vars, input, None, hidden, true).unwrap();
        let out = policy_forward(&mut tape, &vars, j).unwrap();
        hidden = out.next_hidden;
        steps.push(StepRecord { probs: out.probs, value: out.value, action: t, reward: 0.3, expert: Some(4 - t) });
    }
    let buffer = TrajectoryBuffer { steps, bootstrap: 0.2 };
    let nav = a3c_loss(&mut tape, &buffer, &LossConfig::default()).unwrap();
    let il = buffer_il_loss(&mut tape, &buffer).unwrap().unwrap();
    let loss = match which {
        "nav" => nav,
        "il" => il,
        _ => total_loss(&mut tape, nav, Some(il)).unwrap().0,
    };
    tape.backward(loss).unwrap();
    tape.grads(vars.all()).unwrap()
}

#[test]
fn total_gradient_is_the_sum_of_component_gradients() {
    let params = random_params(2);
    let (nav, il, total) = (buffer_grads(&params, "nav"), buffer_grads(&params, "il"), buffer_grads(&params, "total"));
    for ((n, i), t) in nav.iter().zip(&il).zip(&total) {
        for ((a, b), c) in n.data().iter().zip(i.data()).zip(t.data()) {
            assert!((a + b - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }
}

fn sgd(params: &mut NavParameters, grads: &[Tensor], lr: f64) {
    for (p, g) in params.tensors_mut().into_iter().zip(grads) {
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
}

#[test]
fn positive_advantage_step_raises_chosen_action_probability() {
    for seed in 0..5 {
        let mut params = random_params(seed);
        let input = random_input(seed + 50);
        let h = Tensor::zeros(1, HIDDEN_STATE_DIM);
        let action = seed as usize % NUM_ACTIONS;
        let before = infer(&params, &input, None, &h, true).unwrap();
        let grads = {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let hv = tape.constant(h.clone());
            let j = joint_representation(&mut tape, &vars, &input, None, hv, true).unwrap();
            let out = policy_forward(&mut tape, &vars, j).unwrap();
            let reward = tape.scalar(out.value) + 1.0;
            let buffer = TrajectoryBuffer {
                steps: vec![StepRecord { probs: out.probs, value: out.value, action, reward, expert: None }],
                bootstrap: 0.0,
            };
            let cfg = LossConfig { entropy_beta: 0.0, value_coef: 0.0, ..LossConfig::default() };
            let l = a3c_loss(&mut tape, &buffer, &cfg).unwrap();
            tape.backward(l).unwrap();
            tape.grads(vars.all()).unwrap()
        };
        sgd(&mut params, &grads, 1e-3);
        let after = infer(&params, &input, None, &h, true).unwrap();
        assert!(after.distribution[action].ln() > before.distribution[action].ln());
    }
}

#[test]
fn repeated_imitation_steps_decrease_the_loss_monotonically() {
    let mut params = random_params(8);
    let input = random_input(8);
    let h = Tensor::zeros(1, HIDDEN_STATE_DIM);
    let mut last = f64::INFINITY;
    for _ in 0..40 {
        let (loss, grads) = {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let hv = tape.constant(h.clone());
            let j = joint_representation(&mut tape, &vars, &input, None, hv, true).unwrap();
            let out = policy_forward(&mut tape, &vars, j).unwrap();
            let l = il_loss(&mut tape, out.probs, 4).unwrap();
            tape.backward(l).unwrap();
            (tape.scalar(l), tape.grads(vars.all()).unwrap())
        };
        assert!(loss < last, "{loss} after {last}");
        last = loss;
        sgd(&mut params, &grads, 5e-3);
    }
}

fn random_feature(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect()
}

fn random_memory(rng: &mut ChaCha8Rng, slots: usize, dim: usize) -> InternalMemory {
    let mut ext = ExternalMemory::default();
    let mut int = InternalMemory::default();
    for _ in 0..slots {
        let mut a = [0.0; NUM_ACTIONS];
        a[rng.gen_range(0..NUM_ACTIONS)] = 1.0;
        let (f, next) = (random_feature(rng, dim), random_feature(rng, dim));
        record_step(&mut ext, &mut int, &f, a, &next);
    }
    int
}

#[test]
fn attention_matches_hand_rolled_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let dim = 12;
    let int = random_memory(&mut rng, 7, dim);
    let f = random_feature(&mut rng, dim);
    let out = memory_attention(&f, &int).unwrap();
    let scores: Vec<f64> = int.slots().iter().map(|s| s.key.iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let mut expected = vec![0.0; NUM_ACTIONS + dim];
    for (slot, s) in int.slots().iter().zip(&scores) {
        let w = s.exp() / z;
        let value: Vec<f64> = slot.action.iter().chain(&slot.next).copied().collect();
        for (e, v) in expected.iter_mut().zip(value) {
            *e += w * v;
        }
    }
    for (a, b) in out.embedded.iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn attention_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let one = random_memory(&mut rng, 1, 5);
    let f = random_feature(&mut rng, 5);
    let out = memory_attention(&f, &one).unwrap();
    assert_eq!(out.weights, vec![1.0]);
    assert_eq!(out.embedded, one.slots()[0].value());

    let (mut ext, mut int) = (ExternalMemory::default(), InternalMemory::default());
    let key = random_feature(&mut rng, 5);
    record_step(&mut ext, &mut int, &key, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &random_feature(&mut rng, 5));
    record_step(&mut ext, &mut int, &key, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0], &random_feature(&mut rng, 5));
    assert_eq!(memory_attention(&f, &int).unwrap().weights, vec![0.5, 0.5]);
    assert_eq!(memory_attention(&f, &InternalMemory::default()), Err(TpnError::EmptyMemory));
}

#[test]
fn record_step_keeps_memories_aligned() {
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    let (mut ext, mut int) = (ExternalMemory::default(), InternalMemory::default());
    for t in 1..=6 {
        let (f, next) = (random_feature(&mut rng, 4), random_feature(&mut rng, 4));
        record_step(&mut ext, &mut int, &f, [1.0 / 6.0; 6], &next);
        assert_eq!((ext.len(), int.len()), (t, t));
    }
    for (e, s) in ext.features().iter().zip(int.slots()) {
        assert_eq!(e, &s.key);
    }
    ext.clear();
    int.clear();
    assert!(ext.is_empty() && int.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_weights_form_a_distribution(seed in any::<u64>(), slots in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let int = random_memory(&mut rng, slots, 8);
        let f: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let w = memory_attention(&f, &int).unwrap().weights;
        prop_assert!(w.iter().all(|&p| p >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn zero_tolerance_deadlock_is_set_membership(seed in any::<u64>(), n in 0usize..12, probe in 0usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool: Vec<Vec<f64>> = (0..24).map(|_| random_feature(&mut rng, 3)).collect();
        let mut ext = ExternalMemory::default();
        for f in pool.iter().take(n) {
            ext.push(f.clone());
        }
        prop_assert_eq!(detect_deadlock(&ext, &pool[probe], &DeadlockConfig::default()), probe < n);
    }

    #[test]
    fn policy_distribution_is_valid(seed in any::<u64>(), graph in any::<bool>()) {
        let params = random_params(seed % 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_input(seed);
        let h = Tensor::uniform(1, HIDDEN_STATE_DIM, -1.0, 1.0, &mut rng);
        let d = infer(&params, &input, Action::from_index(rng.gen_range(0..6)), &h, graph).unwrap().distribution;
        prop_assert!(d.iter().all(|&p| p >= 0.0));
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn laf_target_flag_sums_to_one(seed in any::<u64>(), detected in 0usize..22) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = random_observation(&mut rng, detected);
        let target = rng.gen_range(0..NUM_CATEGORIES);
        let x = build_laf(&obs, target);
        prop_assert_eq!((0..NUM_CATEGORIES).map(|r| x.get(r, 5)).sum::<f64>(), 1.0);
        for r in 0..NUM_CATEGORIES {
            if !obs.detections[r].is_detected() {
                prop_assert!((0..5).all(|c| x.get(r, c) == 0.0));
            }
            prop_assert!((0..4).all(|c| (0.0..=1.0).contains(&x.get(r, c))));
        }
    }
}

fn tpn_inputs(seed: u64) -> (TpnParameters, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tpn = TpnParameters::init(&mut rng);
    let f = random_feature(&mut rng, FEATURE_DIM);
    let e = random_feature(&mut rng, VALUE_DIM);
    (tpn, f, e)
}

#[test]
fn tpn_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let (tpn, f, e) = tpn_inputs(seed);
        let ts: Vec<Tensor> = tpn.tensors().iter().map(|t| (*t).clone()).collect();
        let opts = GradCheckOptions { max_coords_per_param: Some(40), seed, ..GradCheckOptions::default() };
        let report = finite_difference_check(
            |tape, vars| {
                let arr: [Var; 4] = vars.try_into().expect("four tensors");
                let p = tpn_forward(tape, &arr, &f, &e).map_err(|err| match err {
                    TpnError::Diff(d) => d,
                    other => panic!("{other}"),
                })?;
                tape.cross_entropy(p, (seed % 6) as usize)
            },
            &ts,
            &opts,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}

#[test]
fn tpn_output_is_a_pure_distribution() {
    let (tpn, f, e) = tpn_inputs(3);
    let a = tpn_distribution(&tpn, &f, &e).unwrap();
    assert_eq!(a, tpn_distribution(&tpn, &f, &e).unwrap());
    assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    assert!(matches!(tpn_distribution(&tpn, &f[..10], &e), Err(TpnError::Dimension { .. })));
}

#[test]
fn tpn_cross_entropy_falls_on_a_fixed_deadlock_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tpn = TpnParameters::init(&mut rng);
    let samples: Vec<DeadlockSample> = (0..16)
        .map(|i| DeadlockSample {
            feature: random_feature(&mut rng, FEATURE_DIM),
            embedded: random_feature(&mut rng, VALUE_DIM),
            expert: i % NUM_ACTIONS,
        })
        .collect();
    let mean = |t: &TpnParameters| samples.iter().map(|s| tpn_loss(t, s).unwrap()).sum::<f64>() / 16.0;
    let start = mean(&tpn);
    let mut adam = AdamState::new(1e-3);
    for _ in 0..100 {
        for s in &samples {
            tpn_update(&mut tpn, &mut adam, s).unwrap();
        }
    }
    assert!(mean(&tpn) < start);
}

#[test]
fn adaptation_raises_guidance_log_probability() {
    for seed in 0..5 {
        let mut nav = random_params(seed);
        let input = random_input(seed + 70);
        let ctx = RecurrentState::default();
        let guidance = Action::from_index(seed as usize % NUM_ACTIONS).unwrap();
        let before = infer(&nav, &input, None, &ctx.hidden, true).unwrap().distribution[guidance.index()];
        let mut adam = AdamState::new(1e-4);
        let loss = test_time_adapt(&mut nav, &mut adam, &input, &ctx, true, guidance).unwrap();
        let after = infer(&nav, &input, None, &ctx.hidden, true).unwrap().distribution[guidance.index()];
        assert!((loss + before.ln()).abs() <= 1e-12);
        assert!(after.ln() > before.ln());
    }
}

#[test]
fn adaptation_toward_a_certain_action_leaves_parameters_unchanged() {
    let mut nav = random_params(0);
    nav.policy_w = Tensor::zeros(HIDDEN_STATE_DIM, NUM_ACTIONS);
    nav.policy_b = Tensor::row(vec![0.0, 0.0, 800.0, 0.0, 0.0, 0.0]);
    let before = nav.clone();
    let input = random_input(1);
    let mut adam = AdamState::new(1e-4);
    let loss = test_time_adapt(&mut nav, &mut adam, &input, &RecurrentState::default(), true, Action::RotateRight).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(nav, before);
}
