//! Tentative policy network: episode memories, deadlock detection, attention
//! over past transitions, and test-time guidance of the navigation network.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{adam_step, AdamState, Axis, DiffError, Tape, Tensor, Var};
use crate::gridworld::{
    expert_action, render_observation, Action, Episode, World, WorldError, APPEARANCE_DIM, GLOBAL_DIM, NUM_ACTIONS,
    NUM_CATEGORIES,
};
use crate::navpolicy::{
    argmax, infer, joint_representation, policy_forward, select_action, NavParameters, PerceptInput, SelectMode,
    NAV_TENSOR_COUNT,
};
use crate::orggraph::{LAF_DIM, LOCAL_DIM};

/// Length of the memory feature: `[global | laf | appearance]`.
pub const FEATURE_DIM: usize = GLOBAL_DIM + LOCAL_DIM;
/// Length of a memory value: `[action distribution | next feature]`.
pub const VALUE_DIM: usize = NUM_ACTIONS + FEATURE_DIM;
pub const TPN_INPUT_DIM: usize = FEATURE_DIM + VALUE_DIM;
pub const TPN_HIDDEN_DIM: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpnError {
    #[error("memory attention on an empty internal memory")]
    EmptyMemory,
    #[error("feature length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Parameter-free observation encoding used as the memory key. Identical
/// observations give bit-identical features.
pub fn visual_feature(input: &PerceptInput) -> Vec<f64> {
    let mut f = Vec::with_capacity(FEATURE_DIM);
    f.extend_from_slice(input.global.data());
    f.extend_from_slice(input.laf.data());
    f.extend_from_slice(input.appearance.data());
    debug_assert_eq!(f.len(), GLOBAL_DIM + NUM_CATEGORIES * (LAF_DIM + APPEARANCE_DIM));
    f
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadlockConfig {
    /// Max-norm distance under which two features count as the same.
    pub tolerance: f64,
    /// Matching earlier features required.
    pub min_revisits: usize,
}

impl Default for DeadlockConfig {
    fn default() -> Self {
        Self { tolerance: 0.0, min_revisits: 1 }
    }
}

/// Features seen so far this episode, in step order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExternalMemory {
    features: Vec<Vec<f64>>,
}

impl ExternalMemory {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn push(&mut self, f: Vec<f64>) {
        self.features.push(f);
    }

    pub fn clear(&mut self) {
        self.features.clear();
    }

    /// Number of recorded features within `tolerance` of `f` in max norm.
    pub fn matches(&self, f: &[f64], tolerance: f64) -> usize {
        self.features
            .iter()
            .filter(|g| g.len() == f.len() && g.iter().zip(f).all(|(a, b)| (a - b).abs() <= tolerance))
            .count()
    }
}

pub fn detect_deadlock(memory: &ExternalMemory, f: &[f64], cfg: &DeadlockConfig) -> bool {
    cfg.min_revisits > 0 && memory.matches(f, cfg.tolerance) >= cfg.min_revisits
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemorySlot {
    pub key: Vec<f64>,
    pub action: [f64; NUM_ACTIONS],
    pub next: Vec<f64>,
}

impl MemorySlot {
    pub fn value(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_ACTIONS + self.next.len());
        v.extend_from_slice(&self.action);
        v.extend_from_slice(&self.next);
        v
    }
}

/// Transitions of this episode, in step order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InternalMemory {
    slots: Vec<MemorySlot>,
}

impl InternalMemory {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[MemorySlot] {
        &self.slots
    }

    pub fn clear(&mut self) {
        self.slots.clear();
    }
}

/// Appends `f_t` to the external memory and `(f_t; a_t, f_next)` to the
/// internal one.
pub fn record_step(
    external: &mut ExternalMemory,
    internal: &mut InternalMemory,
    f_t: &[f64],
    action: [f64; NUM_ACTIONS],
    f_next: &[f64],
) {
    external.push(f_t.to_vec());
    internal.slots.push(MemorySlot { key: f_t.to_vec(), action, next: f_next.to_vec() });
}

/// Attention weights and the weighted sum of slot values.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub weights: Vec<f64>,
    pub embedded: Vec<f64>,
}

/// `p = softmax_i <f, key_i>`, output `sum_i p_i value_i`.
pub fn memory_attention(f: &[f64], internal: &InternalMemory) -> Result<AttentionOutput, TpnError> {
    let slots = internal.slots();
    if slots.is_empty() {
        return Err(TpnError::EmptyMemory);
    }
    let scores: Vec<f64> = slots
        .iter()
        .map(|s| {
            if s.key.len() != f.len() {
                return Err(TpnError::Dimension { expected: f.len(), got: s.key.len() });
            }
            Ok(s.key.iter().zip(f).map(|(a, b)| a * b).sum())
        })
        .collect::<Result<_, _>>()?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let dim = NUM_ACTIONS + slots[0].next.len();
    let mut embedded = vec![0.0; dim];
    for (slot, &w) in slots.iter().zip(&weights) {
        for (e, v) in embedded.iter_mut().zip(slot.value()) {
            *e += w * v;
        }
    }
    Ok(AttentionOutput { weights, embedded })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpnParameters {
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

pub const TPN_TENSOR_NAMES: [&str; 4] = ["tpn.hidden.weight", "tpn.hidden.bias", "tpn.head.weight", "tpn.head.bias"];

impl TpnParameters {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let k1 = 3f64.sqrt() / (TPN_INPUT_DIM as f64).sqrt();
        let k2 = 0.1 / (TPN_HIDDEN_DIM as f64).sqrt();
        Self {
            hidden_w: Tensor::uniform(TPN_INPUT_DIM, TPN_HIDDEN_DIM, -k1, k1, rng),
            hidden_b: Tensor::zeros(1, TPN_HIDDEN_DIM),
            head_w: Tensor::uniform(TPN_HIDDEN_DIM, NUM_ACTIONS, -k2, k2, rng),
            head_b: Tensor::zeros(1, NUM_ACTIONS),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.hidden_w, &self.hidden_b, &self.head_w, &self.head_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.hidden_w, &mut self.hidden_b, &mut self.head_w, &mut self.head_b]
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self, DiffError> {
        let shapes = [
            (TPN_INPUT_DIM, TPN_HIDDEN_DIM),
            (1, TPN_HIDDEN_DIM),
            (TPN_HIDDEN_DIM, NUM_ACTIONS),
            (1, NUM_ACTIONS),
        ];
        if tensors.len() != shapes.len() {
            return Err(DiffError::ParamCount { expected: shapes.len(), got: tensors.len() });
        }
        for (t, &s) in tensors.iter().zip(&shapes) {
            if t.shape() != s {
                return Err(DiffError::Shape { op: "tpn parameters", left: t.shape(), right: s });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        Ok(Self { hidden_w: next(), hidden_b: next(), head_w: next(), head_b: next() })
    }

    pub fn register<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> [Var; 4] {
        self.tensors().map(|t| if trainable { tape.param(t) } else { tape.frozen(t) })
    }
}

/// `softmax(relu([f | embedded] W1 + b1) W2 + b2)`.
pub fn tpn_forward(tape: &mut Tape, vars: &[Var; 4], f: &[f64], embedded: &[f64]) -> Result<Var, TpnError> {
    if f.len() + embedded.len() != TPN_INPUT_DIM {
        return Err(TpnError::Dimension { expected: TPN_INPUT_DIM, got: f.len() + embedded.len() });
    }
    let fv = tape.constant(Tensor::row(f.to_vec()));
    let ev = tape.constant(Tensor::row(embedded.to_vec()));
    let x = tape.concat(&[fv, ev], Axis::Cols)?;
    let h = tape.matmul(x, vars[0])?;
    let h = tape.add(h, vars[1])?;
    let h = tape.relu(h);
    let logits = tape.matmul(h, vars[2])?;
    let logits = tape.add(logits, vars[3])?;
    Ok(tape.softmax(logits, Axis::Cols)?)
}

pub fn tpn_distribution(params: &TpnParameters, f: &[f64], embedded: &[f64]) -> Result<[f64; NUM_ACTIONS], TpnError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let p = tpn_forward(&mut tape, &vars, f, embedded)?;
    let mut out = [0.0; NUM_ACTIONS];
    out.copy_from_slice(tape.value(p).data());
    Ok(out)
}

/// Guidance action: the TPN's most probable action.
pub fn tpn_action(params: &TpnParameters, f: &[f64], internal: &InternalMemory) -> Result<Action, TpnError> {
    let att = memory_attention(f, internal)?;
    let dist = tpn_distribution(params, f, &att.embedded)?;
    Ok(Action::from_index(argmax(&dist)).expect("index below NUM_ACTIONS"))
}

/// One supervised example: a deadlock state with its attended memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DeadlockSample {
    pub feature: Vec<f64>,
    pub embedded: Vec<f64>,
    pub expert: usize,
}

/// Cross-entropy of the TPN against the expert on one sample, without update.
pub fn tpn_loss(params: &TpnParameters, sample: &DeadlockSample) -> Result<f64, TpnError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let p = tpn_forward(&mut tape, &vars, &sample.feature, &sample.embedded)?;
    let ce = tape.cross_entropy(p, sample.expert)?;
    Ok(tape.scalar(ce))
}

/// One Adam step of the TPN on a single sample; returns the pre-update loss.
pub fn tpn_update(params: &mut TpnParameters, adam: &mut AdamState, sample: &DeadlockSample) -> Result<f64, TpnError> {
    let (loss, grads) = {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let p = tpn_forward(&mut tape, &vars, &sample.feature, &sample.embedded)?;
        let ce = tape.cross_entropy(p, sample.expert)?;
        tape.backward(ce)?;
        (tape.scalar(ce), tape.grads(&vars)?)
    };
    let mut ts = params.tensors_mut();
    adam_step(&mut ts, &grads, adam)?;
    Ok(loss)
}

/// Recurrent context of the navigation network between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub hidden: Tensor,
    pub prev_action: Option<Action>,
}

impl Default for RecurrentState {
    fn default() -> Self {
        Self { hidden: Tensor::zeros(1, crate::navpolicy::HIDDEN_STATE_DIM), prev_action: None }
    }
}

/// One step of gradient descent on `CE(nav(input), guidance)` over every
/// navigation tensor. Returns the loss before the update.
pub fn test_time_adapt(
    nav: &mut NavParameters,
    adam: &mut AdamState,
    input: &PerceptInput,
    context: &RecurrentState,
    use_graph: bool,
    guidance: Action,
) -> Result<f64, TpnError> {
    let (loss, grads) = {
        let mut tape = Tape::new();
        let vars = nav.register(&mut tape, true);
        let h = tape.constant(context.hidden.clone());
        let joint = joint_representation(&mut tape, &vars, input, context.prev_action, h, use_graph)?;
        let out = policy_forward(&mut tape, &vars, joint)?;
        let ce = tape.cross_entropy(out.probs, guidance.index())?;
        tape.backward(ce)?;
        (tape.scalar(ce), tape.grads(vars.all())?)
    };
    let mut ts = nav.tensors_mut();
    debug_assert_eq!(ts.len(), NAV_TENSOR_COUNT);
    adam_step(&mut ts, &grads, adam)?;
    Ok(loss)
}

/// Settings for collecting TPN supervision from a frozen navigator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpnRolloutConfig {
    pub use_graph: bool,
    pub select: SelectMode,
    pub deadlock: DeadlockConfig,
}

impl Default for TpnRolloutConfig {
    fn default() -> Self {
        Self { use_graph: true, select: SelectMode::Greedy, deadlock: DeadlockConfig::default() }
    }
}

/// Outcome of one TPN training episode. `updates == 0` marks an episode that
/// produced no gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TpnEpisodeReport {
    pub updates: usize,
    pub loss_sum: f64,
    pub steps: usize,
}

impl TpnEpisodeReport {
    pub fn mean_loss(&self) -> Option<f64> {
        (self.updates > 0).then(|| self.loss_sum / self.updates as f64)
    }
}

/// Samples produced by rolling the frozen navigator through one episode; at
/// each deadlock step `visit` receives the sample and may update the TPN.
pub fn roll_frozen_nav<R: Rng + ?Sized>(
    nav: &NavParameters,
    world: &World,
    episode_seed: u64,
    cfg: &TpnRolloutConfig,
    rng: &mut R,
    mut visit: impl FnMut(&DeadlockSample) -> Result<(), TpnError>,
) -> Result<usize, TpnError> {
    let mut ep = Episode::from_seed(world, episode_seed)?;
    let target = ep.target();
    let mut ext = ExternalMemory::default();
    let mut int = InternalMemory::default();
    let mut ctx = RecurrentState::default();
    let mut input = PerceptInput::from_observation(&render_observation(world, &ep.state(), target, episode_seed), target);
    let mut f = visual_feature(&input);
    while !ep.is_done() {
        if detect_deadlock(&ext, &f, &cfg.deadlock) {
            let att = memory_attention(&f, &int)?;
            let expert = expert_action(world, &ep.state(), target)?;
            visit(&DeadlockSample { feature: f.clone(), embedded: att.embedded, expert: expert.index() })?;
        }
        let out = infer(nav, &input, ctx.prev_action, &ctx.hidden, cfg.use_graph)?;
        let action = select_action(&out.distribution, cfg.select, rng);
        let step = ep.step(action)?;
        let next_input = PerceptInput::from_observation(&render_observation(world, &step.state, target, episode_seed), target);
        let f_next = visual_feature(&next_input);
        record_step(&mut ext, &mut int, &f, out.distribution, &f_next);
        ctx = RecurrentState { hidden: out.next_hidden, prev_action: Some(action) };
        input = next_input;
        f = f_next;
    }
    Ok(ep.steps())
}

/// Rolls the frozen navigator and applies one TPN update per deadlock step.
pub fn train_tpn_step<R: Rng + ?Sized>(
    nav: &NavParameters,
    world: &World,
    episode_seed: u64,
    tpn: &mut TpnParameters,
    adam: &mut AdamState,
    cfg: &TpnRolloutConfig,
    rng: &mut R,
) -> Result<TpnEpisodeReport, TpnError> {
    let mut report = TpnEpisodeReport::default();
    report.steps = roll_frozen_nav(nav, world, episode_seed, cfg, rng, |sample| {
        report.loss_sum += tpn_update(tpn, adam, sample)?;
        report.updates += 1;
        Ok(())
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(v: f64) -> Vec<f64> {
        vec![v; 4]
    }

    #[test]
    fn empty_memory_never_deadlocks() {
        let ext = ExternalMemory::default();
        assert!(!detect_deadlock(&ext, &feature(1.0), &DeadlockConfig::default()));
    }

    #[test]
    fn exact_repeat_is_a_deadlock() {
        let mut ext = ExternalMemory::default();
        for i in 0..5 {
            ext.push(feature(i as f64));
        }
        let cfg = DeadlockConfig::default();
        assert!(detect_deadlock(&ext, &feature(3.0), &cfg));
        assert!(!detect_deadlock(&ext, &feature(3.5), &cfg));
        assert!(detect_deadlock(&ext, &feature(3.4), &DeadlockConfig { tolerance: 0.5, min_revisits: 1 }));
        assert!(!detect_deadlock(&ext, &feature(3.0), &DeadlockConfig { tolerance: 0.0, min_revisits: 2 }));
    }

    #[test]
    fn record_step_keeps_order_and_counts() {
        let mut ext = ExternalMemory::default();
        let mut int = InternalMemory::default();
        for t in 0..7 {
            record_step(&mut ext, &mut int, &feature(t as f64), [0.0; 6], &feature(t as f64 + 1.0));
        }
        assert_eq!((ext.len(), int.len()), (7, 7));
        for (i, slot) in int.slots().iter().enumerate() {
            assert_eq!(slot.key, ext.features()[i]);
        }
        ext.clear();
        int.clear();
        assert_eq!((ext.len(), int.len()), (0, 0));
    }

    #[test]
    fn attention_single_and_symmetric_slots() {
        let mut ext = ExternalMemory::default();
        let mut int = InternalMemory::default();
        assert_eq!(memory_attention(&feature(1.0), &int), Err(TpnError::EmptyMemory));
        let a = [0.1, 0.2, 0.3, 0.1, 0.2, 0.1];
        record_step(&mut ext, &mut int, &feature(0.5), a, &feature(2.0));
        let out = memory_attention(&feature(1.0), &int).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        assert_eq!(out.embedded, int.slots()[0].value());
        record_step(&mut ext, &mut int, &feature(0.5), [0.0; 6], &feature(0.0));
        let out = memory_attention(&feature(1.0), &int).unwrap();
        assert_eq!(out.weights, vec![0.5, 0.5]);
    }
}
