//! Recurrent actor-critic navigation network and its losses.
//!
//! The joint input is `[global | local | previous action | hidden]`. Two dense
//! ReLU layers feed a tanh recurrent cell whose output is the next hidden
//! state; policy (softmax) and value (linear) heads read that hidden state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Axis, DiffError, Tape, Tensor, Var};
use crate::gridworld::{Action, Observation, GLOBAL_DIM, NUM_ACTIONS};
use crate::orggraph::{appearance_matrix, build_laf, local_feature, OrgParameters, LOCAL_DIM};

pub const HIDDEN_STATE_DIM: usize = 64;
pub const DENSE_DIM: usize = 128;
pub const JOINT_DIM: usize = GLOBAL_DIM + LOCAL_DIM + NUM_ACTIONS + HIDDEN_STATE_DIM;
/// Number of tensors in [`NavParameters::tensors`].
pub const NAV_TENSOR_COUNT: usize = 12;

pub const NAV_TENSOR_NAMES: [&str; NAV_TENSOR_COUNT] = [
    "org.adjacency",
    "org.embedding",
    "dense1.weight",
    "dense1.bias",
    "dense2.weight",
    "dense2.bias",
    "recurrent.weight",
    "recurrent.bias",
    "policy.weight",
    "policy.bias",
    "value.weight",
    "value.bias",
];

/// Every trainable tensor of the navigation model, graph included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavParameters {
    pub org: OrgParameters,
    pub dense1_w: Tensor,
    pub dense1_b: Tensor,
    pub dense2_w: Tensor,
    pub dense2_b: Tensor,
    pub recurrent_w: Tensor,
    pub recurrent_b: Tensor,
    pub policy_w: Tensor,
    pub policy_b: Tensor,
    pub value_w: Tensor,
    pub value_b: Tensor,
}

fn dense_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Tensor {
    let k = gain / (fan_in as f64).sqrt();
    Tensor::uniform(fan_in, fan_out, -k, k, rng)
}

impl NavParameters {
    /// Dense weights `U(-g/sqrt(fan_in), g/sqrt(fan_in))`, zero biases; the
    /// policy head starts near-uniform.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let org = OrgParameters::init(rng);
        Self {
            org,
            dense1_w: dense_init(JOINT_DIM, DENSE_DIM, 3f64.sqrt(), rng),
            dense1_b: Tensor::zeros(1, DENSE_DIM),
            dense2_w: dense_init(DENSE_DIM, DENSE_DIM, 3f64.sqrt(), rng),
            dense2_b: Tensor::zeros(1, DENSE_DIM),
            recurrent_w: dense_init(DENSE_DIM, HIDDEN_STATE_DIM, 1.0, rng),
            recurrent_b: Tensor::zeros(1, HIDDEN_STATE_DIM),
            policy_w: dense_init(HIDDEN_STATE_DIM, NUM_ACTIONS, 0.1, rng),
            policy_b: Tensor::zeros(1, NUM_ACTIONS),
            value_w: dense_init(HIDDEN_STATE_DIM, 1, 1.0, rng),
            value_b: Tensor::zeros(1, 1),
        }
    }

    pub fn tensors(&self) -> [&Tensor; NAV_TENSOR_COUNT] {
        [
            &self.org.adjacency,
            &self.org.embedding,
            &self.dense1_w,
            &self.dense1_b,
            &self.dense2_w,
            &self.dense2_b,
            &self.recurrent_w,
            &self.recurrent_b,
            &self.policy_w,
            &self.policy_b,
            &self.value_w,
            &self.value_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; NAV_TENSOR_COUNT] {
        [
            &mut self.org.adjacency,
            &mut self.org.embedding,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
            &mut self.recurrent_w,
            &mut self.recurrent_b,
            &mut self.policy_w,
            &mut self.policy_b,
            &mut self.value_w,
            &mut self.value_b,
        ]
    }

    /// Rebuilds parameters from tensors in [`NAV_TENSOR_NAMES`] order.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self, DiffError> {
        let reference = Self::zeros();
        if tensors.len() != NAV_TENSOR_COUNT {
            return Err(DiffError::ParamCount { expected: NAV_TENSOR_COUNT, got: tensors.len() });
        }
        for (t, r) in tensors.iter().zip(reference.tensors()) {
            if t.shape() != r.shape() {
                return Err(DiffError::Shape { op: "nav parameters", left: t.shape(), right: r.shape() });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        Ok(Self {
            org: OrgParameters { adjacency: next(), embedding: next() },
            dense1_w: next(),
            dense1_b: next(),
            dense2_w: next(),
            dense2_b: next(),
            recurrent_w: next(),
            recurrent_b: next(),
            policy_w: next(),
            policy_b: next(),
            value_w: next(),
            value_b: next(),
        })
    }

    fn zeros() -> Self {
        let z = Tensor::zeros;
        Self {
            org: OrgParameters { adjacency: z(22, 22), embedding: z(6, 22) },
            dense1_w: z(JOINT_DIM, DENSE_DIM),
            dense1_b: z(1, DENSE_DIM),
            dense2_w: z(DENSE_DIM, DENSE_DIM),
            dense2_b: z(1, DENSE_DIM),
            recurrent_w: z(DENSE_DIM, HIDDEN_STATE_DIM),
            recurrent_b: z(1, HIDDEN_STATE_DIM),
            policy_w: z(HIDDEN_STATE_DIM, NUM_ACTIONS),
            policy_b: z(1, NUM_ACTIONS),
            value_w: z(HIDDEN_STATE_DIM, 1),
            value_b: z(1, 1),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Registers every tensor on `tape`, trainable or frozen.
    pub fn register<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> NavVars {
        let ts = self.tensors();
        let mut vars = [Var::default(); NAV_TENSOR_COUNT];
        for (v, t) in vars.iter_mut().zip(ts) {
            *v = if trainable { tape.param(t) } else { tape.frozen(t) };
        }
        NavVars(vars)
    }
}

/// Tape handles of the navigation tensors, in [`NAV_TENSOR_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct NavVars(pub [Var; NAV_TENSOR_COUNT]);

impl NavVars {
    pub fn all(&self) -> &[Var] {
        &self.0
    }

    fn graph(&self) -> (Var, Var) {
        (self.0[0], self.0[1])
    }
}

/// Per-step perception inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptInput {
    pub laf: Tensor,
    pub appearance: Tensor,
    pub global: Tensor,
}

impl PerceptInput {
    pub fn from_observation(observation: &Observation, target: usize) -> Self {
        Self {
            laf: build_laf(observation, target),
            appearance: appearance_matrix(observation),
            global: Tensor::row(observation.global.to_vec()),
        }
    }
}

pub fn action_one_hot(action: Option<Action>) -> Tensor {
    let mut t = Tensor::zeros(1, NUM_ACTIONS);
    if let Some(a) = action {
        t.set(0, a.index(), 1.0);
    }
    t
}

/// Joint representation row, `1 x JOINT_DIM`. Without the graph the local
/// block is the raw appearance next to the detections.
pub fn joint_representation(
    tape: &mut Tape,
    vars: &NavVars,
    input: &PerceptInput,
    prev_action: Option<Action>,
    hidden: Var,
    use_graph: bool,
) -> Result<Var, DiffError> {
    let laf = tape.constant(input.laf.clone());
    let appearance = tape.constant(input.appearance.clone());
    let local = local_feature(tape, laf, appearance, use_graph.then(|| vars.graph()))?;
    let global = tape.constant(input.global.clone());
    let prev = tape.constant(action_one_hot(prev_action));
    tape.concat(&[global, local, prev, hidden], Axis::Cols)
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    pub probs: Var,
    pub value: Var,
    pub next_hidden: Var,
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

pub fn policy_forward(tape: &mut Tape, vars: &NavVars, joint: Var) -> Result<PolicyVars, DiffError> {
    let v = &vars.0;
    let got = tape.value(joint).shape();
    if got != (1, JOINT_DIM) {
        return Err(DiffError::Shape { op: "policy input", left: got, right: (1, JOINT_DIM) });
    }
    let h1 = dense(tape, joint, v[2], v[3])?;
    let h1 = tape.relu(h1);
    let h2 = dense(tape, h1, v[4], v[5])?;
    let h2 = tape.relu(h2);
    let rec = dense(tape, h2, v[6], v[7])?;
    let next_hidden = tape.tanh(rec);
    let logits = dense(tape, next_hidden, v[8], v[9])?;
    let probs = tape.softmax(logits, Axis::Cols)?;
    let value = dense(tape, next_hidden, v[10], v[11])?;
    for (out, name) in [(probs, "policy"), (value, "value"), (next_hidden, "hidden state")] {
        if !tape.value(out).is_finite() {
            return Err(DiffError::NonFiniteValue(name));
        }
    }
    Ok(PolicyVars { probs, value, next_hidden })
}

/// Plain-valued policy output.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub distribution: [f64; NUM_ACTIONS],
    pub value: f64,
    pub next_hidden: Tensor,
}

impl PolicyOutput {
    pub fn read(tape: &Tape, out: &PolicyVars) -> Self {
        let mut distribution = [0.0; NUM_ACTIONS];
        distribution.copy_from_slice(tape.value(out.probs).data());
        Self {
            distribution,
            value: tape.scalar(out.value),
            next_hidden: tape.value(out.next_hidden).clone(),
        }
    }
}

/// Untaped single forward pass with frozen parameters.
pub fn infer(
    params: &NavParameters,
    input: &PerceptInput,
    prev_action: Option<Action>,
    hidden: &Tensor,
    use_graph: bool,
) -> Result<PolicyOutput, DiffError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let h = tape.constant(hidden.clone());
    let joint = joint_representation(&mut tape, &vars, input, prev_action, h, use_graph)?;
    let out = policy_forward(&mut tape, &vars, joint)?;
    Ok(PolicyOutput::read(&tape, &out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Sample from the distribution.
    Sample,
    /// Highest probability, ties broken by action order.
    Greedy,
}

pub fn select_action<R: Rng + ?Sized>(dist: &[f64; NUM_ACTIONS], mode: SelectMode, rng: &mut R) -> Action {
    let index = match mode {
        SelectMode::Greedy => argmax(dist),
        SelectMode::Sample => {
            let u: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just below 1: fall back to the last
            // action with non-zero mass.
            pick.unwrap_or_else(|| dist.iter().rposition(|&p| p > 0.0).unwrap_or(0))
        }
    };
    Action::from_index(index).expect("index below NUM_ACTIONS")
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Actor-critic hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub entropy_beta: f64,
    pub value_coef: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 0.99, entropy_beta: 0.01, value_coef: 0.5 }
    }
}

/// One recorded step of an unroll, with tape handles to its outputs.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub probs: Var,
    pub value: Var,
    pub action: usize,
    pub reward: f64,
    /// Expert action when the step receives imitation supervision.
    pub expert: Option<usize>,
}

/// Contiguous steps of one episode segment.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryBuffer {
    pub steps: Vec<StepRecord>,
    /// Value estimate after the last step; zero for a terminal segment.
    pub bootstrap: f64,
}

impl TrajectoryBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// `R_t = r_t + gamma * R_{t+1}`, seeded with `bootstrap`.
pub fn discounted_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// `sum_t [ -ln pi(a_t) * adv_t + c_v (R_t - V_t)^2 - beta H(pi_t) ]`, with the
/// advantage held constant.
pub fn a3c_loss(tape: &mut Tape, buffer: &TrajectoryBuffer, cfg: &LossConfig) -> Result<Var, DiffError> {
    if buffer.is_empty() {
        return Err(DiffError::Empty("trajectory buffer"));
    }
    let returns = discounted_returns(&buffer.rewards(), buffer.bootstrap, cfg.gamma);
    let mut terms = Vec::with_capacity(buffer.len());
    for (step, &ret) in buffer.steps.iter().zip(&returns) {
        let advantage = ret - tape.scalar(step.value);
        let nll = tape.cross_entropy(step.probs, step.action)?;
        let policy = tape.scale(nll, advantage);
        let err = tape.add_scalar(step.value, -ret);
        let sq = tape.square(err);
        let value = tape.scale(sq, cfg.value_coef);
        let ent = entropy(tape, step.probs)?;
        let ent = tape.scale(ent, -cfg.entropy_beta);
        terms.push(tape.add_all(&[policy, value, ent])?);
    }
    tape.add_all(&terms)
}

/// `-sum p ln p` with the logarithm clamped.
pub fn entropy(tape: &mut Tape, probs: Var) -> Result<Var, DiffError> {
    let lp = tape.ln(probs);
    let plp = tape.mul(probs, lp)?;
    let s = tape.sum(plp);
    Ok(tape.scale(s, -1.0))
}

/// Cross-entropy against the expert action.
pub fn il_loss(tape: &mut Tape, probs: Var, expert: usize) -> Result<Var, DiffError> {
    tape.cross_entropy(probs, expert)
}

/// Imitation loss over the supervised steps of a buffer; `None` if no step is
/// supervised.
pub fn buffer_il_loss(tape: &mut Tape, buffer: &TrajectoryBuffer) -> Result<Option<Var>, DiffError> {
    let mut terms = Vec::new();
    for step in &buffer.steps {
        if let Some(e) = step.expert {
            terms.push(il_loss(tape, step.probs, e)?);
        }
    }
    if terms.is_empty() {
        return Ok(None);
    }
    tape.add_all(&terms).map(Some)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nav: f64,
    pub il: f64,
    pub total: f64,
}

/// Unweighted sum of the two losses. `il = None` contributes exactly zero.
pub fn total_loss(tape: &mut Tape, nav: Var, il: Option<Var>) -> Result<(Var, LossBreakdown), DiffError> {
    let nav_value = tape.scalar(nav);
    match il {
        None => Ok((nav, LossBreakdown { nav: nav_value, il: 0.0, total: nav_value })),
        Some(il) => {
            let total = tape.add(nav, il)?;
            Ok((
                total,
                LossBreakdown { nav: nav_value, il: tape.scalar(il), total: tape.scalar(total) },
            ))
        }
    }
}
