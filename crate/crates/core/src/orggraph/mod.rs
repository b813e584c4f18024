//! Object relation graph over the detector categories.
//!
//! Node features are location-aware detections (box, confidence, target
//! flag). A learned adjacency and node embedding produce a category relation
//! matrix, which then re-weights per-category appearance features through a
//! parameter-free attention product.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Axis, DiffError, Tape, Tensor, Var};
use crate::gridworld::{Observation, APPEARANCE_DIM, NUM_CATEGORIES};

/// Columns per node: `x1, y1, x2, y2, confidence, is_target`.
pub const LAF_DIM: usize = 6;
/// Length of the fused local feature: one `[appearance | laf]` row per category.
pub const LOCAL_DIM: usize = NUM_CATEGORIES * (APPEARANCE_DIM + LAF_DIM);

/// Location-aware feature matrix, `NUM_CATEGORIES x LAF_DIM`.
///
/// Panics if `target >= NUM_CATEGORIES`.
pub fn build_laf(observation: &Observation, target: usize) -> Tensor {
    assert!(target < NUM_CATEGORIES, "target category {target} out of range");
    let mut x = Tensor::zeros(NUM_CATEGORIES, LAF_DIM);
    for (i, d) in observation.detections.iter().enumerate() {
        if d.is_detected() {
            for (j, &b) in d.bbox.iter().enumerate() {
                x.set(i, j, b);
            }
            x.set(i, 4, d.confidence);
        }
    }
    x.set(target, 5, 1.0);
    x
}

/// Appearance matrix, `NUM_CATEGORIES x APPEARANCE_DIM`; undetected rows are zero.
pub fn appearance_matrix(observation: &Observation) -> Tensor {
    let data = observation.appearance.iter().flatten().copied().collect();
    Tensor::new(NUM_CATEGORIES, APPEARANCE_DIM, data).expect("fixed shape")
}

/// Learned adjacency (`n x n`) and node embedding (`LAF_DIM x n`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrgParameters {
    pub adjacency: Tensor,
    pub embedding: Tensor,
}

impl OrgParameters {
    /// Adjacency `I + U(-0.01, 0.01)`, embedding `U(-k, k)` with `k = 1/sqrt(LAF_DIM)`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut adjacency = Tensor::uniform(NUM_CATEGORIES, NUM_CATEGORIES, -0.01, 0.01, rng);
        for i in 0..NUM_CATEGORIES {
            adjacency.set(i, i, adjacency.get(i, i) + 1.0);
        }
        let k = 1.0 / (LAF_DIM as f64).sqrt();
        let embedding = Tensor::uniform(LAF_DIM, NUM_CATEGORIES, -k, k, rng);
        Self { adjacency, embedding }
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.adjacency, &self.embedding]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.adjacency, &mut self.embedding]
    }

    pub fn is_finite(&self) -> bool {
        self.adjacency.is_finite() && self.embedding.is_finite()
    }
}

fn expect_shape(tape: &Tape, v: Var, op: &'static str, shape: (usize, usize)) -> Result<(), DiffError> {
    let got = tape.value(v).shape();
    if got != shape {
        return Err(DiffError::Shape { op, left: got, right: shape });
    }
    Ok(())
}

/// Relation matrix `relu(A * X * W)`, `n x n`.
pub fn org_forward(tape: &mut Tape, laf: Var, adjacency: Var, embedding: Var) -> Result<Var, DiffError> {
    let n = tape.value(adjacency).rows();
    expect_shape(tape, adjacency, "org adjacency", (n, n))?;
    expect_shape(tape, laf, "org laf", (n, LAF_DIM))?;
    expect_shape(tape, embedding, "org embedding", (LAF_DIM, n))?;
    let ax = tape.matmul(adjacency, laf)?;
    let axw = tape.matmul(ax, embedding)?;
    Ok(tape.relu(axw))
}

/// Attended appearance `relu(Z * F)`; holds no parameters.
pub fn graph_attention(tape: &mut Tape, relation: Var, appearance: Var) -> Result<Var, DiffError> {
    let (n, m) = tape.value(relation).shape();
    if n != m || tape.value(appearance).rows() != n {
        return Err(DiffError::Shape {
            op: "graph attention",
            left: (n, m),
            right: tape.value(appearance).shape(),
        });
    }
    let zf = tape.matmul(relation, appearance)?;
    Ok(tape.relu(zf))
}

/// Row-wise `[appearance | laf]`, flattened into a `1 x n(d + LAF_DIM)` row.
pub fn fuse_local(tape: &mut Tape, appearance: Var, laf: Var) -> Result<Var, DiffError> {
    let joined = tape.concat(&[appearance, laf], Axis::Cols)?;
    let len = tape.value(joined).len();
    tape.reshape(joined, 1, len)
}

/// Local feature with the graph (`Some(params)`) or without it (`None`, raw
/// appearance next to the detections).
pub fn local_feature(
    tape: &mut Tape,
    laf: Var,
    appearance: Var,
    graph: Option<(Var, Var)>,
) -> Result<Var, DiffError> {
    let attended = match graph {
        Some((adjacency, embedding)) => {
            let z = org_forward(tape, laf, adjacency, embedding)?;
            graph_attention(tape, z, appearance)?
        }
        None => appearance,
    };
    fuse_local(tape, attended, laf)
}
