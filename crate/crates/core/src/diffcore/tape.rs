//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. Nodes are only ever appended, so the node list is already in
//! topological order and `backward` is a single reverse sweep.

use super::{DiffError, Tensor};

/// Lower bound applied before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis along which softmax normalizes or concat joins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Across columns, independently for each row.
    Cols,
    /// Down rows, independently for each column.
    Rows,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Ln(Var),
    Square(Var),
    Softmax(Var, Axis),
    CrossEntropy(Var, usize),
    Concat(Vec<Var>, Axis),
    Slice {
        src: Var,
        row0: usize,
        col0: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Parameters may be borrowed for the tape's lifetime
/// so registering them costs no copy.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'p>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    /// An owned leaf that receives gradients.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, true)
    }

    /// A borrowed leaf that receives gradients.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, true)
    }

    /// A borrowed leaf without gradients (frozen parameters).
    pub fn frozen(&mut self, t: &'p Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(Value::Owned(out), op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(DiffError::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data).expect("shape checked");
        let rg = self.rg(&[a, b]);
        self.push(Value::Owned(out), op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Value::Owned(out), Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    /// `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    /// Natural log of `max(x, LOG_CLAMP)`.
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), |x| x.max(LOG_CLAMP).ln())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var, DiffError> {
        let t = self.value(a);
        let (rows, cols) = t.shape();
        let n = match axis {
            Axis::Cols => cols,
            Axis::Rows => rows,
        };
        if n == 0 {
            return Err(DiffError::Empty("softmax"));
        }
        let mut out = t.clone();
        for_each_slice(rows, cols, axis, |idx| {
            let data = out.data_mut();
            let max = idx.clone().map(|i| data[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in idx.clone() {
                data[i] = (data[i] - max).exp();
                total += data[i];
            }
            for i in idx {
                data[i] /= total;
            }
        });
        let rg = self.rg(&[a]);
        Ok(self.push(Value::Owned(out), Op::Softmax(a, axis), rg))
    }

    /// `-ln(max(p[target], LOG_CLAMP))` for a probability vector `p`.
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var, DiffError> {
        let t = self.value(p);
        if t.rows() != 1 && t.cols() != 1 {
            return Err(DiffError::NotVector(t.shape()));
        }
        if target >= t.len() {
            return Err(DiffError::Index {
                index: target,
                len: t.len(),
            });
        }
        let loss = -t.data()[target].max(LOG_CLAMP).ln();
        let rg = self.rg(&[p]);
        Ok(self.push(Value::Owned(Tensor::scalar(loss)), Op::CrossEntropy(p, target), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or(DiffError::Empty("concat"))?;
        let (r0, c0) = self.value(first).shape();
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).shape();
            let ok = match axis {
                Axis::Cols => r == r0,
                Axis::Rows => c == c0,
            };
            if !ok {
                return Err(DiffError::Shape {
                    op: "concat",
                    left: (r0, c0),
                    right: (r, c),
                });
            }
            total += match axis {
                Axis::Cols => c,
                Axis::Rows => r,
            };
        }
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(total * c0);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(total, c0, data)?
            }
            Axis::Cols => {
                let mut data = Vec::with_capacity(r0 * total);
                for r in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::new(r0, total, data)?
            }
        };
        let rg = self.rg(parts);
        Ok(self.push(Value::Owned(out), Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Rows `rows.0..rows.1`, columns `cols.0..cols.1`.
    pub fn slice(
        &mut self,
        a: Var,
        rows: (usize, usize),
        cols: (usize, usize),
    ) -> Result<Var, DiffError> {
        let t = self.value(a);
        if rows.0 > rows.1 || cols.0 > cols.1 || rows.1 > t.rows() || cols.1 > t.cols() {
            return Err(DiffError::Slice {
                shape: t.shape(),
                rows,
                cols,
            });
        }
        let (nr, nc) = (rows.1 - rows.0, cols.1 - cols.0);
        let mut data = Vec::with_capacity(nr * nc);
        for r in rows.0..rows.1 {
            data.extend_from_slice(&t.row_slice(r)[cols.0..cols.1]);
        }
        let out = Tensor::new(nr, nc, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Value::Owned(out),
            Op::Slice {
                src: a,
                row0: rows.0,
                col0: cols.0,
            },
            rg,
        ))
    }

    /// Same data, new shape (row-major order preserved).
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if rows * cols != t.len() {
            return Err(DiffError::Shape {
                op: "reshape",
                left: t.shape(),
                right: (rows, cols),
            });
        }
        let out = Tensor::new(rows, cols, t.data().to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(Value::Owned(out), Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Value::Owned(Tensor::scalar(s)), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(DiffError::Empty("mean"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Value::Owned(Tensor::scalar(m)), Op::Mean(a), rg))
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, DiffError> {
        let mut iter = terms.iter();
        let mut acc = *iter.next().ok_or(DiffError::Empty("add_all"))?;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar `loss`. A tape can be differentiated once;
    /// a second call is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.consumed {
            return Err(DiffError::TapeConsumed);
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(DiffError::NotScalar(shape));
        }
        self.consumed = true;
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.get().len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn acc_with(&mut self, v: Var, f: impl Fn(usize) -> f64) {
        if let Some(buf) = self.acc(v) {
            for (i, b) in buf.iter_mut().enumerate() {
                *b += f(i);
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).shape();
                let n = self.value(b).cols();
                if self.nodes[a.0].requires_grad {
                    // dA = G * B^T
                    let da = {
                        let bv = self.value(b).data();
                        let mut da = vec![0.0; m * k];
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            }
                        }
                        da
                    };
                    self.acc_with(a, |j| da[j]);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T * G
                    let db = {
                        let av = self.value(a).data();
                        let mut db = vec![0.0; k * n];
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let x = av[r * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += x * gv;
                                }
                            }
                        }
                        db
                    };
                    self.acc_with(b, |j| db[j]);
                }
            }
            Op::Add(a, b) => {
                self.acc_with(a, |j| g[j]);
                self.acc_with(b, |j| g[j]);
            }
            Op::Sub(a, b) => {
                self.acc_with(a, |j| g[j]);
                self.acc_with(b, |j| -g[j]);
            }
            Op::Mul(a, b) => {
                let va = self.value(a).data().to_vec();
                let vb = self.value(b).data().to_vec();
                self.acc_with(a, |j| g[j] * vb[j]);
                self.acc_with(b, |j| g[j] * va[j]);
            }
            Op::Scale(a, k) => self.acc_with(a, |j| g[j] * k),
            Op::AddScalar(a) => self.acc_with(a, |j| g[j]),
            Op::Relu(a) => {
                let x = self.value(a).data().to_vec();
                self.acc_with(a, |j| if x[j] > 0.0 { g[j] } else { 0.0 });
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.get().data().to_vec();
                self.acc_with(a, |j| g[j] * (1.0 - y[j] * y[j]));
            }
            Op::Ln(a) => {
                let x = self.value(a).data().to_vec();
                self.acc_with(a, |j| if x[j] > LOG_CLAMP { g[j] / x[j] } else { 0.0 });
            }
            Op::Square(a) => {
                let x = self.value(a).data().to_vec();
                self.acc_with(a, |j| 2.0 * x[j] * g[j]);
            }
            Op::Softmax(a, axis) => {
                let y = self.nodes[i].value.get();
                let (rows, cols) = y.shape();
                let y = y.data().to_vec();
                let mut dx = vec![0.0; y.len()];
                for_each_slice(rows, cols, axis, |idx| {
                    let dot: f64 = idx.clone().map(|j| y[j] * g[j]).sum();
                    for j in idx {
                        dx[j] = y[j] * (g[j] - dot);
                    }
                });
                self.acc_with(a, |j| dx[j]);
            }
            Op::CrossEntropy(p, target) => {
                let pt = self.value(p).data()[target];
                let d = if pt > LOG_CLAMP { -g[0] / pt } else { 0.0 };
                self.acc_with(p, |j| if j == target { d } else { 0.0 });
            }
            Op::Concat(ref parts, axis) => {
                let parts = parts.clone();
                let total_cols = self.nodes[i].value.get().cols();
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.value(p).shape();
                    match axis {
                        Axis::Rows => {
                            let base = offset * c;
                            self.acc_with(p, |j| g[base + j]);
                            offset += r;
                        }
                        Axis::Cols => {
                            let off = offset;
                            self.acc_with(p, |j| g[(j / c) * total_cols + off + j % c]);
                            offset += c;
                        }
                    }
                }
            }
            Op::Slice { src, row0, col0 } => {
                let nc = self.nodes[i].value.get().cols();
                let nr = self.nodes[i].value.get().rows();
                let src_cols = self.value(src).cols();
                if let Some(buf) = self.acc(src) {
                    for r in 0..nr {
                        for c in 0..nc {
                            buf[(row0 + r) * src_cols + col0 + c] += g[r * nc + c];
                        }
                    }
                }
            }
            Op::Reshape(a) => self.acc_with(a, |j| g[j]),
            Op::Sum(a) => self.acc_with(a, |_| g[0]),
            Op::Mean(a) => {
                let n = self.value(a).len() as f64;
                self.acc_with(a, |_| g[0] / n);
            }
        }
    }

    /// Gradient accumulated at `v` by the last `backward`; zeros when `v`
    /// received no gradient flow.
    pub fn grad(&self, v: Var) -> Result<Tensor, DiffError> {
        if !self.consumed {
            return Err(DiffError::NoBackward);
        }
        let (r, c) = self.value(v).shape();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(r, c, g.clone()),
            None => Ok(Tensor::zeros(r, c)),
        }
    }

    pub fn grads(&self, vars: &[Var]) -> Result<Vec<Tensor>, DiffError> {
        vars.iter().map(|&v| self.grad(v)).collect()
    }
}

fn for_each_slice(
    rows: usize,
    cols: usize,
    axis: Axis,
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) {
    match axis {
        Axis::Cols => {
            for r in 0..rows {
                f((r * cols..(r + 1) * cols).step_by(1));
            }
        }
        Axis::Rows => {
            for c in 0..cols {
                f((c..rows * cols).step_by(cols));
            }
        }
    }
}
