//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] is an append-only arena of tensor values. Operations record the
//! primitive they came from; [`Tape::backward`] replays the record in reverse
//! once, accumulating adjoints. Every trainable operation in the crate routes
//! its parameters through a tape, and every backward rule is checked against
//! central finite differences in the tests.
//!
//! Tapes are single-threaded by construction: build, run backward once, drop.
//! A second `backward` on the same tape is rejected.

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op {
    Leaf,
    Matmul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    MulElem(ValueId, ValueId),
    /// Adds a row vector to every row of a matrix.
    AddRow(ValueId, ValueId),
    Scale(ValueId, f64),
    AddConst(ValueId),
    Sigmoid(ValueId),
    Tanh(ValueId),
    Square(ValueId),
    Sqrt(ValueId),
    SliceCols {
        input: ValueId,
        start: usize,
    },
    /// Rowwise mix: `mix[i] * a[i, :] + (1 - mix[i]) * b[i, :]`.
    LerpRows {
        a: ValueId,
        b: ValueId,
        mix: Vec<f64>,
    },
    /// Rowwise scaling by a constant column: `col[i] * a[i, :]`.
    MulColConst {
        input: ValueId,
        col: Vec<f64>,
    },
    RowSum(ValueId),
    SumVec(ValueId),
    MeanVec(ValueId),
    BernoulliNllStep {
        probs: ValueId,
        targets: Tensor,
        mask: Vec<f64>,
        eps: f64,
    },
    GaussianNllStep {
        mean: ValueId,
        targets: Tensor,
        std: f64,
        mask: Vec<f64>,
    },
    KlStdNormalStep {
        mu: ValueId,
        sigma_sq: ValueId,
        mask: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by [`Tape::backward`]. Values the loss does not reach
/// have no stored adjoint and read as zero.
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.adjoints[id.0].as_ref()
    }

    /// The adjoint of `id`, or zeros of the given shape when unreachable.
    pub fn get_or_zeros(&self, id: ValueId, shape: &[usize]) -> Tensor {
        match self.adjoints[id.0].as_ref() {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Matmul(a, b), needs))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).sub(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    pub fn mul_elem(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).mul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MulElem(a, b), needs))
    }

    pub fn add_row(&mut self, a: ValueId, row: ValueId) -> Result<ValueId> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(row).shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(row).shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        for i in 0..m {
            for j in 0..n {
                out.data_mut()[i * n + j] += self.value(row).data()[j];
            }
        }
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a, row), needs))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let value = self.value(a).scale(k);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, k), needs)
    }

    pub fn add_const(&mut self, a: ValueId, k: f64) -> ValueId {
        let value = self.value(a).map(|v| v + k);
        let needs = self.needs(a);
        self.push(value, Op::AddConst(a), needs)
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let value = math::sigmoid(self.value(a));
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(f64::tanh);
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn square(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(|v| v * v);
        let needs = self.needs(a);
        self.push(value, Op::Square(a), needs)
    }

    /// Elementwise square root; inputs must be non-negative.
    pub fn sqrt(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(f64::sqrt);
        let needs = self.needs(a);
        self.push(value, Op::Sqrt(a), needs)
    }

    /// Copies out columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: ValueId, start: usize, end: usize) -> Result<ValueId> {
        let (m, n) = self.value(a).dims2()?;
        if start >= end || end > n {
            return Err(Error::invalid(format!(
                "slice_cols {start}..{end} out of range for {n} columns"
            )));
        }
        let w = end - start;
        let mut out = Tensor::zeros(vec![m, w]);
        for i in 0..m {
            for j in 0..w {
                out.data_mut()[i * w + j] = self.value(a).data()[i * n + start + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(out, Op::SliceCols { input: a, start }, needs))
    }

    /// `mix[i] * a[i, :] + (1 - mix[i]) * b[i, :]` with a constant mix column.
    pub fn lerp_rows(&mut self, a: ValueId, b: ValueId, mix: &[f64]) -> Result<ValueId> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(b).shape() != [m, n] {
            return Err(Error::ShapeMismatch {
                op: "lerp_rows",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        if mix.len() != m {
            return Err(Error::invalid(format!(
                "lerp_rows mix length {} does not match {m} rows",
                mix.len()
            )));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            for j in 0..n {
                out.data_mut()[i * n + j] = mix[i] * self.value(a).data()[i * n + j]
                    + (1.0 - mix[i]) * self.value(b).data()[i * n + j];
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            out,
            Op::LerpRows {
                a,
                b,
                mix: mix.to_vec(),
            },
            needs,
        ))
    }

    /// Scales each row by a constant column entry.
    pub fn mul_col_const(&mut self, a: ValueId, col: &[f64]) -> Result<ValueId> {
        let (m, n) = self.value(a).dims2()?;
        if col.len() != m {
            return Err(Error::invalid(format!(
                "mul_col_const column length {} does not match {m} rows",
                col.len()
            )));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            for j in 0..n {
                out.data_mut()[i * n + j] = col[i] * self.value(a).data()[i * n + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            out,
            Op::MulColConst {
                input: a,
                col: col.to_vec(),
            },
            needs,
        ))
    }

    pub fn row_sum(&mut self, a: ValueId) -> Result<ValueId> {
        let value = self.value(a).row_sum()?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::RowSum(a), needs))
    }

    pub fn sum_vec(&mut self, a: ValueId) -> Result<ValueId> {
        if self.value(a).rank() != 1 {
            return Err(Error::invalid("sum_vec expects a rank-1 tensor"));
        }
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        Ok(self.push(value, Op::SumVec(a), needs))
    }

    pub fn mean_vec(&mut self, a: ValueId) -> Result<ValueId> {
        if self.value(a).rank() != 1 {
            return Err(Error::invalid("mean_vec expects a rank-1 tensor"));
        }
        let n = self.value(a).len() as f64;
        let value = Tensor::scalar(self.value(a).sum() / n);
        let needs = self.needs(a);
        Ok(self.push(value, Op::MeanVec(a), needs))
    }

    /// Masked Bernoulli NLL for one timestep; returns a `[B]` vector.
    pub fn bernoulli_nll_step(
        &mut self,
        probs: ValueId,
        targets: &Tensor,
        mask: &[f64],
        eps: f64,
    ) -> Result<ValueId> {
        let shape = self.value(probs).shape().to_vec();
        if targets.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "bernoulli_nll_step",
                lhs: shape,
                rhs: targets.shape().to_vec(),
            });
        }
        if let Some(v) = targets.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::validation(format!(
                "bernoulli_nll_step target {v} is not binary"
            )));
        }
        let rows = math::bernoulli_nll_rows(self.value(probs), targets, mask, eps);
        let value = Tensor::from_fn(vec![rows.len()], |i| rows[i]);
        let needs = self.needs(probs);
        Ok(self.push(
            value,
            Op::BernoulliNllStep {
                probs,
                targets: targets.clone(),
                mask: mask.to_vec(),
                eps,
            },
            needs,
        ))
    }

    /// Masked Gaussian NLL for one timestep; returns a `[B]` vector.
    pub fn gaussian_nll_step(
        &mut self,
        mean: ValueId,
        targets: &Tensor,
        std: f64,
        mask: &[f64],
    ) -> Result<ValueId> {
        if std <= 0.0 {
            return Err(Error::invalid(format!("gaussian_nll_step std {std} must be positive")));
        }
        if targets.shape() != self.value(mean).shape() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_nll_step",
                lhs: self.value(mean).shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let rows = math::gaussian_nll_rows(self.value(mean), targets, std, mask);
        let value = Tensor::from_fn(vec![rows.len()], |i| rows[i]);
        let needs = self.needs(mean);
        Ok(self.push(
            value,
            Op::GaussianNllStep {
                mean,
                targets: targets.clone(),
                std,
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Masked closed-form KL to the standard normal for one timestep;
    /// takes the squared sigma and returns a `[B]` vector.
    pub fn kl_std_normal_step(
        &mut self,
        mu: ValueId,
        sigma_sq: ValueId,
        mask: &[f64],
    ) -> Result<ValueId> {
        if self.value(mu).shape() != self.value(sigma_sq).shape() {
            return Err(Error::ShapeMismatch {
                op: "kl_std_normal_step",
                lhs: self.value(mu).shape().to_vec(),
                rhs: self.value(sigma_sq).shape().to_vec(),
            });
        }
        let rows = math::kl_std_normal_rows(self.value(mu), self.value(sigma_sq), mask);
        let value = Tensor::from_fn(vec![rows.len()], |i| rows[i]);
        let needs = self.needs(mu) || self.needs(sigma_sq);
        Ok(self.push(
            value,
            Op::KlStdNormalStep {
                mu,
                sigma_sq,
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar loss. Consumes the tape's backward budget:
    /// a second call is rejected until a new forward pass is built.
    pub fn backward(&mut self, loss: ValueId) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if adj[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = adj[i].clone().unwrap();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let d = g.matmul(&self.value(b).transpose()?)?;
                        accumulate(&mut adj, a, d);
                    }
                    if self.needs(b) {
                        let d = self.value(a).transpose()?.matmul(&g)?;
                        accumulate(&mut adj, b, d);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        accumulate(&mut adj, a, g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut adj, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        accumulate(&mut adj, a, g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut adj, b, g.scale(-1.0));
                    }
                }
                Op::MulElem(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let d = g.mul(self.value(b))?;
                        accumulate(&mut adj, a, d);
                    }
                    if self.needs(b) {
                        let d = g.mul(self.value(a))?;
                        accumulate(&mut adj, b, d);
                    }
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    if self.needs(a) {
                        accumulate(&mut adj, a, g.clone());
                    }
                    if self.needs(row) {
                        accumulate(&mut adj, row, g.col_sum()?);
                    }
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    accumulate(&mut adj, a, g.scale(k));
                }
                Op::AddConst(a) => {
                    accumulate(&mut adj, *a, g);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let d = g.zip_map(&self.nodes[i].value, "sigmoid'", |gv, y| gv * y * (1.0 - y))?;
                    accumulate(&mut adj, a, d);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let d = g.zip_map(&self.nodes[i].value, "tanh'", |gv, y| gv * (1.0 - y * y))?;
                    accumulate(&mut adj, a, d);
                }
                Op::Square(a) => {
                    let a = *a;
                    let d = g.zip_map(self.value(a), "square'", |gv, x| gv * 2.0 * x)?;
                    accumulate(&mut adj, a, d);
                }
                Op::Sqrt(a) => {
                    let a = *a;
                    let d = g.zip_map(&self.nodes[i].value, "sqrt'", |gv, y| gv * 0.5 / y)?;
                    accumulate(&mut adj, a, d);
                }
                Op::SliceCols { input, start } => {
                    let (input, start) = (*input, *start);
                    let (m, n) = self.value(input).dims2()?;
                    let (_, w) = g.dims2()?;
                    let mut d = Tensor::zeros(vec![m, n]);
                    for r in 0..m {
                        for c in 0..w {
                            d.data_mut()[r * n + start + c] = g.data()[r * w + c];
                        }
                    }
                    accumulate(&mut adj, input, d);
                }
                Op::LerpRows { a, b, mix } => {
                    let (a, b) = (*a, *b);
                    let (m, n) = g.dims2()?;
                    if self.needs(a) {
                        let mut d = g.clone();
                        for r in 0..m {
                            for c in 0..n {
                                d.data_mut()[r * n + c] *= mix[r];
                            }
                        }
                        accumulate(&mut adj, a, d);
                    }
                    if self.needs(b) {
                        let mut d = g.clone();
                        for r in 0..m {
                            for c in 0..n {
                                d.data_mut()[r * n + c] *= 1.0 - mix[r];
                            }
                        }
                        accumulate(&mut adj, b, d);
                    }
                }
                Op::MulColConst { input, col } => {
                    let input = *input;
                    let (m, n) = g.dims2()?;
                    let mut d = g.clone();
                    for r in 0..m {
                        for c in 0..n {
                            d.data_mut()[r * n + c] *= col[r];
                        }
                    }
                    accumulate(&mut adj, input, d);
                }
                Op::RowSum(a) => {
                    let a = *a;
                    let (m, n) = self.value(a).dims2()?;
                    let mut d = Tensor::zeros(vec![m, n]);
                    for r in 0..m {
                        for c in 0..n {
                            d.data_mut()[r * n + c] = g.data()[r];
                        }
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::SumVec(a) => {
                    let a = *a;
                    let d = Tensor::filled(self.value(a).shape().to_vec(), g.scalar_value());
                    accumulate(&mut adj, a, d);
                }
                Op::MeanVec(a) => {
                    let a = *a;
                    let n = self.value(a).len() as f64;
                    let d = Tensor::filled(self.value(a).shape().to_vec(), g.scalar_value() / n);
                    accumulate(&mut adj, a, d);
                }
                Op::BernoulliNllStep {
                    probs,
                    targets,
                    mask,
                    eps,
                } => {
                    let probs = *probs;
                    let (bsz, w) = self.value(probs).dims2()?;
                    let mut d = Tensor::zeros(vec![bsz, w]);
                    for r in 0..bsz {
                        if mask[r] == 0.0 {
                            continue;
                        }
                        for c in 0..w {
                            let p = self.value(probs).data()[r * w + c];
                            // Inside the clamp the derivative is (p - t) / (p (1 - p));
                            // outside it the clamped value is constant in p.
                            if p <= *eps || p >= 1.0 - *eps {
                                continue;
                            }
                            let t = targets.data()[r * w + c];
                            d.data_mut()[r * w + c] =
                                g.data()[r] * mask[r] * (p - t) / (p * (1.0 - p));
                        }
                    }
                    accumulate(&mut adj, probs, d);
                }
                Op::GaussianNllStep {
                    mean,
                    targets,
                    std,
                    mask,
                } => {
                    let mean = *mean;
                    let (bsz, w) = self.value(mean).dims2()?;
                    let var = std * std;
                    let mut d = Tensor::zeros(vec![bsz, w]);
                    for r in 0..bsz {
                        if mask[r] == 0.0 {
                            continue;
                        }
                        for c in 0..w {
                            let mu = self.value(mean).data()[r * w + c];
                            let t = targets.data()[r * w + c];
                            d.data_mut()[r * w + c] = g.data()[r] * mask[r] * (mu - t) / var;
                        }
                    }
                    accumulate(&mut adj, mean, d);
                }
                Op::KlStdNormalStep { mu, sigma_sq, mask } => {
                    let (mu, sigma_sq) = (*mu, *sigma_sq);
                    let (bsz, w) = self.value(mu).dims2()?;
                    if self.needs(mu) {
                        let mut d = Tensor::zeros(vec![bsz, w]);
                        for r in 0..bsz {
                            if mask[r] == 0.0 {
                                continue;
                            }
                            for c in 0..w {
                                d.data_mut()[r * w + c] =
                                    g.data()[r] * mask[r] * self.value(mu).data()[r * w + c];
                            }
                        }
                        accumulate(&mut adj, mu, d);
                    }
                    if self.needs(sigma_sq) {
                        let mut d = Tensor::zeros(vec![bsz, w]);
                        for r in 0..bsz {
                            if mask[r] == 0.0 {
                                continue;
                            }
                            for c in 0..w {
                                let s = self.value(sigma_sq).data()[r * w + c];
                                d.data_mut()[r * w + c] = g.data()[r] * mask[r] * 0.5 * (1.0 - 1.0 / s);
                            }
                        }
                        accumulate(&mut adj, sigma_sq, d);
                    }
                }
            }
        }

        Ok(Gradients { adjoints: adj })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: ValueId, delta: Tensor) {
    match &mut adj[id.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot => *slot = Some(delta),
    }
}
