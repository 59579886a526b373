//! Simple and bidirectional recurrent networks over masked sequence batches.
//!
//! The recurrence is `h_t = f_h(x_t W_in + h_{t-1} W_rec + b_hid)` with
//! outputs `y_t = f_y(h_t W_out + b_out)`. Masked-out steps carry the hidden
//! state forward unchanged and emit zeros, so padded batches behave exactly
//! like their unpadded sequences.
//!
//! Two evaluation paths exist and are kept bitwise identical: a plain value
//! path (used for evaluation, sampling, and as the finite-difference target)
//! and a traced path on the differentiation tape (used for training).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::sigmoid_scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transfer {
    Logistic,
    Tanh,
    Identity,
}

impl Transfer {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Transfer::Logistic => sigmoid_scalar(x),
            Transfer::Tanh => x.tanh(),
            Transfer::Identity => x,
        }
    }

    pub fn apply(self, t: &Tensor) -> Tensor {
        match self {
            Transfer::Identity => t.clone(),
            _ => t.map(|v| self.apply_scalar(v)),
        }
    }

    pub(crate) fn trace(self, tape: &mut Tape, id: ValueId) -> ValueId {
        match self {
            Transfer::Logistic => tape.sigmoid(id),
            Transfer::Tanh => tape.tanh(id),
            Transfer::Identity => id,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transfer::Logistic => "logistic",
            Transfer::Tanh => "tanh",
            Transfer::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Transfer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Transfer> {
        match s {
            "logistic" => Ok(Transfer::Logistic),
            "tanh" => Ok(Transfer::Tanh),
            "identity" => Ok(Transfer::Identity),
            other => Err(Error::config(format!("unknown transfer `{other}`"))),
        }
    }
}

/// Weight initialization schemes for [`RnnParams::init`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Input/output maps uniform in `±sqrt(6 / (fan_in + fan_out))`,
    /// recurrent matrix rescaled to spectral radius 1, zero biases.
    GlorotSpectral,
    /// Everything zero.
    Zero,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<InitScheme> {
        match s {
            "glorot-spectral" => Ok(InitScheme::GlorotSpectral),
            "zero" => Ok(InitScheme::Zero),
            other => Err(Error::config(format!("unknown init scheme `{other}`"))),
        }
    }
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::GlorotSpectral => "glorot-spectral",
            InitScheme::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RnnDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Weights and biases of one simple recurrent network.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    /// `[input, hidden]`
    pub w_in: Tensor,
    /// `[hidden, hidden]`
    pub w_rec: Tensor,
    /// `[hidden, output]`
    pub w_out: Tensor,
    /// `[hidden]`
    pub b_hid: Tensor,
    /// `[output]`
    pub b_out: Tensor,
    pub f_h: Transfer,
    pub f_y: Transfer,
}

impl RnnParams {
    /// Reproducible initialization; the same seed yields bitwise-identical
    /// parameters. Transfers default to logistic hidden, identity output.
    pub fn init(dims: RnnDims, scheme: InitScheme, seed: u64) -> Result<RnnParams> {
        if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
            return Err(Error::invalid(format!("rnn dims must be positive, got {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match scheme {
            InitScheme::Zero => RnnParams {
                w_in: Tensor::zeros(vec![dims.input, dims.hidden]),
                w_rec: Tensor::zeros(vec![dims.hidden, dims.hidden]),
                w_out: Tensor::zeros(vec![dims.hidden, dims.output]),
                b_hid: Tensor::zeros(vec![dims.hidden]),
                b_out: Tensor::zeros(vec![dims.output]),
                f_h: Transfer::Logistic,
                f_y: Transfer::Identity,
            },
            InitScheme::GlorotSpectral => {
                let w_in = glorot(&mut rng, dims.input, dims.hidden);
                let raw_rec = glorot(&mut rng, dims.hidden, dims.hidden);
                let w_out = glorot(&mut rng, dims.hidden, dims.output);
                let rho = spectral_radius(&raw_rec);
                if rho < 1e-12 {
                    return Err(Error::config(
                        "degenerate recurrent init: spectral radius is zero",
                    ));
                }
                RnnParams {
                    w_in,
                    w_rec: raw_rec.scale(1.0 / rho),
                    w_out,
                    b_hid: Tensor::zeros(vec![dims.hidden]),
                    b_out: Tensor::zeros(vec![dims.output]),
                    f_h: Transfer::Logistic,
                    f_y: Transfer::Identity,
                }
            }
        };
        Ok(params)
    }

    pub fn with_transfers(mut self, f_h: Transfer, f_y: Transfer) -> RnnParams {
        self.f_h = f_h;
        self.f_y = f_y;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_in.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (kappa, gamma) = self.w_in.dims2()?;
        let (gr, gc) = self.w_rec.dims2()?;
        let (go, omega) = self.w_out.dims2()?;
        if gr != gc {
            return Err(Error::validation(format!(
                "recurrent matrix must be square, got [{gr}, {gc}]"
            )));
        }
        if gr != gamma || go != gamma {
            return Err(Error::validation(format!(
                "hidden extents disagree: w_in {gamma}, w_rec {gr}, w_out {go}"
            )));
        }
        if self.b_hid.shape() != [gamma] || self.b_out.shape() != [omega] {
            return Err(Error::validation("bias shapes do not match weights"));
        }
        if kappa == 0 || gamma == 0 || omega == 0 {
            return Err(Error::validation("all extents must be positive"));
        }
        for t in [&self.w_in, &self.w_rec, &self.w_out, &self.b_hid, &self.b_out] {
            if !t.is_finite() {
                return Err(Error::validation("non-finite weight"));
            }
        }
        Ok(())
    }

    pub(crate) fn trace(&self, tape: &mut Tape, trainable: bool) -> TracedRnn {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        TracedRnn {
            w_in: put(&self.w_in),
            w_rec: put(&self.w_rec),
            w_out: put(&self.w_out),
            b_hid: put(&self.b_hid),
            b_out: put(&self.b_out),
            f_h: self.f_h,
            f_y: self.f_y,
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(vec![rows, cols], |_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
}

/// Spectral radius estimate by normalized repeated squaring
/// (`rho = lim ||W^k||_F^(1/k)` with `k = 2^26`).
pub fn spectral_radius(w: &Tensor) -> f64 {
    const SQUARINGS: u32 = 26;
    let fro = |m: &Tensor| m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let n0 = fro(w);
    if n0 == 0.0 {
        return 0.0;
    }
    let mut b = w.scale(1.0 / n0);
    let mut log_norm = n0.ln();
    let mut k = 1u64;
    for _ in 0..SQUARINGS {
        let sq = b.matmul(&b).expect("square matrix");
        let nf = fro(&sq);
        if nf == 0.0 {
            return 0.0;
        }
        b = sq.scale(1.0 / nf);
        log_norm = 2.0 * log_norm + nf.ln();
        k *= 2;
    }
    (log_norm / k as f64).exp()
}

/// A padded batch of sequences: values `[T, B, features]` with a `[T, B]`
/// validity mask. Masks are prefix-contiguous per sequence and masked-out
/// values are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    values: Tensor,
    mask: Tensor,
}

impl SequenceBatch {
    pub fn new(values: Tensor, mask: Tensor) -> Result<SequenceBatch> {
        let (t, b, _) = values.dims3()?;
        if mask.shape() != [t, b] {
            return Err(Error::ShapeMismatch {
                op: "sequence_batch",
                lhs: values.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        for (i, &m) in mask.data().iter().enumerate() {
            if m != 0.0 && m != 1.0 {
                return Err(Error::validation(format!(
                    "mask value {m} at flat index {i} is not 0 or 1"
                )));
            }
        }
        for bi in 0..b {
            let mut seen_zero = false;
            for ti in 0..t {
                let m = mask.data()[ti * b + bi];
                if m == 0.0 {
                    seen_zero = true;
                } else if seen_zero {
                    return Err(Error::validation(format!(
                        "mask for sequence {bi} is not prefix-contiguous"
                    )));
                }
            }
        }
        let (_, _, k) = values.dims3()?;
        for ti in 0..t {
            for bi in 0..b {
                if mask.data()[ti * b + bi] == 0.0 {
                    for ki in 0..k {
                        if values.data()[(ti * b + bi) * k + ki] != 0.0 {
                            return Err(Error::validation(format!(
                                "masked-out entry at (t={ti}, b={bi}, k={ki}) is nonzero"
                            )));
                        }
                    }
                }
            }
        }
        Ok(SequenceBatch { values, mask })
    }

    /// Pads variable-length `[T_i, features]` sequences to a common length.
    pub fn from_sequences(seqs: &[Tensor]) -> Result<SequenceBatch> {
        if seqs.is_empty() {
            return Err(Error::invalid("from_sequences: empty batch"));
        }
        let (_, k) = seqs[0].dims2()?;
        let t_max = seqs
            .iter()
            .map(|s| s.shape()[0])
            .max()
            .expect("non-empty");
        let b = seqs.len();
        let mut values = Tensor::zeros(vec![t_max, b, k]);
        let mut mask = Tensor::zeros(vec![t_max, b]);
        for (bi, s) in seqs.iter().enumerate() {
            let (ti_len, ki) = s.dims2()?;
            if ki != k {
                return Err(Error::ShapeMismatch {
                    op: "from_sequences",
                    lhs: vec![t_max, b, k],
                    rhs: s.shape().to_vec(),
                });
            }
            for ti in 0..ti_len {
                mask.data_mut()[ti * b + bi] = 1.0;
                for kk in 0..k {
                    values.data_mut()[(ti * b + bi) * k + kk] = s.data()[ti * k + kk];
                }
            }
        }
        SequenceBatch::new(values, mask)
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    /// Values of step `t` as a `[B, features]` tensor.
    pub fn step_values(&self, t: usize) -> Tensor {
        self.values.plane(t).expect("step in range")
    }

    pub fn step_mask(&self, t: usize) -> &[f64] {
        let b = self.batch_size();
        &self.mask.data()[t * b..(t + 1) * b]
    }

    pub fn value_row(&self, t: usize, b: usize) -> &[f64] {
        let (_, bs, k) = self.values.dims3().expect("rank 3");
        &self.values.data()[(t * bs + b) * k..(t * bs + b) * k + k]
    }

    pub fn mask_at(&self, t: usize, b: usize) -> f64 {
        self.mask.data()[t * self.batch_size() + b]
    }

    /// Mask-valid length per sequence.
    pub fn lengths(&self) -> Vec<usize> {
        let (t, b) = (self.steps(), self.batch_size());
        (0..b)
            .map(|bi| (0..t).filter(|&ti| self.mask.data()[ti * b + bi] != 0.0).count())
            .collect()
    }

    /// Extracts sequence `b` without padding.
    pub fn sequence(&self, b: usize) -> Tensor {
        let len = self.lengths()[b];
        let k = self.features();
        let mut data = Vec::with_capacity(len * k);
        for t in 0..len {
            data.extend_from_slice(self.value_row(t, b));
        }
        Tensor::from_vec(vec![len.max(1), k], if len == 0 { vec![0.0; k] } else { data })
            .expect("valid sequence")
    }
}

/// `x [k] * w [k, n] -> [n]`, accumulating in ascending `k` order (the same
/// order as `Tensor::matmul`, so value and traced paths agree bitwise).
pub(crate) fn matvec(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (k, n) = w.dims2().expect("matvec wants rank 2");
    debug_assert_eq!(x.len(), k);
    let mut out = vec![0.0; n];
    for (xv, wrow) in x.iter().zip(w.data().chunks_exact(n)) {
        for (o, wv) in out.iter_mut().zip(wrow) {
            *o += xv * wv;
        }
    }
    out
}

/// Hidden-state pre-activation for one batch row:
/// `x W_in (+ z W_lat) + h W_rec + b_hid`, with the three products summed
/// separately before combining.
pub(crate) fn cell_pre(
    x: &[f64],
    lat: Option<(&[f64], &Tensor)>,
    h_prev: &[f64],
    w_in: &Tensor,
    w_rec: &Tensor,
    b_hid: &Tensor,
) -> Vec<f64> {
    let mut pre = matvec(x, w_in);
    if let Some((z, w_lat)) = lat {
        for (p, l) in pre.iter_mut().zip(matvec(z, w_lat)) {
            *p += l;
        }
    }
    for (p, r) in pre.iter_mut().zip(matvec(h_prev, w_rec)) {
        *p += r;
    }
    for (p, b) in pre.iter_mut().zip(b_hid.data()) {
        *p += b;
    }
    pre
}

/// Output pre-activation for one batch row: `h W_out + b_out`.
pub(crate) fn cell_out_pre(h: &[f64], w_out: &Tensor, b_out: &Tensor) -> Vec<f64> {
    let mut out = matvec(h, w_out);
    for (o, b) in out.iter_mut().zip(b_out.data()) {
        *o += b;
    }
    out
}

pub(crate) fn mask_mix(new: &[f64], prev: &[f64], m: f64, out: &mut [f64]) {
    for ((o, n), p) in out.iter_mut().zip(new).zip(prev) {
        *o = m * n + (1.0 - m) * p;
    }
}

#[derive(Debug, Clone)]
pub struct RnnForward {
    /// `[T, B, hidden]`
    pub hidden: Tensor,
    /// `[T, B, output]`
    pub outputs: Tensor,
}

fn check_inputs(params: &RnnParams, inputs: &SequenceBatch) -> Result<()> {
    if inputs.features() != params.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "rnn_forward",
            lhs: vec![params.input_dim(), params.hidden_dim()],
            rhs: inputs.values().shape().to_vec(),
        });
    }
    Ok(())
}

fn initial_hidden(params: &RnnParams, h0: Option<&Tensor>) -> Result<Vec<f64>> {
    match h0 {
        None => Ok(vec![0.0; params.hidden_dim()]),
        Some(t) => {
            if t.shape() != [params.hidden_dim()] {
                return Err(Error::ShapeMismatch {
                    op: "rnn_forward",
                    lhs: vec![params.hidden_dim()],
                    rhs: t.shape().to_vec(),
                });
            }
            Ok(t.data().to_vec())
        }
    }
}

/// Left-to-right forward pass. Masked steps carry the hidden state forward
/// unchanged and output zeros. `h0` defaults to zeros.
pub fn rnn_forward(
    params: &RnnParams,
    inputs: &SequenceBatch,
    h0: Option<&Tensor>,
) -> Result<RnnForward> {
    params.validate()?;
    check_inputs(params, inputs)?;
    let h_init = initial_hidden(params, h0)?;
    let (t_len, b, gamma, omega) = (
        inputs.steps(),
        inputs.batch_size(),
        params.hidden_dim(),
        params.output_dim(),
    );
    let mut hidden = Tensor::zeros(vec![t_len, b, gamma]);
    let mut outputs = Tensor::zeros(vec![t_len, b, omega]);
    let mut h_prev: Vec<Vec<f64>> = vec![h_init; b];
    for t in 0..t_len {
        for bi in 0..b {
            let m = inputs.mask_at(t, bi);
            let pre = cell_pre(
                inputs.value_row(t, bi),
                None,
                &h_prev[bi],
                &params.w_in,
                &params.w_rec,
                &params.b_hid,
            );
            let new: Vec<f64> = pre.iter().map(|&v| params.f_h.apply_scalar(v)).collect();
            let mut h = vec![0.0; gamma];
            mask_mix(&new, &h_prev[bi], m, &mut h);
            let out_pre = cell_out_pre(&h, &params.w_out, &params.b_out);
            for (j, &v) in h.iter().enumerate() {
                hidden.data_mut()[(t * b + bi) * gamma + j] = v;
            }
            for (j, &v) in out_pre.iter().enumerate() {
                outputs.data_mut()[(t * b + bi) * omega + j] = m * params.f_y.apply_scalar(v);
            }
            h_prev[bi] = h;
        }
    }
    Ok(RnnForward { hidden, outputs })
}

/// Output pre-activations of a right-to-left pass over the mask-valid span.
fn reverse_pre_activations(params: &RnnParams, inputs: &SequenceBatch) -> Result<Vec<Vec<Vec<f64>>>> {
    let (t_len, b, gamma) = (inputs.steps(), inputs.batch_size(), params.hidden_dim());
    let mut pre_out = vec![vec![Vec::new(); b]; t_len];
    let mut h_next: Vec<Vec<f64>> = vec![vec![0.0; gamma]; b];
    for t in (0..t_len).rev() {
        for bi in 0..b {
            let m = inputs.mask_at(t, bi);
            let pre = cell_pre(
                inputs.value_row(t, bi),
                None,
                &h_next[bi],
                &params.w_in,
                &params.w_rec,
                &params.b_hid,
            );
            let new: Vec<f64> = pre.iter().map(|&v| params.f_h.apply_scalar(v)).collect();
            let mut h = vec![0.0; gamma];
            mask_mix(&new, &h_next[bi], m, &mut h);
            pre_out[t][bi] = cell_out_pre(&h, &params.w_out, &params.b_out);
            h_next[bi] = h;
        }
    }
    Ok(pre_out)
}

/// Bidirectional forward pass: one net runs left-to-right, one right-to-left
/// over the mask-valid span, and the output at each step is the transfer of
/// the summed output pre-activations.
pub fn birnn_forward(
    fwd: &RnnParams,
    bwd: &RnnParams,
    inputs: &SequenceBatch,
) -> Result<Tensor> {
    fwd.validate()?;
    bwd.validate()?;
    check_inputs(fwd, inputs)?;
    check_inputs(bwd, inputs)?;
    if fwd.output_dim() != bwd.output_dim() {
        return Err(Error::ShapeMismatch {
            op: "birnn_forward",
            lhs: fwd.w_out.shape().to_vec(),
            rhs: bwd.w_out.shape().to_vec(),
        });
    }
    let (t_len, b, gamma, omega) = (
        inputs.steps(),
        inputs.batch_size(),
        fwd.hidden_dim(),
        fwd.output_dim(),
    );
    let back_pre = reverse_pre_activations(bwd, inputs)?;
    let mut outputs = Tensor::zeros(vec![t_len, b, omega]);
    let mut h_prev: Vec<Vec<f64>> = vec![vec![0.0; gamma]; b];
    for t in 0..t_len {
        for bi in 0..b {
            let m = inputs.mask_at(t, bi);
            let pre = cell_pre(
                inputs.value_row(t, bi),
                None,
                &h_prev[bi],
                &fwd.w_in,
                &fwd.w_rec,
                &fwd.b_hid,
            );
            let new: Vec<f64> = pre.iter().map(|&v| fwd.f_h.apply_scalar(v)).collect();
            let mut h = vec![0.0; gamma];
            mask_mix(&new, &h_prev[bi], m, &mut h);
            let fwd_pre = cell_out_pre(&h, &fwd.w_out, &fwd.b_out);
            for j in 0..omega {
                let summed = fwd_pre[j] + back_pre[t][bi][j];
                outputs.data_mut()[(t * b + bi) * omega + j] = m * fwd.f_y.apply_scalar(summed);
            }
            h_prev[bi] = h;
        }
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// Traced counterparts.
// ---------------------------------------------------------------------------

pub(crate) struct TracedRnn {
    pub w_in: ValueId,
    pub w_rec: ValueId,
    pub w_out: ValueId,
    pub b_hid: ValueId,
    pub b_out: ValueId,
    pub f_h: Transfer,
    pub f_y: Transfer,
}

pub(crate) struct TracedSteps {
    // Read by the traced-vs-value equality tests.
    #[allow(dead_code)]
    pub hidden: Vec<ValueId>,
    pub out_pre: Vec<ValueId>,
}

/// Left-to-right traced pass. With `shift` the input at step `t` is
/// `x_{t-1}` (zeros at the first step); `latents` adds `z_t W_lat` to the
/// hidden pre-activation.
pub(crate) fn rnn_steps_traced(
    tape: &mut Tape,
    p: &TracedRnn,
    x: &SequenceBatch,
    shift: bool,
    latents: Option<(ValueId, &[ValueId])>,
    h0: Option<&Tensor>,
) -> Result<TracedSteps> {
    let (t_len, b) = (x.steps(), x.batch_size());
    let gamma = tape.value(p.w_rec).shape()[0];
    let h_init = match h0 {
        None => Tensor::zeros(vec![b, gamma]),
        Some(t) => {
            let mut m = Tensor::zeros(vec![b, gamma]);
            for bi in 0..b {
                for j in 0..gamma {
                    m.data_mut()[bi * gamma + j] = t.data()[j];
                }
            }
            m
        }
    };
    let mut h_prev = tape.constant(h_init);
    let mut hidden = Vec::with_capacity(t_len);
    let mut out_pre = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x_t = if shift {
            if t == 0 {
                Tensor::zeros(vec![b, x.features()])
            } else {
                x.step_values(t - 1)
            }
        } else {
            x.step_values(t)
        };
        let x_id = tape.constant(x_t);
        let mut pre = tape.matmul(x_id, p.w_in)?;
        if let Some((w_lat, zs)) = latents {
            let lat = tape.matmul(zs[t], w_lat)?;
            pre = tape.add(pre, lat)?;
        }
        let rec = tape.matmul(h_prev, p.w_rec)?;
        pre = tape.add(pre, rec)?;
        pre = tape.add_row(pre, p.b_hid)?;
        let new = p.f_h.trace(tape, pre);
        let h = tape.lerp_rows(new, h_prev, x.step_mask(t))?;
        let o = tape.matmul(h, p.w_out)?;
        let o = tape.add_row(o, p.b_out)?;
        hidden.push(h);
        out_pre.push(o);
        h_prev = h;
    }
    Ok(TracedSteps { hidden, out_pre })
}

/// Right-to-left traced pass; returns output pre-activations indexed by step.
pub(crate) fn rnn_steps_traced_reverse(
    tape: &mut Tape,
    p: &TracedRnn,
    x: &SequenceBatch,
) -> Result<Vec<ValueId>> {
    let (t_len, b) = (x.steps(), x.batch_size());
    let gamma = tape.value(p.w_rec).shape()[0];
    let mut h_next = tape.constant(Tensor::zeros(vec![b, gamma]));
    let mut out_pre = vec![None; t_len];
    for t in (0..t_len).rev() {
        let x_id = tape.constant(x.step_values(t));
        let mut pre = tape.matmul(x_id, p.w_in)?;
        let rec = tape.matmul(h_next, p.w_rec)?;
        pre = tape.add(pre, rec)?;
        pre = tape.add_row(pre, p.b_hid)?;
        let new = p.f_h.trace(tape, pre);
        let h = tape.lerp_rows(new, h_next, x.step_mask(t))?;
        let o = tape.matmul(h, p.w_out)?;
        let o = tape.add_row(o, p.b_out)?;
        out_pre[t] = Some(o);
        h_next = h;
    }
    Ok(out_pre.into_iter().map(|o| o.expect("filled")).collect())
}

/// Masked outputs `y_t = mask * f_y(pre_t)` for a traced pass.
pub(crate) fn traced_outputs(
    tape: &mut Tape,
    f_y: Transfer,
    pre: &[ValueId],
    x: &SequenceBatch,
) -> Result<Vec<ValueId>> {
    pre.iter()
        .enumerate()
        .map(|(t, &p)| {
            let y = f_y.trace(tape, p);
            tape.mul_col_const(y, x.step_mask(t))
        })
        .collect()
}
