//! The stochastic recurrent network: a generating RNN whose hidden
//! recurrence receives per-timestep latent variables as extra inputs, a
//! recognition RNN producing a diagonal Gaussian posterior over those
//! latents, and the single-sample variational bound tying them together.
//!
//! Conventions. Sequences are 0-indexed; the generating net is teacher
//! forced, so its input at output step `t` is `x_{t-1}` (zeros for the
//! virtual first step) plus the latent `z_t`, and its output at step `t`
//! parameterizes the distribution of `x_t`. The recognition net reads the
//! unshifted sequence; its conditioning window is set by the recognition
//! mode (`x_{0..=t}`, `x_{0..t}`, or the whole sequence).
//!
//! With the latent input map zeroed the model collapses to a simple RNN:
//! the reconstruction term stops depending on the latent draw entirely and
//! equals the sRNN negative log-likelihood bit for bit.

use crate::error::{Error, Result};
use crate::math::{self, MaskedLoss};
use crate::params::ParamSet;
use crate::rnn::{
    cell_out_pre, cell_pre, mask_mix, rnn_steps_traced, rnn_steps_traced_reverse, InitScheme,
    RnnDims, RnnParams, SequenceBatch, TracedRnn, Transfer,
};
use crate::seed::sub_seed;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Output likelihood of the generating net.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    /// Binary observations; outputs are per-channel probabilities.
    Bernoulli,
    /// Real observations; outputs are means, shared fixed deviation.
    Gaussian { std: f64 },
}

impl Likelihood {
    pub fn is_gaussian(&self) -> bool {
        matches!(self, Likelihood::Gaussian { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let Likelihood::Gaussian { std } = self {
            if !(*std > 0.0 && std.is_finite()) {
                return Err(Error::invalid(format!("gaussian std {std} must be positive")));
            }
        }
        Ok(())
    }
}

/// How much of the sequence the recognition model conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecognitionMode {
    /// `q(z_t | x_{0..=t})` (default).
    Causal,
    /// `q(z_t | x_{0..t})`: the recognition input is lagged one step.
    CausalLagged,
    /// `q(z_t | x_{0..T})` via a bidirectional recognition net.
    Bidirectional,
}

impl RecognitionMode {
    pub fn name(self) -> &'static str {
        match self {
            RecognitionMode::Causal => "causal",
            RecognitionMode::CausalLagged => "causal-lagged",
            RecognitionMode::Bidirectional => "bidirectional",
        }
    }
}

impl std::str::FromStr for RecognitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<RecognitionMode> {
        match s {
            "causal" => Ok(RecognitionMode::Causal),
            "causal-lagged" => Ok(RecognitionMode::CausalLagged),
            "bidirectional" => Ok(RecognitionMode::Bidirectional),
            other => Err(Error::config(format!("unknown recognition mode `{other}`"))),
        }
    }
}

/// Recognition network; the variant fixes the conditioning mode.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Recognition {
    Causal(RnnParams),
    CausalLagged(RnnParams),
    Bidirectional { fwd: RnnParams, bwd: RnnParams },
}

impl Recognition {
    pub fn mode(&self) -> RecognitionMode {
        match self {
            Recognition::Causal(_) => RecognitionMode::Causal,
            Recognition::CausalLagged(_) => RecognitionMode::CausalLagged,
            Recognition::Bidirectional { .. } => RecognitionMode::Bidirectional,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Recognition::Causal(p) | Recognition::CausalLagged(p) => p.output_dim(),
            Recognition::Bidirectional { fwd, .. } => fwd.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Recognition::Causal(p) | Recognition::CausalLagged(p) => p.input_dim(),
            Recognition::Bidirectional { fwd, .. } => fwd.input_dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Recognition::Causal(p) | Recognition::CausalLagged(p) => {
                p.validate()?;
                if p.f_y != Transfer::Identity {
                    return Err(Error::validation(
                        "recognition output transfer must be identity",
                    ));
                }
            }
            Recognition::Bidirectional { fwd, bwd } => {
                fwd.validate()?;
                bwd.validate()?;
                if fwd.f_y != Transfer::Identity || bwd.f_y != Transfer::Identity {
                    return Err(Error::validation(
                        "recognition output transfer must be identity",
                    ));
                }
                if fwd.output_dim() != bwd.output_dim() || fwd.input_dim() != bwd.input_dim() {
                    return Err(Error::validation(
                        "bidirectional recognition halves must share widths",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-timestep, per-latent statistics of the recognition Gaussian.
#[derive(Debug, Clone)]
pub struct PosteriorStats {
    /// `[T, B, latent]`
    pub mu: Tensor,
    /// `[T, B, latent]`, strictly positive.
    pub sigma: Tensor,
    /// `[T, B, latent]`: squared output plus the sigma floor; `sigma` is its
    /// exact square root.
    pub sigma_sq: Tensor,
}

/// Per-sequence decomposition of the variational bound.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub kl: Vec<f64>,
    pub recon_nll: Vec<f64>,
    /// `kl + recon_nll`, elementwise.
    pub bound: Vec<f64>,
    /// Mask-valid steps per sequence.
    pub steps: Vec<usize>,
}

impl BoundReport {
    pub fn batch_bound(&self) -> f64 {
        self.bound.iter().sum()
    }

    pub fn batch_kl(&self) -> f64 {
        self.kl.iter().sum()
    }

    pub fn batch_recon(&self) -> f64 {
        self.recon_nll.iter().sum()
    }

    pub fn mean_bound(&self) -> f64 {
        self.batch_bound() / self.bound.len() as f64
    }

    pub fn mean_kl(&self) -> f64 {
        self.batch_kl() / self.kl.len() as f64
    }

    pub fn mean_recon(&self) -> f64 {
        self.batch_recon() / self.recon_nll.len() as f64
    }

    /// Bound per mask-valid timestep across the batch.
    pub fn per_step_bound(&self) -> f64 {
        let n: usize = self.steps.iter().sum();
        self.batch_bound() / n as f64
    }
}

/// Generating RNN with a latent input map, plus the recognition model.
#[derive(Debug, Clone, PartialEq)]
pub struct StornModel {
    pub gen: RnnParams,
    /// `[latent, gen hidden]` latent-to-hidden input map.
    pub w_lat: Tensor,
    pub recog: Recognition,
    pub latent_dim: usize,
    pub likelihood: Likelihood,
    /// Probability clamp for the Bernoulli head.
    pub eps_prob: f64,
    /// Floor added to the squared recognition output inside the square root.
    pub eps_sigma: f64,
}

/// Hyperparameters for [`StornModel::init`].
#[derive(Debug, Clone)]
pub struct StornHyper {
    pub input: usize,
    pub hidden: usize,
    pub recog_hidden: usize,
    pub latent: usize,
    pub likelihood: Likelihood,
    pub recognition: RecognitionMode,
    /// Hidden transfer for both nets.
    pub transfer: Transfer,
    pub init: InitScheme,
}

impl StornModel {
    pub fn new(
        gen: RnnParams,
        w_lat: Tensor,
        recog: Recognition,
        latent_dim: usize,
        likelihood: Likelihood,
    ) -> Result<StornModel> {
        let model = StornModel {
            gen,
            w_lat,
            recog,
            latent_dim,
            likelihood,
            eps_prob: math::PROB_CLAMP,
            eps_sigma: math::SIGMA_FLOOR,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.recog.validate()?;
        self.likelihood.validate()?;
        if self.latent_dim == 0 {
            return Err(Error::validation("latent dimensionality must be positive"));
        }
        if self.w_lat.shape() != [self.latent_dim, self.gen.hidden_dim()] {
            return Err(Error::ShapeMismatch {
                op: "storn_w_lat",
                lhs: vec![self.latent_dim, self.gen.hidden_dim()],
                rhs: self.w_lat.shape().to_vec(),
            });
        }
        if self.recog.output_dim() != 2 * self.latent_dim {
            return Err(Error::validation(format!(
                "recognition output width {} must be exactly twice the latent dimension {}",
                self.recog.output_dim(),
                self.latent_dim
            )));
        }
        if self.recog.input_dim() != self.gen.input_dim() {
            return Err(Error::validation(
                "recognition and generating nets must read the same features",
            ));
        }
        if self.gen.output_dim() != self.gen.input_dim() {
            return Err(Error::validation(
                "generating net output width must match the observation width",
            ));
        }
        if matches!(self.likelihood, Likelihood::Bernoulli) && self.gen.f_y != Transfer::Logistic {
            return Err(Error::validation(
                "bernoulli likelihood needs a logistic output transfer",
            ));
        }
        if !(self.eps_prob > 0.0 && self.eps_prob < 0.5) {
            return Err(Error::validation("eps_prob out of range"));
        }
        if !self.eps_sigma.is_finite() || self.eps_sigma <= 0.0 {
            return Err(Error::validation("eps_sigma must be positive"));
        }
        Ok(())
    }

    /// Seeded initialization; the generating net, latent map, and
    /// recognition net draw from independent sub-seeds.
    pub fn init(h: &StornHyper, seed: u64) -> Result<StornModel> {
        let f_y_gen = match h.likelihood {
            Likelihood::Bernoulli => Transfer::Logistic,
            Likelihood::Gaussian { .. } => Transfer::Identity,
        };
        let gen = RnnParams::init(
            RnnDims {
                input: h.input,
                hidden: h.hidden,
                output: h.input,
            },
            h.init,
            sub_seed(seed, "init-gen"),
        )?
        .with_transfers(h.transfer, f_y_gen);
        let w_lat = match h.init {
            InitScheme::Zero => Tensor::zeros(vec![h.latent, h.hidden]),
            InitScheme::GlorotSpectral => {
                let bound = (6.0 / (h.latent + h.hidden) as f64).sqrt();
                let mut rng = crate::seed::stream_rng(sub_seed(seed, "init-lat"), 0);
                Tensor::from_fn(vec![h.latent, h.hidden], |_| {
                    (rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0) * bound
                })
            }
        };
        let recog_dims = RnnDims {
            input: h.input,
            hidden: h.recog_hidden,
            output: 2 * h.latent,
        };
        let recog = match h.recognition {
            RecognitionMode::Causal => Recognition::Causal(
                RnnParams::init(recog_dims, h.init, sub_seed(seed, "init-recog"))?
                    .with_transfers(h.transfer, Transfer::Identity),
            ),
            RecognitionMode::CausalLagged => Recognition::CausalLagged(
                RnnParams::init(recog_dims, h.init, sub_seed(seed, "init-recog"))?
                    .with_transfers(h.transfer, Transfer::Identity),
            ),
            RecognitionMode::Bidirectional => Recognition::Bidirectional {
                fwd: RnnParams::init(recog_dims, h.init, sub_seed(seed, "init-recog-fwd"))?
                    .with_transfers(h.transfer, Transfer::Identity),
                bwd: RnnParams::init(recog_dims, h.init, sub_seed(seed, "init-recog-bwd"))?
                    .with_transfers(h.transfer, Transfer::Identity),
            },
        };
        StornModel::new(gen, w_lat, recog, h.latent, h.likelihood)
    }

    pub fn input_dim(&self) -> usize {
        self.gen.input_dim()
    }

    /// Named parameter tensors in the order the optimizer walks them.
    pub fn to_params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        push_rnn(&mut set, "gen", &self.gen);
        set.push("gen.w_lat", self.w_lat.clone());
        match &self.recog {
            Recognition::Causal(p) | Recognition::CausalLagged(p) => {
                push_rnn(&mut set, "recog", p)
            }
            Recognition::Bidirectional { fwd, bwd } => {
                push_rnn(&mut set, "recog.fwd", fwd);
                push_rnn(&mut set, "recog.bwd", bwd);
            }
        }
        set
    }

    /// Rebuilds the model with tensors taken from `params` (same names and
    /// shapes as [`StornModel::to_params`]).
    pub fn with_params(&self, params: &ParamSet) -> Result<StornModel> {
        let mut model = self.clone();
        take_rnn(params, "gen", &mut model.gen)?;
        model.w_lat = params.take("gen.w_lat")?;
        match &mut model.recog {
            Recognition::Causal(p) | Recognition::CausalLagged(p) => take_rnn(params, "recog", p)?,
            Recognition::Bidirectional { fwd, bwd } => {
                take_rnn(params, "recog.fwd", fwd)?;
                take_rnn(params, "recog.bwd", bwd)?;
            }
        }
        model.validate()?;
        Ok(model)
    }

    /// Places all parameters on a tape, in `to_params` order.
    pub(crate) fn trace(&self, tape: &mut Tape, trainable: bool) -> (TracedStorn, Vec<ValueId>) {
        let mut order = Vec::new();
        let gen = trace_rnn(tape, &self.gen, trainable, &mut order);
        let w_lat = if trainable {
            tape.param(self.w_lat.clone())
        } else {
            tape.constant(self.w_lat.clone())
        };
        order.push(w_lat);
        let recog = match &self.recog {
            Recognition::Causal(p) => TracedRecog::Causal(trace_rnn(tape, p, trainable, &mut order)),
            Recognition::CausalLagged(p) => {
                TracedRecog::Lagged(trace_rnn(tape, p, trainable, &mut order))
            }
            Recognition::Bidirectional { fwd, bwd } => {
                let f = trace_rnn(tape, fwd, trainable, &mut order);
                let b = trace_rnn(tape, bwd, trainable, &mut order);
                TracedRecog::Bidirectional(f, b)
            }
        };
        (TracedStorn { gen, w_lat, recog }, order)
    }
}

fn push_rnn(set: &mut ParamSet, prefix: &str, p: &RnnParams) {
    set.push(format!("{prefix}.w_in"), p.w_in.clone());
    set.push(format!("{prefix}.w_rec"), p.w_rec.clone());
    set.push(format!("{prefix}.w_out"), p.w_out.clone());
    set.push(format!("{prefix}.b_hid"), p.b_hid.clone());
    set.push(format!("{prefix}.b_out"), p.b_out.clone());
}

fn take_rnn(set: &ParamSet, prefix: &str, p: &mut RnnParams) -> Result<()> {
    p.w_in = set.take(&format!("{prefix}.w_in"))?;
    p.w_rec = set.take(&format!("{prefix}.w_rec"))?;
    p.w_out = set.take(&format!("{prefix}.w_out"))?;
    p.b_hid = set.take(&format!("{prefix}.b_hid"))?;
    p.b_out = set.take(&format!("{prefix}.b_out"))?;
    Ok(())
}

fn trace_rnn(tape: &mut Tape, p: &RnnParams, trainable: bool, order: &mut Vec<ValueId>) -> TracedRnn {
    let traced = p.trace(tape, trainable);
    order.extend([traced.w_in, traced.w_rec, traced.w_out, traced.b_hid, traced.b_out]);
    traced
}

pub(crate) struct TracedStorn {
    pub gen: TracedRnn,
    pub w_lat: ValueId,
    pub recog: TracedRecog,
}

pub(crate) enum TracedRecog {
    Causal(TracedRnn),
    Lagged(TracedRnn),
    Bidirectional(TracedRnn, TracedRnn),
}

// ---------------------------------------------------------------------------
// Value-level operations.
// ---------------------------------------------------------------------------

/// Unmasked output pre-activations of a left-to-right pass (hidden state is
/// still gated by the mask).
fn forward_pre(p: &RnnParams, x: &SequenceBatch, shift: bool) -> Vec<Vec<Vec<f64>>> {
    let (t_len, b, gamma) = (x.steps(), x.batch_size(), p.hidden_dim());
    let zero_row = vec![0.0; x.features()];
    let mut pre_out = vec![vec![Vec::new(); b]; t_len];
    let mut h_prev = vec![vec![0.0; gamma]; b];
    for t in 0..t_len {
        for bi in 0..b {
            let x_row: &[f64] = if shift {
                if t == 0 {
                    &zero_row
                } else {
                    x.value_row(t - 1, bi)
                }
            } else {
                x.value_row(t, bi)
            };
            let m = x.mask_at(t, bi);
            let pre = cell_pre(x_row, None, &h_prev[bi], &p.w_in, &p.w_rec, &p.b_hid);
            let new: Vec<f64> = pre.iter().map(|&v| p.f_h.apply_scalar(v)).collect();
            let mut h = vec![0.0; gamma];
            mask_mix(&new, &h_prev[bi], m, &mut h);
            pre_out[t][bi] = cell_out_pre(&h, &p.w_out, &p.b_out);
            h_prev[bi] = h;
        }
    }
    pre_out
}

/// Unmasked output pre-activations of a right-to-left pass.
fn backward_pre(p: &RnnParams, x: &SequenceBatch) -> Vec<Vec<Vec<f64>>> {
    let (t_len, b, gamma) = (x.steps(), x.batch_size(), p.hidden_dim());
    let mut pre_out = vec![vec![Vec::new(); b]; t_len];
    let mut h_next = vec![vec![0.0; gamma]; b];
    for t in (0..t_len).rev() {
        for bi in 0..b {
            let m = x.mask_at(t, bi);
            let pre = cell_pre(x.value_row(t, bi), None, &h_next[bi], &p.w_in, &p.w_rec, &p.b_hid);
            let new: Vec<f64> = pre.iter().map(|&v| p.f_h.apply_scalar(v)).collect();
            let mut h = vec![0.0; gamma];
            mask_mix(&new, &h_next[bi], m, &mut h);
            pre_out[t][bi] = cell_out_pre(&h, &p.w_out, &p.b_out);
            h_next[bi] = h;
        }
    }
    pre_out
}

/// Runs the recognition net and converts its outputs into posterior
/// statistics: `mu_k = y_k`, `sigma_k = sqrt(y_{k+latent}^2 + eps_sigma)`.
pub fn recognition_forward(model: &StornModel, x: &SequenceBatch) -> Result<PosteriorStats> {
    model.validate()?;
    if x.features() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "recognition_forward",
            lhs: vec![model.input_dim()],
            rhs: x.values().shape().to_vec(),
        });
    }
    let (t_len, b, lambda) = (x.steps(), x.batch_size(), model.latent_dim);
    let y: Vec<Vec<Vec<f64>>> = match &model.recog {
        Recognition::Causal(p) => forward_pre(p, x, false),
        Recognition::CausalLagged(p) => forward_pre(p, x, true),
        Recognition::Bidirectional { fwd, bwd } => {
            let f = forward_pre(fwd, x, false);
            let back = backward_pre(bwd, x);
            f.into_iter()
                .zip(back)
                .map(|(ft, bt)| {
                    ft.into_iter()
                        .zip(bt)
                        .map(|(fr, br)| fr.iter().zip(&br).map(|(a, b)| a + b).collect())
                        .collect()
                })
                .collect()
        }
    };
    let mut mu = Tensor::zeros(vec![t_len, b, lambda]);
    let mut sigma = Tensor::zeros(vec![t_len, b, lambda]);
    let mut sigma_sq = Tensor::zeros(vec![t_len, b, lambda]);
    for t in 0..t_len {
        for bi in 0..b {
            for k in 0..lambda {
                let idx = (t * b + bi) * lambda + k;
                mu.data_mut()[idx] = y[t][bi][k];
                let pre = y[t][bi][lambda + k];
                let s2 = pre * pre + model.eps_sigma;
                sigma_sq.data_mut()[idx] = s2;
                sigma.data_mut()[idx] = s2.sqrt();
            }
        }
    }
    Ok(PosteriorStats { mu, sigma, sigma_sq })
}

/// Reparametrized sampling: `z = mu + sigma * eps`, deterministic given
/// `eps`.
pub fn sample_latents(stats: &PosteriorStats, eps: &Tensor) -> Result<Tensor> {
    if eps.shape() != stats.mu.shape() {
        return Err(Error::ShapeMismatch {
            op: "sample_latents",
            lhs: stats.mu.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    stats.mu.add(&stats.sigma.mul(eps)?)
}

/// Teacher-forced predictive outputs: entry `t` parameterizes the
/// distribution of `x_t`. Shared by the STORN generative pass (with
/// latents) and the plain sRNN (without).
fn teacher_forced_outputs(
    p: &RnnParams,
    lat: Option<(&Tensor, &Tensor)>,
    x: &SequenceBatch,
) -> Result<Tensor> {
    let (t_len, b, gamma, omega) = (x.steps(), x.batch_size(), p.hidden_dim(), p.output_dim());
    let zero_row = vec![0.0; x.features()];
    let mut outputs = Tensor::zeros(vec![t_len, b, omega]);
    let mut h_prev = vec![vec![0.0; gamma]; b];
    let lambda = lat.map(|(w, _)| w.shape()[0]).unwrap_or(0);
    for t in 0..t_len {
        for bi in 0..b {
            let x_row: &[f64] = if t == 0 { &zero_row } else { x.value_row(t - 1, bi) };
            let z_row = lat.map(|(w, z)| {
                let base = (t * b + bi) * lambda;
                (&z.data()[base..base + lambda], w)
            });
            let m = x.mask_at(t, bi);
            let pre = cell_pre(x_row, z_row, &h_prev[bi], &p.w_in, &p.w_rec, &p.b_hid);
            let new: Vec<f64> = pre.iter().map(|&v| p.f_h.apply_scalar(v)).collect();
            let mut h = vec![0.0; gamma];
            mask_mix(&new, &h_prev[bi], m, &mut h);
            let out_pre = cell_out_pre(&h, &p.w_out, &p.b_out);
            for (j, &v) in out_pre.iter().enumerate() {
                outputs.data_mut()[(t * b + bi) * omega + j] = m * p.f_y.apply_scalar(v);
            }
            h_prev[bi] = h;
        }
    }
    Ok(outputs)
}

/// Latent-augmented generative pass: per-step likelihood parameters for the
/// one-step-ahead prediction, `[T, B, features]`.
pub fn generative_forward(model: &StornModel, x: &SequenceBatch, z: &Tensor) -> Result<Tensor> {
    if z.shape() != [x.steps(), x.batch_size(), model.latent_dim] {
        return Err(Error::ShapeMismatch {
            op: "generative_forward",
            lhs: vec![x.steps(), x.batch_size(), model.latent_dim],
            rhs: z.shape().to_vec(),
        });
    }
    if x.features() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "generative_forward",
            lhs: vec![model.input_dim()],
            rhs: x.values().shape().to_vec(),
        });
    }
    teacher_forced_outputs(&model.gen, Some((&model.w_lat, z)), x)
}

/// Closed-form KL from the recognition Gaussian to the standard-normal
/// prior, summed over masked steps and latent channels per sequence.
pub fn kl_standard_normal(stats: &PosteriorStats, mask: &Tensor) -> Result<Vec<f64>> {
    let (t_len, b, _) = stats.mu.dims3()?;
    if mask.shape() != [t_len, b] {
        return Err(Error::ShapeMismatch {
            op: "kl_standard_normal",
            lhs: stats.mu.shape().to_vec(),
            rhs: mask.shape().to_vec(),
        });
    }
    let mut acc = vec![0.0; b];
    for t in 0..t_len {
        let mu = stats.mu.plane(t)?;
        let s2 = stats.sigma_sq.plane(t)?;
        let m = &mask.data()[t * b..(t + 1) * b];
        for (a, v) in acc.iter_mut().zip(math::kl_std_normal_rows(&mu, &s2, m)) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Reconstruction NLL of `x` under per-step likelihood parameters.
pub fn likelihood_nll(model_like: Likelihood, eps_prob: f64, outputs: &Tensor, x: &SequenceBatch) -> Result<MaskedLoss> {
    match model_like {
        Likelihood::Bernoulli => math::bernoulli_nll(outputs, x.values(), x.mask(), eps_prob),
        Likelihood::Gaussian { std } => {
            math::gaussian_nll(outputs, math::GaussianStd::Fixed(std), x.values(), x.mask())
        }
    }
}

/// Single-sample estimate of the variational bound, differentiable in the
/// traced variant and deterministic given `eps`.
pub fn storn_bound(model: &StornModel, x: &SequenceBatch, eps: &Tensor) -> Result<BoundReport> {
    let stats = recognition_forward(model, x)?;
    let z = sample_latents(&stats, eps)?;
    let outputs = generative_forward(model, x, &z)?;
    let recon = likelihood_nll(model.likelihood, model.eps_prob, &outputs, x)?;
    let kl = kl_standard_normal(&stats, x.mask())?;
    let bound: Vec<f64> = kl.iter().zip(&recon.per_sequence).map(|(a, b)| a + b).collect();
    Ok(BoundReport {
        kl,
        recon_nll: recon.per_sequence,
        bound,
        steps: recon.steps,
    })
}

// ---------------------------------------------------------------------------
// The factorized-output baseline: a simple RNN without latent inputs.
// ---------------------------------------------------------------------------

/// Simple RNN sequence model predicting `x_t` from `x_{0..t}`, with a
/// factorized output likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct SrnnModel {
    pub params: RnnParams,
    pub likelihood: Likelihood,
    pub eps_prob: f64,
}

impl SrnnModel {
    pub fn new(params: RnnParams, likelihood: Likelihood) -> Result<SrnnModel> {
        let model = SrnnModel {
            params,
            likelihood,
            eps_prob: math::PROB_CLAMP,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.likelihood.validate()?;
        if self.params.output_dim() != self.params.input_dim() {
            return Err(Error::validation(
                "sRNN output width must match the observation width",
            ));
        }
        if matches!(self.likelihood, Likelihood::Bernoulli)
            && self.params.f_y != Transfer::Logistic
        {
            return Err(Error::validation(
                "bernoulli likelihood needs a logistic output transfer",
            ));
        }
        Ok(())
    }

    pub fn init(
        input: usize,
        hidden: usize,
        likelihood: Likelihood,
        transfer: Transfer,
        scheme: InitScheme,
        seed: u64,
    ) -> Result<SrnnModel> {
        let f_y = match likelihood {
            Likelihood::Bernoulli => Transfer::Logistic,
            Likelihood::Gaussian { .. } => Transfer::Identity,
        };
        let params = RnnParams::init(
            RnnDims {
                input,
                hidden,
                output: input,
            },
            scheme,
            sub_seed(seed, "init-gen"),
        )?
        .with_transfers(transfer, f_y);
        SrnnModel::new(params, likelihood)
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn to_params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        push_rnn(&mut set, "gen", &self.params);
        set
    }

    pub fn with_params(&self, params: &ParamSet) -> Result<SrnnModel> {
        let mut model = self.clone();
        take_rnn(params, "gen", &mut model.params)?;
        model.validate()?;
        Ok(model)
    }
}

/// Predictive likelihood parameters of the sRNN, `[T, B, features]`.
pub fn srnn_outputs(model: &SrnnModel, x: &SequenceBatch) -> Result<Tensor> {
    if x.features() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "srnn_outputs",
            lhs: vec![model.input_dim()],
            rhs: x.values().shape().to_vec(),
        });
    }
    teacher_forced_outputs(&model.params, None, x)
}

/// Exact negative log-likelihood of the sRNN.
pub fn srnn_nll(model: &SrnnModel, x: &SequenceBatch) -> Result<MaskedLoss> {
    let outputs = srnn_outputs(model, x)?;
    likelihood_nll(model.likelihood, model.eps_prob, &outputs, x)
}

// ---------------------------------------------------------------------------
// Traced objectives, used by the training loop and the gradient checks.
// ---------------------------------------------------------------------------

/// Traced loss pieces: per-sequence vectors plus the scalar batch-mean loss.
pub(crate) struct TracedObjective {
    pub kl: Option<ValueId>,
    pub recon: ValueId,
    pub bound: ValueId,
    pub loss: ValueId,
}

fn accumulate_steps(tape: &mut Tape, steps: Vec<ValueId>) -> Result<ValueId> {
    let mut iter = steps.into_iter();
    let mut acc = iter.next().ok_or_else(|| Error::invalid("no steps"))?;
    for s in iter {
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

fn traced_recognition(
    tape: &mut Tape,
    tm: &TracedStorn,
    model: &StornModel,
    x: &SequenceBatch,
) -> Result<(Vec<ValueId>, Vec<ValueId>, Vec<ValueId>)> {
    let lambda = model.latent_dim;
    let pre: Vec<ValueId> = match &tm.recog {
        TracedRecog::Causal(p) => rnn_steps_traced(tape, p, x, false, None, None)?.out_pre,
        TracedRecog::Lagged(p) => rnn_steps_traced(tape, p, x, true, None, None)?.out_pre,
        TracedRecog::Bidirectional(f, bwd) => {
            let fwd_pre = rnn_steps_traced(tape, f, x, false, None, None)?.out_pre;
            let bwd_pre = rnn_steps_traced_reverse(tape, bwd, x)?;
            fwd_pre
                .into_iter()
                .zip(bwd_pre)
                .map(|(a, b)| tape.add(a, b))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut mu = Vec::with_capacity(pre.len());
    let mut sigma = Vec::with_capacity(pre.len());
    let mut sigma_sq = Vec::with_capacity(pre.len());
    for y in pre {
        mu.push(tape.slice_cols(y, 0, lambda)?);
        let tail = tape.slice_cols(y, lambda, 2 * lambda)?;
        let sq = tape.square(tail);
        let s2 = tape.add_const(sq, model.eps_sigma);
        sigma_sq.push(s2);
        sigma.push(tape.sqrt(s2));
    }
    Ok((mu, sigma, sigma_sq))
}

fn traced_likelihood_steps(
    tape: &mut Tape,
    model_like: Likelihood,
    eps_prob: f64,
    outputs: &[ValueId],
    x: &SequenceBatch,
) -> Result<Vec<ValueId>> {
    outputs
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let targets = x.step_values(t);
            match model_like {
                Likelihood::Bernoulli => {
                    tape.bernoulli_nll_step(y, &targets, x.step_mask(t), eps_prob)
                }
                Likelihood::Gaussian { std } => {
                    tape.gaussian_nll_step(y, &targets, std, x.step_mask(t))
                }
            }
        })
        .collect()
}

/// Traced single-sample bound; `eps` enters as a constant, so the result is
/// a deterministic differentiable function of the parameters.
pub(crate) fn storn_bound_traced(
    tape: &mut Tape,
    tm: &TracedStorn,
    model: &StornModel,
    x: &SequenceBatch,
    eps: &Tensor,
) -> Result<TracedObjective> {
    let (t_len, b) = (x.steps(), x.batch_size());
    if eps.shape() != [t_len, b, model.latent_dim] {
        return Err(Error::ShapeMismatch {
            op: "storn_bound_traced",
            lhs: vec![t_len, b, model.latent_dim],
            rhs: eps.shape().to_vec(),
        });
    }
    let (mu, sigma, sigma_sq) = traced_recognition(tape, tm, model, x)?;
    let mut zs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let e = tape.constant(eps.plane(t)?);
        let scaled = tape.mul_elem(sigma[t], e)?;
        zs.push(tape.add(mu[t], scaled)?);
    }
    let steps = rnn_steps_traced(tape, &tm.gen, x, true, Some((tm.w_lat, &zs)), None)?;
    let outputs = crate::rnn::traced_outputs(tape, tm.gen.f_y, &steps.out_pre, x)?;
    let nll_steps = traced_likelihood_steps(tape, model.likelihood, model.eps_prob, &outputs, x)?;
    let recon = accumulate_steps(tape, nll_steps)?;
    let kl_steps: Vec<ValueId> = (0..t_len)
        .map(|t| tape.kl_std_normal_step(mu[t], sigma_sq[t], x.step_mask(t)))
        .collect::<Result<Vec<_>>>()?;
    let kl = accumulate_steps(tape, kl_steps)?;
    let bound = tape.add(kl, recon)?;
    let loss = tape.mean_vec(bound)?;
    Ok(TracedObjective {
        kl: Some(kl),
        recon,
        bound,
        loss,
    })
}

/// Traced exact NLL of the sRNN baseline.
pub(crate) fn srnn_nll_traced(
    tape: &mut Tape,
    traced: &TracedRnn,
    model: &SrnnModel,
    x: &SequenceBatch,
) -> Result<TracedObjective> {
    let steps = rnn_steps_traced(tape, traced, x, true, None, None)?;
    let outputs = crate::rnn::traced_outputs(tape, traced.f_y, &steps.out_pre, x)?;
    let nll_steps = traced_likelihood_steps(tape, model.likelihood, model.eps_prob, &outputs, x)?;
    let recon = accumulate_steps(tape, nll_steps)?;
    let loss = tape.mean_vec(recon)?;
    Ok(TracedObjective {
        kl: None,
        recon,
        bound: recon,
        loss,
    })
}

pub(crate) fn trace_srnn(
    model: &SrnnModel,
    tape: &mut Tape,
    trainable: bool,
) -> (TracedRnn, Vec<ValueId>) {
    let mut order = Vec::new();
    let traced = trace_rnn(tape, &model.params, trainable, &mut order);
    (traced, order)
}

/// Reverse-mode gradients of the batch-mean bound (eps fixed) with respect
/// to every parameter, in `to_params` order.
pub fn storn_batch_mean_grads(
    model: &StornModel,
    x: &SequenceBatch,
    eps: &Tensor,
) -> Result<ParamSet> {
    let mut tape = Tape::new();
    let (tm, ids) = model.trace(&mut tape, true);
    let obj = storn_bound_traced(&mut tape, &tm, model, x, eps)?;
    let grads = tape.backward(obj.loss)?;
    Ok(model
        .to_params()
        .iter()
        .zip(&ids)
        .map(|((n, t), &id)| (n.to_string(), grads.get_or_zeros(id, t.shape())))
        .collect())
}

/// Reverse-mode gradients of the batch-mean sRNN NLL, in `to_params` order.
pub fn srnn_batch_mean_grads(model: &SrnnModel, x: &SequenceBatch) -> Result<ParamSet> {
    let mut tape = Tape::new();
    let (traced, ids) = trace_srnn(model, &mut tape, true);
    let obj = srnn_nll_traced(&mut tape, &traced, model, x)?;
    let grads = tape.backward(obj.loss)?;
    Ok(model
        .to_params()
        .iter()
        .zip(&ids)
        .map(|((n, t), &id)| (n.to_string(), grads.get_or_zeros(id, t.shape())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use rand_distr::Distribution;

    fn small_model(seed: u64, mode: RecognitionMode, likelihood: Likelihood) -> StornModel {
        StornModel::init(
            &StornHyper {
                input: 2,
                hidden: 3,
                recog_hidden: 3,
                latent: 2,
                likelihood,
                recognition: mode,
                transfer: Transfer::Tanh,
                init: InitScheme::GlorotSpectral,
            },
            seed,
        )
        .unwrap()
    }

    fn real_batch(seed: u64, t: usize, b: usize, k: usize) -> SequenceBatch {
        let mut rng = stream_rng(seed, 0);
        let dist = rand_distr::StandardNormal;
        let values = Tensor::from_fn(vec![t, b, k], |_| {
            let v: f64 = dist.sample(&mut rng);
            v
        });
        SequenceBatch::new(values, Tensor::filled(vec![t, b], 1.0)).unwrap()
    }

    fn binary_batch(seed: u64, t: usize, b: usize, k: usize) -> SequenceBatch {
        let mut rng = stream_rng(seed, 0);
        let values = Tensor::from_fn(vec![t, b, k], |_| {
            if rand::Rng::random::<bool>(&mut rng) {
                1.0
            } else {
                0.0
            }
        });
        SequenceBatch::new(values, Tensor::filled(vec![t, b], 1.0)).unwrap()
    }

    fn eps_for(model: &StornModel, x: &SequenceBatch, seed: u64) -> Tensor {
        let mut rng = stream_rng(seed, 1);
        let dist = rand_distr::StandardNormal;
        Tensor::from_fn(vec![x.steps(), x.batch_size(), model.latent_dim], |_| {
            let v: f64 = dist.sample(&mut rng);
            v
        })
    }

    #[test]
    fn degenerate_recognition_gives_prior_floor() {
        let mut model = small_model(1, RecognitionMode::Causal, Likelihood::Gaussian { std: 1.0 });
        if let Recognition::Causal(p) = &mut model.recog {
            *p = RnnParams::init(
                RnnDims { input: 2, hidden: 3, output: 4 },
                InitScheme::Zero,
                0,
            )
            .unwrap()
            .with_transfers(Transfer::Tanh, Transfer::Identity);
        }
        let x = real_batch(3, 4, 2, 2);
        let stats = recognition_forward(&model, &x).unwrap();
        assert!(stats.mu.data().iter().all(|&v| v == 0.0));
        let floor = math::SIGMA_FLOOR.sqrt();
        assert!(stats.sigma.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn sigma_is_sign_invariant() {
        let model = small_model(5, RecognitionMode::Causal, Likelihood::Gaussian { std: 1.0 });
        let x = real_batch(7, 3, 1, 2);
        let stats = recognition_forward(&model, &x).unwrap();
        // Negating the sigma-head output columns leaves sigma unchanged.
        let mut negated = model.clone();
        if let Recognition::Causal(p) = &mut negated.recog {
            let (gamma, width) = p.w_out.dims2().unwrap();
            let lambda = width / 2;
            for g in 0..gamma {
                for k in lambda..width {
                    p.w_out.data_mut()[g * width + k] *= -1.0;
                }
            }
            for k in lambda..width {
                p.b_out.data_mut()[k] *= -1.0;
            }
        }
        let flipped = recognition_forward(&negated, &x).unwrap();
        assert_eq!(stats.sigma.data(), flipped.sigma.data());
        assert_eq!(stats.mu.data(), flipped.mu.data());
    }

    #[test]
    fn recognition_single_unit_hand_case() {
        // 1-unit causal recognition evaluated by hand in extended precision:
        // w_in=0.9, w_rec=0.2, b_h=-0.1, logistic hidden;
        // w_out=[0.7, -1.1], b_out=[0, 0.4], x=[1.0, 0.5], eps_sigma=1e-6.
        let recog = RnnParams {
            w_in: Tensor::from_vec(vec![1, 1], vec![0.9]).unwrap(),
            w_rec: Tensor::from_vec(vec![1, 1], vec![0.2]).unwrap(),
            w_out: Tensor::from_vec(vec![1, 2], vec![0.7, -1.1]).unwrap(),
            b_hid: Tensor::from_vec(vec![1], vec![-0.1]).unwrap(),
            b_out: Tensor::from_vec(vec![2], vec![0.0, 0.4]).unwrap(),
            f_h: Transfer::Logistic,
            f_y: Transfer::Identity,
        };
        let gen = RnnParams {
            w_in: Tensor::from_vec(vec![1, 1], vec![0.0]).unwrap(),
            w_rec: Tensor::from_vec(vec![1, 1], vec![0.0]).unwrap(),
            w_out: Tensor::from_vec(vec![1, 1], vec![0.0]).unwrap(),
            b_hid: Tensor::zeros(vec![1]),
            b_out: Tensor::zeros(vec![1]),
            f_h: Transfer::Tanh,
            f_y: Transfer::Identity,
        };
        let model = StornModel::new(
            gen,
            Tensor::zeros(vec![1, 1]),
            Recognition::Causal(recog),
            1,
            Likelihood::Gaussian { std: 1.0 },
        )
        .unwrap();
        let values = Tensor::from_vec(vec![2, 1, 1], vec![1.0, 0.5]).unwrap();
        let x = SequenceBatch::new(values, Tensor::filled(vec![2, 1], 1.0)).unwrap();
        let stats = recognition_forward(&model, &x).unwrap();
        assert!((stats.mu.data()[0] - 0.4829821367893287).abs() < 1e-15);
        assert!((stats.sigma.data()[0] - 0.358973322104242).abs() < 1e-15);
        assert!((stats.mu.data()[1] - 0.4337437772576819).abs() < 1e-15);
        assert!((stats.sigma.data()[1] - 0.2815991398412748).abs() < 1e-15);
    }

    #[test]
    fn sample_latents_zero_eps_is_map() {
        let model = small_model(2, RecognitionMode::Causal, Likelihood::Gaussian { std: 1.0 });
        let x = real_batch(11, 3, 2, 2);
        let stats = recognition_forward(&model, &x).unwrap();
        let eps = Tensor::zeros(vec![3, 2, 2]);
        let z = sample_latents(&stats, &eps).unwrap();
        assert_eq!(z.data(), stats.mu.data());
    }

    #[test]
    fn sample_latents_monte_carlo_moments() {
        // Empirical mean/std of 1e5 reparametrized draws at mu=1, sigma=2.
        let stats = PosteriorStats {
            mu: Tensor::filled(vec![1, 1, 1], 1.0),
            sigma: Tensor::filled(vec![1, 1, 1], 2.0),
            sigma_sq: Tensor::filled(vec![1, 1, 1], 4.0),
        };
        let mut rng = stream_rng(99, 0);
        let dist = rand_distr::StandardNormal;
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let e: f64 = dist.sample(&mut rng);
            let eps = Tensor::from_vec(vec![1, 1, 1], vec![e]).unwrap();
            let z = sample_latents(&stats, &eps).unwrap().data()[0];
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).sqrt();
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((std - 2.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn zero_latent_map_reduces_to_srnn() {
        let mut model = small_model(4, RecognitionMode::Causal, Likelihood::Bernoulli);
        model.gen.f_y = Transfer::Logistic;
        model.w_lat = Tensor::zeros(vec![2, 3]);
        let x = binary_batch(13, 5, 3, 2);
        let eps_a = eps_for(&model, &x, 1);
        let eps_b = eps_for(&model, &x, 2);

        let srnn = SrnnModel::new(model.gen.clone(), Likelihood::Bernoulli).unwrap();
        let srnn_out = srnn_outputs(&srnn, &x).unwrap();

        let za = sample_latents(&recognition_forward(&model, &x).unwrap(), &eps_a).unwrap();
        let zb = sample_latents(&recognition_forward(&model, &x).unwrap(), &eps_b).unwrap();
        let out_a = generative_forward(&model, &x, &za).unwrap();
        let out_b = generative_forward(&model, &x, &zb).unwrap();
        assert_eq!(out_a.data(), out_b.data(), "outputs must not depend on eps");
        assert_eq!(out_a.data(), srnn_out.data(), "must equal the sRNN outputs");

        let nll = srnn_nll(&srnn, &x).unwrap();
        let ra = storn_bound(&model, &x, &eps_a).unwrap();
        let rb = storn_bound(&model, &x, &eps_b).unwrap();
        assert_eq!(ra.recon_nll, rb.recon_nll, "recon NLL must be eps-independent");
        assert_eq!(ra.recon_nll, nll.per_sequence);
    }

    #[test]
    fn autonomous_rollout_is_constant_without_recurrence() {
        // x = 0, z = 0, and W_rec = 0: every step sees the same inputs, so
        // the output sequence is constant.
        let mut model = small_model(6, RecognitionMode::Causal, Likelihood::Gaussian { std: 1.0 });
        model.gen.w_rec = Tensor::zeros(vec![3, 3]);
        let x = SequenceBatch::new(
            Tensor::zeros(vec![4, 1, 2]),
            Tensor::filled(vec![4, 1], 1.0),
        )
        .unwrap();
        let z = Tensor::zeros(vec![4, 1, 2]);
        let out = generative_forward(&model, &x, &z).unwrap();
        for t in 1..4 {
            assert_eq!(out.plane(t).unwrap().data(), out.plane(0).unwrap().data());
        }
    }

    #[test]
    fn generative_single_unit_hand_case() {
        // Scalar generative net evaluated by hand in extended precision:
        // w_in=0.6, w_lat=0.8, w_rec=-0.4, b_h=0.05, w_out=1.5, b_out=0.1,
        // tanh hidden, identity output, x=[0.5, -1.0], z=[0.3, -0.2].
        let gen = RnnParams {
            w_in: Tensor::from_vec(vec![1, 1], vec![0.6]).unwrap(),
            w_rec: Tensor::from_vec(vec![1, 1], vec![-0.4]).unwrap(),
            w_out: Tensor::from_vec(vec![1, 1], vec![1.5]).unwrap(),
            b_hid: Tensor::from_vec(vec![1], vec![0.05]).unwrap(),
            b_out: Tensor::from_vec(vec![1], vec![0.1]).unwrap(),
            f_h: Transfer::Tanh,
            f_y: Transfer::Identity,
        };
        let recog = RnnParams::init(
            RnnDims { input: 1, hidden: 1, output: 2 },
            InitScheme::Zero,
            0,
        )
        .unwrap()
        .with_transfers(Transfer::Tanh, Transfer::Identity);
        let model = StornModel::new(
            gen,
            Tensor::from_vec(vec![1, 1], vec![0.8]).unwrap(),
            Recognition::Causal(recog),
            1,
            Likelihood::Gaussian { std: 1.0 },
        )
        .unwrap();
        let x = SequenceBatch::new(
            Tensor::from_vec(vec![2, 1, 1], vec![0.5, -1.0]).unwrap(),
            Tensor::filled(vec![2, 1], 1.0),
        )
        .unwrap();
        let z = Tensor::from_vec(vec![2, 1, 1], vec![0.3, -0.2]).unwrap();
        let out = generative_forward(&model, &x, &z).unwrap();
        assert!((out.data()[0] - 0.5232022190044512).abs() < 1e-15);
        assert!((out.data()[1] - 0.215490089512706).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form_values() {
        // mu=0, sigma=1 -> 0; mu=1, sigma=1 -> 0.5;
        // mu=0, sigma=2 -> 0.5 (4 - ln 4 - 1) = 0.8068528194400547.
        let mk = |mu: f64, s2: f64| PosteriorStats {
            mu: Tensor::filled(vec![1, 1, 1], mu),
            sigma: Tensor::filled(vec![1, 1, 1], s2.sqrt()),
            sigma_sq: Tensor::filled(vec![1, 1, 1], s2),
        };
        let mask = Tensor::filled(vec![1, 1], 1.0);
        assert_eq!(kl_standard_normal(&mk(0.0, 1.0), &mask).unwrap()[0], 0.0);
        assert!((kl_standard_normal(&mk(1.0, 1.0), &mask).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!(
            (kl_standard_normal(&mk(0.0, 4.0), &mask).unwrap()[0] - 0.8068528194400547).abs()
                < 1e-15
        );
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_prior() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..200 {
            let mu = rand::Rng::random_range(&mut rng, -3.0..3.0);
            let sigma: f64 = rand::Rng::random_range(&mut rng, 0.3..3.0);
            let stats = PosteriorStats {
                mu: Tensor::filled(vec![1, 1, 1], mu),
                sigma: Tensor::filled(vec![1, 1, 1], sigma),
                sigma_sq: Tensor::filled(vec![1, 1, 1], sigma * sigma),
            };
            let mask = Tensor::filled(vec![1, 1], 1.0);
            let kl = kl_standard_normal(&stats, &mask).unwrap()[0];
            assert!(kl >= 0.0);
            if (mu.abs() > 0.05) || ((sigma - 1.0).abs() > 0.05) {
                assert!(kl > 0.0);
            }
        }
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q - log p] over 1e5 draws, within 3 standard errors.
        let mut rng = stream_rng(17, 0);
        let dist = rand_distr::StandardNormal;
        for case in 0..5 {
            let mu: f64 = rand::Rng::random_range(&mut rng, -2.0..2.0);
            let sigma: f64 = rand::Rng::random_range(&mut rng, 0.3..3.0);
            let closed = 0.5 * (mu * mu + sigma * sigma - (sigma * sigma).ln() - 1.0);
            let n = 100_000;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n {
                let e: f64 = dist.sample(&mut rng);
                let z = mu + sigma * e;
                // log q(z) - log p(z) with q = N(mu, sigma^2), p = N(0,1).
                let lq = -0.5 * e * e - sigma.ln();
                let lp = -0.5 * z * z;
                let d = lq - lp;
                sum += d;
                sum_sq += d * d;
            }
            let mean = sum / n as f64;
            let var = sum_sq / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - closed).abs() <= 3.0 * se + 1e-12,
                "case {case}: mc {mean} vs closed {closed} (se {se})"
            );
        }
    }

    #[test]
    fn bound_is_kl_plus_recon_exactly() {
        for mode in [
            RecognitionMode::Causal,
            RecognitionMode::CausalLagged,
            RecognitionMode::Bidirectional,
        ] {
            let model = small_model(8, mode, Likelihood::Gaussian { std: 0.8 });
            let x = real_batch(23, 4, 3, 2);
            let eps = eps_for(&model, &x, 5);
            let report = storn_bound(&model, &x, &eps).unwrap();
            for i in 0..3 {
                assert_eq!(report.bound[i], report.kl[i] + report.recon_nll[i]);
                assert!(report.kl[i] >= 0.0);
            }
        }
    }

    #[test]
    fn exact_prior_recognition_gives_zero_kl() {
        // sigma-head bias sqrt(1 - eps_sigma) makes sigma exactly 1, so the
        // KL vanishes exactly and the bound equals the sRNN NLL.
        let mut model = small_model(9, RecognitionMode::Causal, Likelihood::Bernoulli);
        model.gen.f_y = Transfer::Logistic;
        model.w_lat = Tensor::zeros(vec![2, 3]);
        if let Recognition::Causal(p) = &mut model.recog {
            *p = RnnParams::init(
                RnnDims { input: 2, hidden: 3, output: 4 },
                InitScheme::Zero,
                0,
            )
            .unwrap()
            .with_transfers(Transfer::Tanh, Transfer::Identity);
            let head = (1.0 - model.eps_sigma).sqrt();
            p.b_out = Tensor::from_vec(vec![4], vec![0.0, 0.0, head, head]).unwrap();
        }
        let x = binary_batch(31, 6, 2, 2);
        let eps = eps_for(&model, &x, 3);
        let report = storn_bound(&model, &x, &eps).unwrap();
        let srnn = SrnnModel::new(model.gen.clone(), Likelihood::Bernoulli).unwrap();
        let nll = srnn_nll(&srnn, &x).unwrap();
        for i in 0..2 {
            assert_eq!(report.kl[i], 0.0);
            assert_eq!(report.bound[i], nll.per_sequence[i]);
        }
    }

    #[test]
    fn causal_stats_ignore_the_future() {
        let model = small_model(10, RecognitionMode::Causal, Likelihood::Gaussian { std: 1.0 });
        let x = real_batch(37, 4, 1, 2);
        let stats = recognition_forward(&model, &x).unwrap();
        let mut v = x.values().clone();
        let k = x.features();
        for j in 0..k {
            v.data_mut()[3 * k + j] += 0.7;
        }
        let x2 = SequenceBatch::new(v, x.mask().clone()).unwrap();
        let stats2 = recognition_forward(&model, &x2).unwrap();
        for t in 0..3 {
            assert_eq!(
                stats.mu.plane(t).unwrap().data(),
                stats2.mu.plane(t).unwrap().data()
            );
        }
        assert_ne!(
            stats.mu.plane(3).unwrap().data(),
            stats2.mu.plane(3).unwrap().data()
        );
    }

    #[test]
    fn lagged_stats_ignore_the_present() {
        let model = small_model(
            12,
            RecognitionMode::CausalLagged,
            Likelihood::Gaussian { std: 1.0 },
        );
        let x = real_batch(41, 4, 1, 2);
        let stats = recognition_forward(&model, &x).unwrap();
        let mut v = x.values().clone();
        let k = x.features();
        for j in 0..k {
            v.data_mut()[3 * k + j] += 0.7; // last step
        }
        let x2 = SequenceBatch::new(v, x.mask().clone()).unwrap();
        let stats2 = recognition_forward(&model, &x2).unwrap();
        // Lagged conditioning: even the stats at the perturbed step are
        // unchanged, because z_t sees only x_{0..t}.
        assert_eq!(stats.mu.data(), stats2.mu.data());
    }

    #[test]
    fn traced_bound_matches_value_bound() {
        for (seed, mode, like) in [
            (101, RecognitionMode::Causal, Likelihood::Bernoulli),
            (102, RecognitionMode::CausalLagged, Likelihood::Gaussian { std: 0.7 }),
            (103, RecognitionMode::Bidirectional, Likelihood::Gaussian { std: 1.3 }),
        ] {
            let mut model = small_model(seed, mode, like);
            if matches!(like, Likelihood::Bernoulli) {
                model.gen.f_y = Transfer::Logistic;
            }
            let x = match like {
                Likelihood::Bernoulli => binary_batch(seed + 1, 5, 3, 2),
                _ => real_batch(seed + 1, 5, 3, 2),
            };
            let eps = eps_for(&model, &x, seed + 2);
            let value = storn_bound(&model, &x, &eps).unwrap();

            let mut tape = Tape::new();
            let (tm, _) = model.trace(&mut tape, true);
            let traced = storn_bound_traced(&mut tape, &tm, &model, &x, &eps).unwrap();
            assert_eq!(tape.value(traced.bound).data(), &value.bound[..]);
            assert_eq!(tape.value(traced.recon).data(), &value.recon_nll[..]);
            assert_eq!(tape.value(traced.kl.unwrap()).data(), &value.kl[..]);
        }
    }

    #[test]
    fn traced_srnn_matches_value_nll() {
        let model = SrnnModel::init(
            2,
            4,
            Likelihood::Bernoulli,
            Transfer::Logistic,
            InitScheme::GlorotSpectral,
            51,
        )
        .unwrap();
        let x = binary_batch(52, 6, 3, 2);
        let value = srnn_nll(&model, &x).unwrap();
        let mut tape = Tape::new();
        let (traced, _) = trace_srnn(&model, &mut tape, true);
        let obj = srnn_nll_traced(&mut tape, &traced, &model, &x).unwrap();
        assert_eq!(tape.value(obj.recon).data(), &value.per_sequence[..]);
    }
}
