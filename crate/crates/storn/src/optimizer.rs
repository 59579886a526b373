//! Stochastic training with Adadelta plus Nesterov momentum, gradient
//! clipping, and early stopping on the validation bound.
//!
//! Update rule, per parameter element (rho = decay, eps = conditioner,
//! m = momentum coefficient, gradient g evaluated at the lookahead point
//! `theta + m v`):
//!
//! ```text
//! E[g^2]  <- rho E[g^2]  + (1 - rho) g^2
//! delta    = -(sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps)) g
//! E[dx^2] <- rho E[dx^2] + (1 - rho) delta^2
//! v       <- m v + delta
//! theta   <- theta + v
//! ```
//!
//! With `m = 0` the velocity path is inert and the step is plain Adadelta.
//! The whole loop is deterministic given the config seed: the shuffle, the
//! training-eps draws, and the validation-eps draws run on independent
//! sub-seeded streams.

use std::time::Instant;

use rand_distr::Distribution;

use crate::data::{batches_in_order, make_batches, Batch, Dataset};
use crate::error::{Error, Result};
use crate::model::{
    srnn_nll, srnn_nll_traced, storn_bound, storn_bound_traced, trace_srnn, SrnnModel, StornModel,
    TracedObjective,
};
use crate::params::ParamSet;
use crate::rnn::SequenceBatch;
use crate::seed::{stream_rng, sub_seed};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Per-parameter accumulators and velocity of the optimizer.
#[derive(Debug, Clone)]
pub struct AdadeltaState {
    avg_sq_grad: Vec<Tensor>,
    avg_sq_update: Vec<Tensor>,
    velocity: Vec<Tensor>,
    names: Vec<String>,
    pub rho: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl AdadeltaState {
    pub fn new(params: &ParamSet, rho: f64, eps: f64, momentum: f64) -> Result<AdadeltaState> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho {rho} must be in [0, 1)")));
        }
        if eps <= 0.0 {
            return Err(Error::invalid(format!("eps {eps} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum {momentum} must be in [0, 1)")));
        }
        let zeros: Vec<Tensor> = params
            .tensors()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Ok(AdadeltaState {
            avg_sq_grad: zeros.clone(),
            avg_sq_update: zeros.clone(),
            velocity: zeros,
            names: params.iter().map(|(n, _)| n.to_string()).collect(),
            rho,
            eps,
            momentum,
        })
    }

    fn check(&self, params: &ParamSet, op: &'static str) -> Result<()> {
        if params.len() != self.names.len() {
            return Err(Error::invalid(format!("{op}: state tracks different parameters")));
        }
        for ((name, t), (sn, st)) in params.iter().zip(self.names.iter().zip(&self.avg_sq_grad)) {
            if name != sn || t.shape() != st.shape() {
                return Err(Error::invalid(format!(
                    "{op}: state entry `{sn}` does not match parameter `{name}`"
                )));
            }
        }
        Ok(())
    }
}

/// One Adadelta update. `grads` must be evaluated at the lookahead point
/// (see [`lookahead`]); shapes must match the state exactly.
pub fn adadelta_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdadeltaState,
) -> Result<()> {
    params.check_aligned(grads, "adadelta_step")?;
    state.check(params, "adadelta_step")?;
    let (rho, eps, m) = (state.rho, state.eps, state.momentum);
    for (i, ((_, theta), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
        let eg2 = state.avg_sq_grad[i].data_mut();
        let ed2 = state.avg_sq_update[i].data_mut();
        let vel = state.velocity[i].data_mut();
        for j in 0..theta.len() {
            let gj = g.data()[j];
            eg2[j] = rho * eg2[j] + (1.0 - rho) * gj * gj;
            let delta = -((ed2[j] + eps).sqrt() / (eg2[j] + eps).sqrt()) * gj;
            ed2[j] = rho * ed2[j] + (1.0 - rho) * delta * delta;
            vel[j] = m * vel[j] + delta;
            theta.data_mut()[j] += vel[j];
        }
    }
    Ok(())
}

/// The Nesterov lookahead point `theta + m v`.
pub fn lookahead(params: &ParamSet, state: &AdadeltaState) -> Result<ParamSet> {
    state.check(params, "lookahead")?;
    Ok(params
        .iter()
        .enumerate()
        .map(|(i, (name, t))| {
            let mut out = t.clone();
            for (o, v) in out.data_mut().iter_mut().zip(state.velocity[i].data()) {
                *o += state.momentum * v;
            }
            (name.to_string(), out)
        })
        .collect())
}

/// Rescales all gradients to a global L2 norm of at most `threshold`;
/// returns the pre-clip norm.
pub fn clip_gradients(grads: &mut ParamSet, threshold: f64) -> Result<f64> {
    if threshold <= 0.0 {
        return Err(Error::invalid(format!("clip threshold {threshold} must be positive")));
    }
    let norm = grads
        .tensors()
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for (_, t) in grads.iter_mut() {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_threshold: f64,
    pub seed: u64,
    pub rho: f64,
    pub eps_accum: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_epochs: 100,
            patience: 20,
            clip_threshold: 10.0,
            seed: 0,
            rho: 0.95,
            eps_accum: 1e-6,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if self.clip_threshold <= 0.0 {
            return Err(Error::config("train.clip must be positive"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config("train.rho must be in [0, 1)"));
        }
        if self.eps_accum <= 0.0 {
            return Err(Error::config("train.eps_accum must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sequence bound over the epoch's training batches.
    pub train_bound: f64,
    /// Mean per-sequence bound on the validation set.
    pub val_bound: f64,
    /// Mean per-sequence KL term over the training batches.
    pub kl_term: f64,
    /// Mean per-sequence reconstruction term over the training batches.
    pub recon_term: f64,
    /// Wall time of the epoch. Reported separately from the deterministic
    /// log columns.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    /// Deterministic log columns (no wall time).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_bound,val_bound,kl_term,recon_term")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:?},{:?},{:?},{:?}",
                e.epoch, e.train_bound, e.val_bound, e.kl_term, e.recon_term
            )?;
        }
        Ok(())
    }

    /// Wall-time column, kept out of the deterministic log.
    pub fn write_timing_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,seconds")?;
        for e in &self.epochs {
            writeln!(w, "{},{:.6}", e.epoch, e.seconds)?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct FitOutcome {
    /// Parameters with the best validation bound seen (the initial model
    /// counts as epoch 0).
    pub model: StornModel,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_bound: f64,
}

#[derive(Debug)]
pub struct FitSrnnOutcome {
    pub model: SrnnModel,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_bound: f64,
}

/// Standard-normal `[T, B, latent]` draws for one training step.
fn draw_train_eps(t: usize, b: usize, lambda: usize, seed: u64, step: u64) -> Tensor {
    let mut rng = stream_rng(seed, step);
    let dist = rand_distr::StandardNormal;
    Tensor::from_fn(vec![t, b, lambda], |_| {
        let v: f64 = dist.sample(&mut rng);
        v
    })
}

/// Validation draws: one stream per dataset sequence, each drawing exactly
/// its own mask-valid length, so the values do not depend on the batch
/// layout.
fn draw_val_eps(batch: &Batch, lambda: usize, seed: u64) -> Tensor {
    let (t_len, b) = (batch.data.steps(), batch.data.batch_size());
    let lengths = batch.data.lengths();
    let dist = rand_distr::StandardNormal;
    let mut eps = Tensor::zeros(vec![t_len, b, lambda]);
    for (bi, &global) in batch.indices.iter().enumerate() {
        let mut rng = stream_rng(seed, global as u64);
        for t in 0..lengths[bi] {
            for k in 0..lambda {
                let v: f64 = dist.sample(&mut rng);
                eps.data_mut()[(t * b + bi) * lambda + k] = v;
            }
        }
    }
    eps
}

/// What the shared training loop needs from a model family.
trait TrainTarget: Sized {
    fn params(&self) -> ParamSet;
    fn rebuild(&self, params: &ParamSet) -> Result<Self>;
    fn latent_dim(&self) -> Option<usize>;
    /// Traced batch loss; param ids come back in `params()` order.
    fn traced_loss(
        &self,
        tape: &mut Tape,
        x: &SequenceBatch,
        eps: Option<&Tensor>,
    ) -> Result<(TracedObjective, Vec<crate::tape::ValueId>)>;
    /// Per-sequence validation bound sum for one batch.
    fn validation_sum(&self, batch: &Batch, val_seed: u64) -> Result<f64>;
}

impl TrainTarget for StornModel {
    fn params(&self) -> ParamSet {
        self.to_params()
    }

    fn rebuild(&self, params: &ParamSet) -> Result<Self> {
        self.with_params(params)
    }

    fn latent_dim(&self) -> Option<usize> {
        Some(self.latent_dim)
    }

    fn traced_loss(
        &self,
        tape: &mut Tape,
        x: &SequenceBatch,
        eps: Option<&Tensor>,
    ) -> Result<(TracedObjective, Vec<crate::tape::ValueId>)> {
        let (tm, ids) = self.trace(tape, true);
        let eps = eps.ok_or_else(|| Error::invalid("storn training needs eps draws"))?;
        let obj = storn_bound_traced(tape, &tm, self, x, eps)?;
        Ok((obj, ids))
    }

    fn validation_sum(&self, batch: &Batch, val_seed: u64) -> Result<f64> {
        let eps = draw_val_eps(batch, self.latent_dim, val_seed);
        Ok(storn_bound(self, &batch.data, &eps)?.batch_bound())
    }
}

impl TrainTarget for SrnnModel {
    fn params(&self) -> ParamSet {
        self.to_params()
    }

    fn rebuild(&self, params: &ParamSet) -> Result<Self> {
        self.with_params(params)
    }

    fn latent_dim(&self) -> Option<usize> {
        None
    }

    fn traced_loss(
        &self,
        tape: &mut Tape,
        x: &SequenceBatch,
        _eps: Option<&Tensor>,
    ) -> Result<(TracedObjective, Vec<crate::tape::ValueId>)> {
        let (traced, ids) = trace_srnn(self, tape, true);
        let obj = srnn_nll_traced(tape, &traced, self, x)?;
        Ok((obj, ids))
    }

    fn validation_sum(&self, batch: &Batch, _val_seed: u64) -> Result<f64> {
        Ok(srnn_nll(self, &batch.data)?.total)
    }
}

fn validation_bound<M: TrainTarget>(
    model: &M,
    val: &Dataset,
    batch_size: usize,
    val_seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in batches_in_order(val, batch_size)? {
        total += model.validation_sum(&batch, val_seed)?;
    }
    Ok(total / val.len() as f64)
}

/// Names the first non-finite tensor for the abort diagnostic.
fn non_finite_diagnostic(params: &ParamSet, kl: Option<&Tensor>, recon: &Tensor) -> String {
    if let Some(name) = params.first_non_finite() {
        return name.to_string();
    }
    if let Some(kl) = kl {
        if !kl.is_finite() {
            return "kl".into();
        }
    }
    if !recon.is_finite() {
        return "recon_nll".into();
    }
    "bound".into()
}

fn run_fit<M: TrainTarget + Clone>(
    model: &M,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<(M, TrainLog, usize, f64)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation data must be non-empty"));
    }
    let mut params = model.params();
    let mut state = AdadeltaState::new(&params, config.rho, config.eps_accum, config.momentum)?;
    let shuffle_seed = sub_seed(config.seed, "shuffle");
    let eps_seed = sub_seed(config.seed, "train-eps");
    let val_seed = sub_seed(config.seed, "val-eps");

    let mut log = TrainLog::default();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut global_step = 0u64;

    if config.max_epochs > 0 {
        best_val = validation_bound(model, val, config.batch_size, val_seed)?;
    }

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let batches = make_batches(train, config.batch_size, shuffle_seed.wrapping_add(epoch as u64))?;
        let mut bound_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut recon_sum = 0.0;
        for batch in &batches {
            let look = lookahead(&params, &state)?;
            let model_l = model.rebuild(&look)?;
            let mut tape = Tape::new();
            let eps = model_l.latent_dim().map(|lambda| {
                draw_train_eps(batch.data.steps(), batch.data.batch_size(), lambda, eps_seed, global_step)
            });
            let (obj, ids) = model_l.traced_loss(&mut tape, &batch.data, eps.as_ref())?;
            let loss = tape.value(obj.loss).scalar_value();
            if !loss.is_finite() {
                let tensor = non_finite_diagnostic(
                    &look,
                    obj.kl.map(|id| tape.value(id)),
                    tape.value(obj.recon),
                );
                return Err(Error::NonFinite { tensor });
            }
            bound_sum += tape.value(obj.bound).sum();
            kl_sum += obj.kl.map(|id| tape.value(id).sum()).unwrap_or(0.0);
            recon_sum += tape.value(obj.recon).sum();

            let grads = tape.backward(obj.loss)?;
            let mut grad_set: ParamSet = params
                .iter()
                .zip(&ids)
                .map(|((name, t), &id)| (name.to_string(), grads.get_or_zeros(id, t.shape())))
                .collect();
            clip_gradients(&mut grad_set, config.clip_threshold)?;
            adadelta_step(&mut params, &grad_set, &mut state)?;
            global_step += 1;
        }

        let n_train = train.len() as f64;
        let current = model.rebuild(&params)?;
        let val_bound = validation_bound(&current, val, config.batch_size, val_seed)?;
        log.epochs.push(EpochStats {
            epoch,
            train_bound: bound_sum / n_train,
            val_bound,
            kl_term: kl_sum / n_train,
            recon_term: recon_sum / n_train,
            seconds: start.elapsed().as_secs_f64(),
        });

        if val_bound < best_val {
            best_val = val_bound;
            best_params = params.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience.max(1) {
                break;
            }
        }
    }

    Ok((model.rebuild(&best_params)?, log, best_epoch, best_val))
}

/// Trains a STORN on the single-sample bound, recognition and generating
/// parameters jointly; returns the best-on-validation checkpoint and the
/// per-epoch log.
pub fn fit(
    model: &StornModel,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    let (model, log, best_epoch, best_val_bound) = run_fit(model, train, val, config)?;
    Ok(FitOutcome {
        model,
        log,
        best_epoch,
        best_val_bound,
    })
}

/// Trains the factorized sRNN baseline on its exact NLL with the same loop.
pub fn fit_srnn(
    model: &SrnnModel,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<FitSrnnOutcome> {
    let (model, log, best_epoch, best_val_bound) = run_fit(model, train, val, config)?;
    Ok(FitSrnnOutcome {
        model,
        log,
        best_epoch,
        best_val_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_coupled_binary;
    use crate::model::{Likelihood, RecognitionMode, StornHyper};
    use crate::rnn::{InitScheme, Transfer};

    fn one_param(v: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(vec![v.len()], v.to_vec()).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = one_param(&[1.0, -2.0]);
        let grads = one_param(&[0.0, 0.0]);
        let mut state = AdadeltaState::new(&params, 0.95, 1e-6, 0.9).unwrap();
        adadelta_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.get("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_hand_value() {
        // rho = 0.95, eps = 1e-6, m = 0, g = 1:
        // E[g^2] = 0.05, delta = -sqrt(1e-6 / 0.050001) = -0.004472091234310839
        // (extended-precision evaluation of the update recurrence).
        let mut params = one_param(&[0.0]);
        let grads = one_param(&[1.0]);
        let mut state = AdadeltaState::new(&params, 0.95, 1e-6, 0.0).unwrap();
        adadelta_step(&mut params, &grads, &mut state).unwrap();
        let delta = params.get("w").unwrap().data()[0];
        assert!((delta - (-0.004472091234310839)).abs() < 1e-9, "{delta}");
    }

    #[test]
    fn update_opposes_gradient_sign() {
        let mut rng = crate::seed::stream_rng(5, 0);
        for _ in 0..100 {
            let g: f64 = rand::Rng::random_range(&mut rng, -5.0..5.0);
            let mut params = one_param(&[0.3]);
            let grads = one_param(&[g]);
            let mut state = AdadeltaState::new(&params, 0.9, 1e-6, 0.0).unwrap();
            adadelta_step(&mut params, &grads, &mut state).unwrap();
            let delta = params.get("w").unwrap().data()[0] - 0.3;
            assert!(delta * g <= 0.0, "delta {delta} vs g {g}");
        }
    }

    #[test]
    fn momentum_zero_matches_plain_adadelta_reference() {
        // Independent reference implementation of the plain Adadelta
        // recurrence, run over several steps; must agree bitwise.
        let (rho, eps) = (0.95, 1e-6);
        let gradient_seq = [1.0, -0.5, 2.0, 0.25, -1.5];
        let mut params = one_param(&[0.1]);
        let mut state = AdadeltaState::new(&params, rho, eps, 0.0).unwrap();

        let mut theta = 0.1;
        let mut eg2 = 0.0;
        let mut ed2 = 0.0;
        for &g in &gradient_seq {
            let grads = one_param(&[g]);
            adadelta_step(&mut params, &grads, &mut state).unwrap();

            eg2 = rho * eg2 + (1.0 - rho) * g * g;
            let delta = -((ed2 + eps).sqrt() / (eg2 + eps).sqrt()) * g;
            ed2 = rho * ed2 + (1.0 - rho) * delta * delta;
            theta += delta;
            assert_eq!(params.get("w").unwrap().data()[0], theta);
        }
    }

    #[test]
    fn state_never_goes_non_finite() {
        let mut rng = crate::seed::stream_rng(6, 0);
        let mut params = one_param(&[0.0, 1.0, -1.0]);
        let mut state = AdadeltaState::new(&params, 0.95, 1e-6, 0.9).unwrap();
        for _ in 0..200 {
            let g: Vec<f64> = (0..3)
                .map(|_| rand::Rng::random_range(&mut rng, -100.0..100.0))
                .collect();
            let grads = one_param(&g);
            adadelta_step(&mut params, &grads, &mut state).unwrap();
            assert!(params.is_finite());
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = one_param(&[1.0]);
        let grads = one_param(&[1.0, 2.0]);
        let mut state = AdadeltaState::new(&params, 0.95, 1e-6, 0.0).unwrap();
        assert!(adadelta_step(&mut params, &grads, &mut state).is_err());
    }

    #[test]
    fn clip_below_threshold_is_identity() {
        let mut grads = one_param(&[0.3, -0.4]);
        let norm = clip_gradients(&mut grads, 1.0).unwrap();
        assert_eq!(norm, 0.5);
        assert_eq!(grads.get("w").unwrap().data(), &[0.3, -0.4]);
    }

    #[test]
    fn clip_rescales_to_threshold() {
        // [3, 4] has norm 5; threshold 1 rescales to [0.6, 0.8].
        let mut grads = one_param(&[3.0, 4.0]);
        let norm = clip_gradients(&mut grads, 1.0).unwrap();
        assert_eq!(norm, 5.0);
        let d = grads.get("w").unwrap().data().to_vec();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
        let post = (d[0] * d[0] + d[1] * d[1]).sqrt();
        assert!(post <= 1.0 + 1e-12);
    }

    fn tiny_setup(seed: u64) -> (StornModel, Dataset, Dataset) {
        let synth = synth_coupled_binary(30, 6, 2, seed).unwrap();
        let train = synth.dataset.subset(&(0..24).collect::<Vec<_>>()).unwrap();
        let val = synth.dataset.subset(&(24..30).collect::<Vec<_>>()).unwrap();
        let model = StornModel::init(
            &StornHyper {
                input: 2,
                hidden: 4,
                recog_hidden: 4,
                latent: 1,
                likelihood: Likelihood::Bernoulli,
                recognition: RecognitionMode::Causal,
                transfer: Transfer::Logistic,
                init: InitScheme::GlorotSpectral,
            },
            seed,
        )
        .unwrap();
        (model, train, val)
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (model, train, val) = tiny_setup(1);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let out = fit(&model, &train, &val, &cfg).unwrap();
        assert!(out.log.epochs.is_empty());
        assert_eq!(out.model, model);
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let (model, train, val) = tiny_setup(2);
        let cfg = TrainConfig {
            max_epochs: 4,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = fit(&model, &train, &val, &cfg).unwrap();
        let b = fit(&model, &train, &val, &cfg).unwrap();
        assert_eq!(a.log.epochs.len(), b.log.epochs.len());
        for (ea, eb) in a.log.epochs.iter().zip(&b.log.epochs) {
            assert_eq!(ea.train_bound.to_bits(), eb.train_bound.to_bits());
            assert_eq!(ea.val_bound.to_bits(), eb.val_bound.to_bits());
            assert_eq!(ea.kl_term.to_bits(), eb.kl_term.to_bits());
        }
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn training_improves_the_bound_and_best_curve_is_monotone() {
        let (model, train, val) = tiny_setup(3);
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 8,
            seed: 5,
            patience: 30,
            ..TrainConfig::default()
        };
        let out = fit(&model, &train, &val, &cfg).unwrap();
        assert!(!out.log.epochs.is_empty());
        // Best-so-far validation curve is non-increasing by construction;
        // training should also beat the initial model's bound.
        let mut best = f64::INFINITY;
        for e in &out.log.epochs {
            best = best.min(e.val_bound);
            assert!(out.best_val_bound <= best + 1e-12);
        }
        let first = out.log.epochs.first().unwrap().val_bound;
        let last_best = out.best_val_bound;
        assert!(
            last_best < first,
            "no improvement: first {first}, best {last_best}"
        );
    }

    #[test]
    fn early_stopping_respects_patience() {
        // Constant data fit perfectly from the start: every gradient is
        // exactly zero, so validation never improves and training stops
        // after exactly `patience` epochs.
        let seqs: Vec<Tensor> = (0..10)
            .map(|_| Tensor::filled(vec![5, 1], 0.7))
            .collect();
        let data = Dataset::new(seqs, crate::data::FeatureKind::Real).unwrap();
        let train = data.subset(&(0..8).collect::<Vec<_>>()).unwrap();
        let val = data.subset(&[8, 9]).unwrap();
        let mut model = SrnnModel::init(
            1,
            3,
            Likelihood::Gaussian { std: 1.0 },
            Transfer::Tanh,
            InitScheme::Zero,
            0,
        )
        .unwrap();
        model.params.b_out = Tensor::from_vec(vec![1], vec![0.7]).unwrap();
        let cfg = TrainConfig {
            max_epochs: 100,
            batch_size: 4,
            patience: 3,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = fit_srnn(&model, &train, &val, &cfg).unwrap();
        assert_eq!(out.log.epochs.len(), 3);
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.model, model);
    }

    #[test]
    fn nan_abort_names_a_tensor() {
        let (mut model, train, val) = tiny_setup(5);
        // A gaussian head with an absurdly small deviation overflows the
        // quadratic term on the first batch.
        model.gen.f_y = Transfer::Identity;
        model.likelihood = Likelihood::Gaussian { std: 1e-300 };
        let cfg = TrainConfig {
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let err = fit(&model, &train, &val, &cfg).unwrap_err();
        match err {
            Error::NonFinite { tensor } => {
                assert!(!tensor.is_empty());
            }
            other => panic!("expected NonFinite, got {other}"),
        }
    }

    #[test]
    fn srnn_fit_runs_and_logs_zero_kl() {
        let synth = synth_coupled_binary(20, 5, 2, 9).unwrap();
        let train = synth.dataset.subset(&(0..16).collect::<Vec<_>>()).unwrap();
        let val = synth.dataset.subset(&(16..20).collect::<Vec<_>>()).unwrap();
        let model = SrnnModel::init(
            2,
            4,
            Likelihood::Bernoulli,
            Transfer::Logistic,
            InitScheme::GlorotSpectral,
            3,
        )
        .unwrap();
        let cfg = TrainConfig {
            max_epochs: 5,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = fit_srnn(&model, &train, &val, &cfg).unwrap();
        assert_eq!(out.log.epochs.len(), 5);
        for e in &out.log.epochs {
            assert_eq!(e.kl_term, 0.0);
            assert!((e.train_bound - e.recon_term).abs() < 1e-12);
        }
    }
}
