//! Stable scalar primitives, masked likelihood losses, and the
//! finite-difference gradient oracle.
//!
//! Losses are reported as per-sequence sums; per-timestep means divide by the
//! number of mask-valid steps. The step kernels here are shared verbatim by
//! the differentiation tape so that traced and untraced evaluations agree
//! bitwise.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LN_TWO_PI: f64 = 1.8378770664093453;
pub const HALF_LN_TWO_PI: f64 = 0.9189385332046727;

/// Default clamp applied to Bernoulli probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Default floor added to the squared recognition output inside the
/// standard-deviation square root.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Logistic sigmoid, evaluated through the exponential of the negated
/// magnitude so that neither branch can overflow.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic sigmoid.
pub fn sigmoid(t: &Tensor) -> Tensor {
    t.map(sigmoid_scalar)
}

/// log(sum_i exp(v_i)) computed by max-shifting.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("logsumexp of empty input"));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// A masked loss: per-sequence sums plus the batch total.
#[derive(Debug, Clone)]
pub struct MaskedLoss {
    /// Summed loss per sequence, in batch order.
    pub per_sequence: Vec<f64>,
    /// Mask-valid steps per sequence.
    pub steps: Vec<usize>,
    /// Sum over the batch.
    pub total: f64,
}

impl MaskedLoss {
    fn from_parts(per_sequence: Vec<f64>, steps: Vec<usize>) -> MaskedLoss {
        let total = per_sequence.iter().sum();
        MaskedLoss {
            per_sequence,
            steps,
            total,
        }
    }

    /// Mean loss per mask-valid timestep across the whole batch.
    pub fn per_step_mean(&self) -> f64 {
        let n: usize = self.steps.iter().sum();
        if n == 0 {
            0.0
        } else {
            self.total / n as f64
        }
    }

    /// Mean per-sequence sum.
    pub fn per_sequence_mean(&self) -> f64 {
        if self.per_sequence.is_empty() {
            0.0
        } else {
            self.total / self.per_sequence.len() as f64
        }
    }
}

pub(crate) fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.max(eps).min(1.0 - eps)
}

/// One timestep of masked Bernoulli NLL: `probs`/`targets` are `[B, w]`,
/// `mask` is `[B]`; returns one value per batch row.
pub(crate) fn bernoulli_nll_rows(
    probs: &Tensor,
    targets: &Tensor,
    mask: &[f64],
    eps: f64,
) -> Vec<f64> {
    let (b, w) = probs.dims2().expect("bernoulli_nll_rows wants rank 2");
    let mut out = vec![0.0; b];
    for i in 0..b {
        if mask[i] == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for j in 0..w {
            let p = clamp_prob(probs.data()[i * w + j], eps);
            let t = targets.data()[i * w + j];
            acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        out[i] = mask[i] * acc;
    }
    out
}

/// One timestep of masked Gaussian NLL with fixed standard deviation.
pub(crate) fn gaussian_nll_rows(
    mean: &Tensor,
    targets: &Tensor,
    std: f64,
    mask: &[f64],
) -> Vec<f64> {
    let (b, w) = mean.dims2().expect("gaussian_nll_rows wants rank 2");
    let ln_std = std.ln();
    let mut out = vec![0.0; b];
    for i in 0..b {
        if mask[i] == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for j in 0..w {
            let r = (targets.data()[i * w + j] - mean.data()[i * w + j]) / std;
            acc += 0.5 * r * r + ln_std + HALF_LN_TWO_PI;
        }
        out[i] = mask[i] * acc;
    }
    out
}

/// One timestep of the closed-form KL from `N(mu, sigma^2)` to `N(0, 1)`,
/// summed over latent channels: `0.5 (mu^2 + s - ln s - 1)` per entry.
pub(crate) fn kl_std_normal_rows(mu: &Tensor, sigma_sq: &Tensor, mask: &[f64]) -> Vec<f64> {
    let (b, w) = mu.dims2().expect("kl_std_normal_rows wants rank 2");
    let mut out = vec![0.0; b];
    for i in 0..b {
        if mask[i] == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for j in 0..w {
            let m = mu.data()[i * w + j];
            let s = sigma_sq.data()[i * w + j];
            acc += 0.5 * (m * m + s - s.ln() - 1.0);
        }
        out[i] = mask[i] * acc;
    }
    out
}

fn check_loss_shapes(op: &'static str, a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<(usize, usize, usize)> {
    let (t, bs, w) = a.dims3()?;
    if b.shape() != a.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if mask.shape() != [t, bs] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: mask.shape().to_vec(),
        });
    }
    Ok((t, bs, w))
}

fn mask_steps(mask: &Tensor, t: usize, b: usize) -> Vec<usize> {
    let mut steps = vec![0usize; b];
    for ti in 0..t {
        for bi in 0..b {
            if mask.data()[ti * b + bi] != 0.0 {
                steps[bi] += 1;
            }
        }
    }
    steps
}

/// Masked Bernoulli negative log-likelihood over a `[T, B, w]` block.
///
/// Probabilities are clamped to `[eps, 1 - eps]` before the logarithm;
/// targets must be exactly 0 or 1.
pub fn bernoulli_nll(probs: &Tensor, targets: &Tensor, mask: &Tensor, eps: f64) -> Result<MaskedLoss> {
    let (t, b, _) = check_loss_shapes("bernoulli_nll", probs, targets, mask)?;
    if let Some(v) = targets.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::validation(format!(
            "bernoulli_nll target {v} is not binary"
        )));
    }
    let mut per_seq = vec![0.0; b];
    for ti in 0..t {
        let p = probs.plane(ti)?;
        let tg = targets.plane(ti)?;
        let m = &mask.data()[ti * b..(ti + 1) * b];
        for (acc, v) in per_seq.iter_mut().zip(bernoulli_nll_rows(&p, &tg, m, eps)) {
            *acc += v;
        }
    }
    Ok(MaskedLoss::from_parts(per_seq, mask_steps(mask, t, b)))
}

/// Standard deviation argument for [`gaussian_nll`]: a single fixed value or
/// one value per entry.
pub enum GaussianStd<'a> {
    Fixed(f64),
    PerEntry(&'a Tensor),
}

/// Masked Gaussian negative log-likelihood over a `[T, B, w]` block:
/// `0.5 ((t - mu) / sigma)^2 + ln sigma + 0.5 ln 2pi` per masked entry.
pub fn gaussian_nll(
    mean: &Tensor,
    std: GaussianStd<'_>,
    targets: &Tensor,
    mask: &Tensor,
) -> Result<MaskedLoss> {
    let (t, b, w) = check_loss_shapes("gaussian_nll", mean, targets, mask)?;
    match std {
        GaussianStd::Fixed(s) => {
            if s <= 0.0 {
                return Err(Error::invalid(format!("gaussian_nll std {s} must be positive")));
            }
            let mut per_seq = vec![0.0; b];
            for ti in 0..t {
                let mu = mean.plane(ti)?;
                let tg = targets.plane(ti)?;
                let m = &mask.data()[ti * b..(ti + 1) * b];
                for (acc, v) in per_seq.iter_mut().zip(gaussian_nll_rows(&mu, &tg, s, m)) {
                    *acc += v;
                }
            }
            Ok(MaskedLoss::from_parts(per_seq, mask_steps(mask, t, b)))
        }
        GaussianStd::PerEntry(s) => {
            if s.shape() != mean.shape() {
                return Err(Error::ShapeMismatch {
                    op: "gaussian_nll",
                    lhs: mean.shape().to_vec(),
                    rhs: s.shape().to_vec(),
                });
            }
            if let Some(v) = s.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::invalid(format!("gaussian_nll std {v} must be positive")));
            }
            let mut per_seq = vec![0.0; b];
            for ti in 0..t {
                for bi in 0..b {
                    let mv = mask.data()[ti * b + bi];
                    if mv == 0.0 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for j in 0..w {
                        let idx = (ti * b + bi) * w + j;
                        let sd = s.data()[idx];
                        let r = (targets.data()[idx] - mean.data()[idx]) / sd;
                        acc += 0.5 * r * r + sd.ln() + HALF_LN_TWO_PI;
                    }
                    per_seq[bi] += mv * acc;
                }
            }
            Ok(MaskedLoss::from_parts(per_seq, mask_steps(mask, t, b)))
        }
    }
}

/// Central-difference gradient of a scalar function of a parameter list:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_difference_grad<F>(mut f: F, params: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::invalid(format!("finite difference step {step} must be positive")));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].shape().to_vec());
        for i in 0..params[pi].len() {
            let orig = params[pi].data()[i];
            work[pi].data_mut()[i] = orig + step;
            let up = f(&work)?;
            work[pi].data_mut()[i] = orig - step;
            let down = f(&work)?;
            work[pi].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sigmoid_symmetry_point() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid_scalar(1e3), 1.0);
        assert_eq!(sigmoid_scalar(-1e3), 0.0);
        assert!(sigmoid_scalar(709.0).is_finite());
        assert!(sigmoid_scalar(-709.0).is_finite());
    }

    #[test]
    fn sigmoid_hand_value() {
        // 1 / (1 + e), evaluated in extended precision.
        assert!(close(sigmoid_scalar(-1.0), 0.2689414213699951, 1e-15));
    }

    #[test]
    fn logsumexp_equal_weights() {
        assert!(close(logsumexp(&[0.0, 0.0]).unwrap(), 2.0f64.ln(), 1e-15));
    }

    #[test]
    fn logsumexp_shift_invariant_at_extremes() {
        let v = logsumexp(&[-1000.0, -1000.0]).unwrap();
        assert!(close(v, -1000.0 + 2.0f64.ln(), 1e-12));
        assert!(v.is_finite());
    }

    #[test]
    fn logsumexp_hand_value() {
        // ln(1 + e + e^2), evaluated in extended precision.
        assert!(close(logsumexp(&[0.0, 1.0, 2.0]).unwrap(), 2.40760596444438, 1e-12));
    }

    #[test]
    fn logsumexp_empty_is_error() {
        assert!(logsumexp(&[]).is_err());
    }

    fn block(t: usize, b: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(vec![t, b, w], v.to_vec()).unwrap()
    }

    #[test]
    fn bernoulli_maximum_entropy() {
        // probs all 0.5 cost ln 2 per masked entry regardless of targets.
        let probs = block(2, 1, 2, &[0.5; 4]);
        let targets = block(2, 1, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mask = Tensor::from_vec(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let loss = bernoulli_nll(&probs, &targets, &mask, PROB_CLAMP).unwrap();
        assert!(close(loss.total, 4.0 * 2.0f64.ln(), 1e-12));
    }

    #[test]
    fn bernoulli_perfect_prediction_near_zero() {
        let probs = block(1, 1, 2, &[1.0, 0.0]);
        let targets = block(1, 1, 2, &[1.0, 0.0]);
        let mask = Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap();
        let loss = bernoulli_nll(&probs, &targets, &mask, PROB_CLAMP).unwrap();
        assert!(loss.total >= 0.0);
        assert!(loss.total <= 2.0 * -(1.0 - PROB_CLAMP).ln() + 1e-15);
    }

    #[test]
    fn bernoulli_hand_value() {
        // -(ln 0.9 + ln 0.8), evaluated in extended precision.
        let probs = block(1, 1, 2, &[0.9, 0.2]);
        let targets = block(1, 1, 2, &[1.0, 0.0]);
        let mask = Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap();
        let loss = bernoulli_nll(&probs, &targets, &mask, PROB_CLAMP).unwrap();
        assert!(close(loss.total, 0.3285040669720361, 1e-14));
    }

    #[test]
    fn bernoulli_rejects_non_binary_targets() {
        let probs = block(1, 1, 1, &[0.5]);
        let targets = block(1, 1, 1, &[0.25]);
        let mask = Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap();
        assert!(bernoulli_nll(&probs, &targets, &mask, PROB_CLAMP).is_err());
    }

    #[test]
    fn gaussian_zero_residual() {
        let mean = block(2, 1, 3, &[0.5; 6]);
        let mask = Tensor::from_vec(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let loss = gaussian_nll(&mean, GaussianStd::Fixed(1.0), &mean, &mask).unwrap();
        assert!(close(loss.total, 6.0 * HALF_LN_TWO_PI, 1e-12));
    }

    #[test]
    fn gaussian_hand_value() {
        // 0.5 + 0.5 ln 2pi, evaluated in extended precision.
        let mean = block(1, 1, 1, &[0.0]);
        let target = block(1, 1, 1, &[1.0]);
        let mask = Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap();
        let loss = gaussian_nll(&mean, GaussianStd::Fixed(1.0), &target, &mask).unwrap();
        assert!(close(loss.total, 1.4189385332046727, 1e-14));
    }

    #[test]
    fn gaussian_doubling_std_adds_ln2_per_entry() {
        let mean = block(1, 2, 2, &[0.3; 4]);
        let mask = Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let a = gaussian_nll(&mean, GaussianStd::Fixed(1.0), &mean, &mask).unwrap();
        let b = gaussian_nll(&mean, GaussianStd::Fixed(2.0), &mean, &mask).unwrap();
        assert!(close(b.total - a.total, 4.0 * 2.0f64.ln(), 1e-12));
    }

    #[test]
    fn gaussian_rejects_non_positive_std() {
        let mean = block(1, 1, 1, &[0.0]);
        let mask = Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap();
        assert!(gaussian_nll(&mean, GaussianStd::Fixed(0.0), &mean, &mask).is_err());
        assert!(gaussian_nll(&mean, GaussianStd::Fixed(-1.0), &mean, &mask).is_err());
    }

    #[test]
    fn gaussian_per_entry_std_matches_fixed() {
        let mean = block(1, 1, 2, &[0.1, -0.4]);
        let target = block(1, 1, 2, &[0.6, 0.2]);
        let mask = Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap();
        let fixed = gaussian_nll(&mean, GaussianStd::Fixed(0.7), &target, &mask).unwrap();
        let stds = block(1, 1, 2, &[0.7, 0.7]);
        let per = gaussian_nll(&mean, GaussianStd::PerEntry(&stds), &target, &mask).unwrap();
        assert!(close(fixed.total, per.total, 1e-14));
    }

    #[test]
    fn losses_are_mask_additive() {
        // Splitting the final step off the mask and summing matches the
        // joint evaluation exactly (the summation grouping is preserved).
        let probs = block(3, 2, 2, &[0.3, 0.6, 0.8, 0.2, 0.5, 0.9, 0.1, 0.7, 0.4, 0.25, 0.65, 0.85]);
        let targets = block(3, 2, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let full = Tensor::from_vec(vec![3, 2], vec![1.0; 6]).unwrap();
        let first = Tensor::from_vec(vec![3, 2], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let second = Tensor::from_vec(vec![3, 2], vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let all = bernoulli_nll(&probs, &targets, &full, PROB_CLAMP).unwrap();
        let a = bernoulli_nll(&probs, &targets, &first, PROB_CLAMP).unwrap();
        let b = bernoulli_nll(&probs, &targets, &second, PROB_CLAMP).unwrap();
        for i in 0..2 {
            assert_eq!(all.per_sequence[i], a.per_sequence[i] + b.per_sequence[i]);
        }
        // Splitting the batch by sequences is trivially exact: per-sequence
        // values are computed independently.
        assert_eq!(all.total, all.per_sequence[0] + all.per_sequence[1]);
    }

    #[test]
    fn fd_quadratic() {
        let f = |p: &[Tensor]| Ok(p[0].data()[0] * p[0].data()[0]);
        let params = [Tensor::from_vec(vec![1], vec![3.0]).unwrap()];
        let g = finite_difference_grad(f, &params, 1e-5).unwrap();
        assert!(close(g[0].data()[0], 6.0, 1e-9));
    }

    #[test]
    fn fd_constant_is_zero() {
        let f = |_: &[Tensor]| Ok(7.5);
        let params = [Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap()];
        let g = finite_difference_grad(f, &params, 1e-5).unwrap();
        assert_eq!(g[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn fd_sine_at_zero() {
        // cos(0) = 1; truncation error is h^2/6 ~ 1.7e-11 at h = 1e-5.
        let f = |p: &[Tensor]| Ok(p[0].data()[0].sin());
        let params = [Tensor::from_vec(vec![1], vec![0.0]).unwrap()];
        let g = finite_difference_grad(f, &params, 1e-5).unwrap();
        assert!(close(g[0].data()[0], 1.0, 1e-10));
    }

    #[test]
    fn fd_rejects_bad_step() {
        let f = |_: &[Tensor]| Ok(0.0);
        assert!(finite_difference_grad(f, &[], 0.0).is_err());
    }
}
