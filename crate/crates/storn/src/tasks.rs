//! Downstream procedures on a trained model: missing-value imputation by
//! posterior-mode selection, prefix-conditioned generation, and MSE
//! evaluation.

use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::model::{
    generative_forward, recognition_forward, Likelihood, StornModel,
};
use crate::rnn::{cell_out_pre, cell_pre, mask_mix, SequenceBatch};
use crate::seed::stream_rng;
use crate::tensor::Tensor;

/// A corruption window: steps `start..end` of the listed channels (all
/// channels when `None`) are replaced with standard-normal noise.
#[derive(Debug, Clone)]
pub struct CorruptionSpec {
    pub start: usize,
    pub end: usize,
    pub channels: Option<Vec<usize>>,
    pub noise_seed: u64,
}

impl CorruptionSpec {
    pub fn all_channels(start: usize, end: usize, noise_seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            start,
            end,
            channels: None,
            noise_seed,
        }
    }

    fn validate(&self, batch: &SequenceBatch) -> Result<Vec<usize>> {
        if self.start > self.end || self.end > batch.steps() {
            return Err(Error::invalid(format!(
                "window {}..{} outside sequence length {}",
                self.start,
                self.end,
                batch.steps()
            )));
        }
        for (bi, len) in batch.lengths().iter().enumerate() {
            if self.end > *len {
                return Err(Error::invalid(format!(
                    "window {}..{} outside mask-valid span of sequence {bi} (length {len})",
                    self.start, self.end
                )));
            }
        }
        let channels = match &self.channels {
            None => (0..batch.features()).collect(),
            Some(list) => {
                for &c in list {
                    if c >= batch.features() {
                        return Err(Error::invalid(format!(
                            "channel {c} outside feature range 0..{}",
                            batch.features()
                        )));
                    }
                }
                list.clone()
            }
        };
        Ok(channels)
    }
}

/// Fills the corruption window with seeded standard-normal noise (the same
/// corruption protocol the imputation task assumes).
pub fn apply_corruption(batch: &SequenceBatch, spec: &CorruptionSpec) -> Result<SequenceBatch> {
    let channels = spec.validate(batch)?;
    let (b, k) = (batch.batch_size(), batch.features());
    let mut values = batch.values().clone();
    let dist = rand_distr::StandardNormal;
    for bi in 0..b {
        let mut rng = stream_rng(spec.noise_seed, bi as u64);
        for t in spec.start..spec.end {
            for &c in &channels {
                let v: f64 = dist.sample(&mut rng);
                values.data_mut()[(t * b + bi) * k + c] = v;
            }
        }
    }
    SequenceBatch::new(values, batch.mask().clone())
}

/// Reconstructs the corruption window by maximum a posteriori point
/// selection: the latent is the posterior mode `z = mu` of the recognition
/// pass over the corrupted sequence, and the window is filled with the
/// argmax of the output likelihood given that latent, applied sequentially
/// so each reconstructed step feeds the next step's input instead of the
/// corrupting noise (the coordinatewise argmax of the joint conditional).
/// The argmax is the mean for real data and the 0.5 threshold for binary
/// data. Entries outside the window pass through bit-exactly.
pub fn impute(
    model: &StornModel,
    corrupted: &SequenceBatch,
    spec: &CorruptionSpec,
) -> Result<SequenceBatch> {
    let channels = spec.validate(corrupted)?;
    let stats = recognition_forward(model, corrupted)?;
    let z = &stats.mu;
    let (b, k, gamma, lambda) = (
        corrupted.batch_size(),
        corrupted.features(),
        model.gen.hidden_dim(),
        model.latent_dim,
    );
    let p = &model.gen;
    let mut values = corrupted.values().clone();
    for bi in 0..b {
        let mut h = vec![0.0; gamma];
        let mut x_prev = vec![0.0; k];
        for t in 0..spec.end {
            let m = corrupted.mask_at(t, bi);
            let z_base = (t * b + bi) * lambda;
            let z_row = &z.data()[z_base..z_base + lambda];
            let pre = cell_pre(
                &x_prev,
                Some((z_row, &model.w_lat)),
                &h,
                &p.w_in,
                &p.w_rec,
                &p.b_hid,
            );
            let new: Vec<f64> = pre.iter().map(|&v| p.f_h.apply_scalar(v)).collect();
            let mut h_next = vec![0.0; gamma];
            mask_mix(&new, &h, m, &mut h_next);
            h = h_next;
            if t >= spec.start {
                let out = cell_out_pre(&h, &p.w_out, &p.b_out);
                for &c in &channels {
                    let y = m * p.f_y.apply_scalar(out[c]);
                    values.data_mut()[(t * b + bi) * k + c] = match model.likelihood {
                        Likelihood::Gaussian { .. } => y,
                        Likelihood::Bernoulli => {
                            if y >= 0.5 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                }
            }
            // Feed the possibly-reconstructed row forward.
            let base = (t * b + bi) * k;
            x_prev = values.data()[base..base + k].to_vec();
        }
    }
    SequenceBatch::new(values, corrupted.mask().clone())
}

/// Samples continuations: the generative net is teacher-forced over the
/// prefix, then fed its own output mean (or probability vector); latents
/// are drawn from the prior throughout, one stream per batch row. The
/// prefix is returned verbatim.
pub fn generate(
    model: &StornModel,
    prefix: &SequenceBatch,
    horizon: usize,
    seed: u64,
) -> Result<SequenceBatch> {
    if prefix.features() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "generate",
            lhs: vec![model.input_dim()],
            rhs: prefix.values().shape().to_vec(),
        });
    }
    let (b, k, gamma, lambda) = (
        prefix.batch_size(),
        prefix.features(),
        model.gen.hidden_dim(),
        model.latent_dim,
    );
    let lengths = prefix.lengths();
    let total: Vec<usize> = lengths.iter().map(|l| l + horizon).collect();
    let t_out = total.iter().copied().max().unwrap_or(0);
    let mut values = Tensor::zeros(vec![t_out.max(1), b, k]);
    let mut mask = Tensor::zeros(vec![t_out.max(1), b]);
    let dist = rand_distr::StandardNormal;
    let p = &model.gen;
    for bi in 0..b {
        let mut rng = stream_rng(seed, bi as u64);
        let mut h = vec![0.0; gamma];
        let mut x_prev = vec![0.0; k];
        for t in 0..total[bi] {
            let z: Vec<f64> = (0..lambda).map(|_| dist.sample(&mut rng)).collect();
            let pre = cell_pre(
                &x_prev,
                Some((&z, &model.w_lat)),
                &h,
                &p.w_in,
                &p.w_rec,
                &p.b_hid,
            );
            h = pre.iter().map(|&v| p.f_h.apply_scalar(v)).collect();
            let out: Vec<f64> = cell_out_pre(&h, &p.w_out, &p.b_out)
                .iter()
                .map(|&v| p.f_y.apply_scalar(v))
                .collect();
            let emitted: &[f64] = if t < lengths[bi] {
                prefix.value_row(t, bi)
            } else {
                &out
            };
            for c in 0..k {
                values.data_mut()[(t * b + bi) * k + c] = emitted[c];
            }
            mask.data_mut()[t * b + bi] = 1.0;
            x_prev = emitted.to_vec();
        }
    }
    SequenceBatch::new(values, mask)
}

/// Masked mean squared difference over all mask-valid scalar entries.
/// Masks must coincide; an empty mask gives 0.
pub fn mse(pred: &SequenceBatch, target: &SequenceBatch) -> Result<f64> {
    if pred.values().shape() != target.values().shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: pred.values().shape().to_vec(),
            rhs: target.values().shape().to_vec(),
        });
    }
    if pred.mask() != target.mask() {
        return Err(Error::invalid("mse: masks differ"));
    }
    let (t_len, b, k) = pred.values().dims3()?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in 0..t_len {
        for bi in 0..b {
            if pred.mask_at(t, bi) == 0.0 {
                continue;
            }
            for c in 0..k {
                let idx = (t * b + bi) * k + c;
                let d = pred.values().data()[idx] - target.values().data()[idx];
                sum += d * d;
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// MSE restricted to the corruption window (all mask-valid entries of the
/// listed channels within `start..end`).
pub fn window_mse(
    pred: &SequenceBatch,
    target: &SequenceBatch,
    spec: &CorruptionSpec,
) -> Result<Vec<f64>> {
    if pred.values().shape() != target.values().shape() {
        return Err(Error::ShapeMismatch {
            op: "window_mse",
            lhs: pred.values().shape().to_vec(),
            rhs: target.values().shape().to_vec(),
        });
    }
    let channels = spec.validate(target)?;
    let (b, k) = (target.batch_size(), target.features());
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in spec.start..spec.end {
            for &c in &channels {
                let idx = (t * b + bi) * k + c;
                let d = pred.values().data()[idx] - target.values().data()[idx];
                sum += d * d;
                n += 1;
            }
        }
        out.push(if n == 0 { 0.0 } else { sum / n as f64 });
    }
    Ok(out)
}

/// Latent setting for [`one_step_mse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    /// Posterior mode of the recognition model (`z = mu`).
    MapLatent,
    /// Prior mean (`z = 0`).
    PriorMean,
}

/// One-step-ahead prediction MSE of a Gaussian model against the data,
/// with the latent fixed per `mode`.
pub fn one_step_mse(model: &StornModel, x: &SequenceBatch, mode: LatentMode) -> Result<f64> {
    if !model.likelihood.is_gaussian() {
        return Err(Error::invalid("one_step_mse needs a gaussian-likelihood model"));
    }
    let z = match mode {
        LatentMode::MapLatent => recognition_forward(model, x)?.mu,
        LatentMode::PriorMean => {
            Tensor::zeros(vec![x.steps(), x.batch_size(), model.latent_dim])
        }
    };
    let outputs = generative_forward(model, x, &z)?;
    // Generative outputs are already zero on masked steps, so they satisfy
    // the batch invariant directly.
    let pred = SequenceBatch::new(outputs, x.mask().clone())?;
    mse(&pred, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Recognition, RecognitionMode, StornHyper};
    use crate::rnn::{InitScheme, RnnDims, RnnParams, Transfer};

    fn model_with(
        seed: u64,
        likelihood: Likelihood,
        mode: RecognitionMode,
        input: usize,
    ) -> StornModel {
        StornModel::init(
            &StornHyper {
                input,
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

    fn smooth_batch(seed: u64, t: usize, b: usize, k: usize) -> SequenceBatch {
        let mut rng = stream_rng(seed, 0);
        let mut values = Tensor::zeros(vec![t, b, k]);
        for bi in 0..b {
            let phase: f64 = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
            for ti in 0..t {
                for c in 0..k {
                    let v = (0.2 * ti as f64 + phase + c as f64).sin();
                    values.data_mut()[(ti * b + bi) * k + c] = v;
                }
            }
        }
        SequenceBatch::new(values, Tensor::filled(vec![t, b], 1.0)).unwrap()
    }

    #[test]
    fn empty_window_is_identity() {
        let model = model_with(1, Likelihood::Gaussian { std: 1.0 }, RecognitionMode::Bidirectional, 2);
        let x = smooth_batch(3, 8, 2, 2);
        let spec = CorruptionSpec::all_channels(4, 4, 0);
        let out = impute(&model, &x, &spec).unwrap();
        assert_eq!(out.values().data(), x.values().data());
    }

    #[test]
    fn binary_imputation_thresholds_at_half() {
        // A constant-output net with p = 0.7 everywhere imputes all ones.
        let logit = (0.7f64 / 0.3).ln();
        let gen = RnnParams {
            w_in: Tensor::zeros(vec![2, 3]),
            w_rec: Tensor::zeros(vec![3, 3]),
            w_out: Tensor::zeros(vec![3, 2]),
            b_hid: Tensor::zeros(vec![3]),
            b_out: Tensor::filled(vec![2], logit),
            f_h: Transfer::Tanh,
            f_y: Transfer::Logistic,
        };
        let recog = RnnParams::init(
            RnnDims { input: 2, hidden: 3, output: 4 },
            InitScheme::GlorotSpectral,
            7,
        )
        .unwrap()
        .with_transfers(Transfer::Tanh, Transfer::Identity);
        let model = StornModel::new(
            gen,
            Tensor::zeros(vec![2, 3]),
            Recognition::Causal(recog),
            2,
            Likelihood::Bernoulli,
        )
        .unwrap();
        let values = Tensor::zeros(vec![6, 1, 2]);
        let x = SequenceBatch::new(values, Tensor::filled(vec![6, 1], 1.0)).unwrap();
        let spec = CorruptionSpec::all_channels(2, 4, 0);
        let out = impute(&model, &x, &spec).unwrap();
        for t in 2..4 {
            assert_eq!(out.value_row(t, 0), &[1.0, 1.0]);
        }
        for t in [0, 1, 4, 5] {
            assert_eq!(out.value_row(t, 0), &[0.0, 0.0]);
        }
    }

    #[test]
    fn imputation_never_touches_outside_the_window() {
        let model = model_with(5, Likelihood::Gaussian { std: 0.5 }, RecognitionMode::Bidirectional, 3);
        let x = smooth_batch(7, 12, 3, 3);
        let spec = CorruptionSpec {
            start: 4,
            end: 8,
            channels: Some(vec![0, 2]),
            noise_seed: 9,
        };
        let corrupted = apply_corruption(&x, &spec).unwrap();
        let out = impute(&model, &corrupted, &spec).unwrap();
        let (t_len, b, k) = x.values().dims3().unwrap();
        for t in 0..t_len {
            for bi in 0..b {
                for c in 0..k {
                    let idx = (t * b + bi) * k + c;
                    let in_window = (spec.start..spec.end).contains(&t) && (c == 0 || c == 2);
                    if !in_window {
                        assert_eq!(
                            out.values().data()[idx].to_bits(),
                            corrupted.values().data()[idx].to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn window_validation() {
        let model = model_with(6, Likelihood::Gaussian { std: 1.0 }, RecognitionMode::Causal, 2);
        let x = smooth_batch(11, 6, 1, 2);
        assert!(impute(&model, &x, &CorruptionSpec::all_channels(4, 9, 0)).is_err());
        assert!(impute(&model, &x, &CorruptionSpec::all_channels(5, 3, 0)).is_err());
        let bad_channel = CorruptionSpec {
            start: 0,
            end: 2,
            channels: Some(vec![7]),
            noise_seed: 0,
        };
        assert!(impute(&model, &x, &bad_channel).is_err());
    }

    #[test]
    fn generate_zero_horizon_returns_prefix() {
        let model = model_with(7, Likelihood::Gaussian { std: 1.0 }, RecognitionMode::Causal, 2);
        let x = smooth_batch(13, 5, 2, 2);
        let out = generate(&model, &x, 0, 3).unwrap();
        assert_eq!(out.values().data(), x.values().data());
        assert_eq!(out.mask().data(), x.mask().data());
    }

    #[test]
    fn generate_prefix_fixed_continuation_varies_with_seed() {
        let model = model_with(8, Likelihood::Gaussian { std: 1.0 }, RecognitionMode::Causal, 2);
        let x = smooth_batch(17, 4, 1, 2);
        let a = generate(&model, &x, 6, 1).unwrap();
        let b = generate(&model, &x, 6, 2).unwrap();
        assert_eq!(a.steps(), 10);
        // Prefix region identical.
        for t in 0..4 {
            assert_eq!(a.value_row(t, 0), b.value_row(t, 0));
            assert_eq!(a.value_row(t, 0), x.value_row(t, 0));
        }
        // Continuations differ somewhere.
        assert_ne!(a.values().data(), b.values().data());
        // Same seed reproduces bitwise.
        let c = generate(&model, &x, 6, 1).unwrap();
        assert_eq!(a.values().data(), c.values().data());
    }

    #[test]
    fn generate_without_latents_is_seed_independent() {
        let mut model = model_with(9, Likelihood::Gaussian { std: 1.0 }, RecognitionMode::Causal, 2);
        model.w_lat = Tensor::zeros(vec![2, 3]);
        let x = smooth_batch(19, 4, 1, 2);
        let a = generate(&model, &x, 5, 1).unwrap();
        let b = generate(&model, &x, 5, 99).unwrap();
        assert_eq!(a.values().data(), b.values().data());
    }

    #[test]
    fn mse_contract() {
        let a = smooth_batch(23, 4, 2, 2);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        // Constant offset of 2 on every entry gives exactly 4.
        let mut shifted = a.values().clone();
        for v in shifted.data_mut() {
            *v += 2.0;
        }
        let b = SequenceBatch::new(shifted, a.mask().clone()).unwrap();
        assert!((mse(&a, &b).unwrap() - 4.0).abs() < 1e-12);
        // Symmetry.
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
    }

    #[test]
    fn mse_respects_masks_by_hand() {
        // Values [1, 2] vs [0, 0] with only the first step masked in:
        // mean of 1^2 over one entry = 1.
        let a = SequenceBatch::new(
            Tensor::from_vec(vec![2, 1, 1], vec![1.0, 2.0]).unwrap(),
            Tensor::from_vec(vec![2, 1], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let b = SequenceBatch::new(
            Tensor::from_vec(vec![2, 1, 1], vec![0.0, 0.0]).unwrap(),
            Tensor::from_vec(vec![2, 1], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert!((mse(&a, &b).unwrap() - 2.5).abs() < 1e-15);

        let a1 = SequenceBatch::new(
            Tensor::from_vec(vec![2, 1, 1], vec![1.0, 0.0]).unwrap(),
            Tensor::from_vec(vec![2, 1], vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let b1 = SequenceBatch::new(
            Tensor::from_vec(vec![2, 1, 1], vec![0.0, 0.0]).unwrap(),
            Tensor::from_vec(vec![2, 1], vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert!((mse(&a1, &b1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mse_is_permutation_invariant() {
        let a = smooth_batch(29, 3, 3, 2);
        let b = smooth_batch(31, 3, 3, 2);
        let base = mse(&a, &b).unwrap();
        // Swap batch rows 0 and 2 in both.
        let permute = |s: &SequenceBatch| {
            let (t_len, bn, k) = s.values().dims3().unwrap();
            let perm = [2usize, 1, 0];
            let mut v = Tensor::zeros(vec![t_len, bn, k]);
            let mut m = Tensor::zeros(vec![t_len, bn]);
            for t in 0..t_len {
                for bi in 0..bn {
                    m.data_mut()[t * bn + bi] = s.mask_at(t, perm[bi]);
                    for c in 0..k {
                        v.data_mut()[(t * bn + bi) * k + c] =
                            s.values().data()[(t * bn + perm[bi]) * k + c];
                    }
                }
            }
            SequenceBatch::new(v, m).unwrap()
        };
        let permuted = mse(&permute(&a), &permute(&b)).unwrap();
        assert_eq!(base.to_bits(), permuted.to_bits());
    }

    #[test]
    fn one_step_mse_perfect_model_is_zero() {
        // Constant data c, zero net with b_out = c: predictions equal the
        // data exactly at every step.
        let c = 0.4;
        let gen = RnnParams {
            w_in: Tensor::zeros(vec![1, 2]),
            w_rec: Tensor::zeros(vec![2, 2]),
            w_out: Tensor::zeros(vec![2, 1]),
            b_hid: Tensor::zeros(vec![2]),
            b_out: Tensor::filled(vec![1], c),
            f_h: Transfer::Tanh,
            f_y: Transfer::Identity,
        };
        let recog = RnnParams::init(
            RnnDims { input: 1, hidden: 2, output: 2 },
            InitScheme::GlorotSpectral,
            3,
        )
        .unwrap()
        .with_transfers(Transfer::Tanh, Transfer::Identity);
        let model = StornModel::new(
            gen,
            Tensor::zeros(vec![1, 2]),
            Recognition::Causal(recog),
            1,
            Likelihood::Gaussian { std: 1.0 },
        )
        .unwrap();
        let x = SequenceBatch::new(
            Tensor::filled(vec![5, 2, 1], c),
            Tensor::filled(vec![5, 2], 1.0),
        )
        .unwrap();
        assert_eq!(one_step_mse(&model, &x, LatentMode::MapLatent).unwrap(), 0.0);
        assert_eq!(one_step_mse(&model, &x, LatentMode::PriorMean).unwrap(), 0.0);
    }

    #[test]
    fn one_step_mse_modes_coincide_without_latents() {
        let mut model = model_with(11, Likelihood::Gaussian { std: 1.0 }, RecognitionMode::Causal, 2);
        model.w_lat = Tensor::zeros(vec![2, 3]);
        let x = smooth_batch(37, 9, 3, 2);
        let a = one_step_mse(&model, &x, LatentMode::MapLatent).unwrap();
        let b = one_step_mse(&model, &x, LatentMode::PriorMean).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn one_step_mse_constant_output_on_standardized_data_is_one() {
        // Standardized data has per-channel mean 0 and population variance
        // 1; a model predicting 0 everywhere has MSE exactly the variance.
        let mut rng = stream_rng(41, 0);
        let seqs: Vec<Tensor> = (0..6)
            .map(|_| {
                Tensor::from_fn(vec![20, 1], |_| rand::Rng::random_range(&mut rng, -3.0..3.0))
            })
            .collect();
        let data = crate::data::Dataset::new(seqs, crate::data::FeatureKind::Real).unwrap();
        let stats = crate::data::compute_standardization(&data).unwrap();
        let std_data = crate::data::standardize(&data, &stats).unwrap();
        let batch = crate::data::batch_from_indices(&std_data, &(0..6).collect::<Vec<_>>())
            .unwrap()
            .data;
        let gen = RnnParams {
            w_in: Tensor::zeros(vec![1, 2]),
            w_rec: Tensor::zeros(vec![2, 2]),
            w_out: Tensor::zeros(vec![2, 1]),
            b_hid: Tensor::zeros(vec![2]),
            b_out: Tensor::zeros(vec![1]),
            f_h: Transfer::Tanh,
            f_y: Transfer::Identity,
        };
        let recog = RnnParams::init(
            RnnDims { input: 1, hidden: 2, output: 2 },
            InitScheme::Zero,
            0,
        )
        .unwrap()
        .with_transfers(Transfer::Tanh, Transfer::Identity);
        let model = StornModel::new(
            gen,
            Tensor::zeros(vec![1, 2]),
            Recognition::Causal(recog),
            1,
            Likelihood::Gaussian { std: 1.0 },
        )
        .unwrap();
        let v = one_step_mse(&model, &batch, LatentMode::PriorMean).unwrap();
        assert!((v - 1.0).abs() < 1e-10, "mse {v}");
    }

    #[test]
    fn imputation_rollout_matches_the_batched_generative_pass() {
        // Up to the first reconstructed step the fill-forward rollout sees
        // exactly the corrupted sequence, so the first imputed value must
        // equal the batched generative output there, bit for bit.
        let model = model_with(13, Likelihood::Gaussian { std: 0.6 }, RecognitionMode::Bidirectional, 2);
        let x = smooth_batch(47, 12, 3, 2);
        let spec = CorruptionSpec::all_channels(7, 8, 21);
        let corrupted = apply_corruption(&x, &spec).unwrap();
        let imputed = impute(&model, &corrupted, &spec).unwrap();
        let stats = recognition_forward(&model, &corrupted).unwrap();
        let outputs = generative_forward(&model, &corrupted, &stats.mu).unwrap();
        let (_, b, k) = x.values().dims3().unwrap();
        for bi in 0..b {
            for c in 0..k {
                let idx = (7 * b + bi) * k + c;
                assert_eq!(
                    imputed.values().data()[idx].to_bits(),
                    outputs.data()[idx].to_bits()
                );
            }
        }
    }

    #[test]
    fn corruption_fills_only_the_window() {
        let x = smooth_batch(43, 10, 2, 3);
        let spec = CorruptionSpec::all_channels(3, 6, 17);
        let c = apply_corruption(&x, &spec).unwrap();
        let (t_len, b, k) = x.values().dims3().unwrap();
        let mut changed = 0;
        for t in 0..t_len {
            for bi in 0..b {
                for ch in 0..k {
                    let idx = (t * b + bi) * k + ch;
                    if (3..6).contains(&t) {
                        if c.values().data()[idx] != x.values().data()[idx] {
                            changed += 1;
                        }
                    } else {
                        assert_eq!(c.values().data()[idx], x.values().data()[idx]);
                    }
                }
            }
        }
        assert!(changed > 0);
        // Determinism.
        let c2 = apply_corruption(&x, &spec).unwrap();
        assert_eq!(c.values().data(), c2.values().data());
    }
}
