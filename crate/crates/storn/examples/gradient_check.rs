//! Gradient checking: reverse-mode gradients of the sRNN NLL and of the
//! STORN bound (eps held fixed) against central finite differences of the
//! same losses.

use rand_distr::Distribution;
use storn::math::finite_difference_grad;
use storn::model::{
    srnn_nll, storn_bound, Likelihood, RecognitionMode, SrnnModel, StornHyper, StornModel,
};
use storn::rnn::{InitScheme, SequenceBatch, Transfer};
use storn::seed::stream_rng;
use storn::tensor::Tensor;

fn random_batch(seed: u64, t: usize, b: usize, k: usize, binary: bool) -> SequenceBatch {
    let mut rng = stream_rng(seed, 0);
    let dist = rand_distr::StandardNormal;
    let values = Tensor::from_fn(vec![t, b, k], |_| {
        if binary {
            if rand::Rng::random::<bool>(&mut rng) {
                1.0
            } else {
                0.0
            }
        } else {
            let v: f64 = dist.sample(&mut rng);
            v
        }
    });
    SequenceBatch::new(values, Tensor::filled(vec![t, b], 1.0)).unwrap()
}

fn max_rel_err(ad: &Tensor, fd: &Tensor) -> f64 {
    ad.data()
        .iter()
        .zip(fd.data())
        .map(|(a, f)| (a - f).abs() / (1e-5f64.max(a.abs().max(f.abs()))))
        .fold(0.0, f64::max)
}

fn main() {
    // sRNN negative log-likelihood.
    let srnn = SrnnModel::init(
        3,
        6,
        Likelihood::Bernoulli,
        Transfer::Logistic,
        InitScheme::GlorotSpectral,
        1,
    )
    .unwrap();
    let x = random_batch(2, 8, 2, 3, true);
    let params = srnn.to_params();
    let tensors: Vec<Tensor> = params.tensors().cloned().collect();
    let fd = finite_difference_grad(
        |ps| {
            let set: storn::ParamSet = params
                .iter()
                .zip(ps)
                .map(|((n, _), t)| (n.to_string(), t.clone()))
                .collect();
            Ok(srnn_nll(&srnn.with_params(&set)?, &x)?.per_sequence.iter().sum::<f64>()
                / x.batch_size() as f64)
        },
        &tensors,
        1e-5,
    )
    .unwrap();
    let grads = storn::model::srnn_batch_mean_grads(&srnn, &x).unwrap();
    let mut worst: f64 = 0.0;
    for ((name, _), (g, f)) in params.iter().zip(grads.tensors().zip(&fd)) {
        let err = max_rel_err(g, f);
        worst = worst.max(err);
        println!("srnn {name:<12} max rel err {err:.2e}");
    }

    // STORN bound with fixed eps, recognition and generative jointly.
    let model = StornModel::init(
        &StornHyper {
            input: 2,
            hidden: 5,
            recog_hidden: 4,
            latent: 2,
            likelihood: Likelihood::Gaussian { std: 0.8 },
            recognition: RecognitionMode::Bidirectional,
            transfer: Transfer::Tanh,
            init: InitScheme::GlorotSpectral,
        },
        3,
    )
    .unwrap();
    let x = random_batch(4, 7, 2, 2, false);
    let mut rng = stream_rng(5, 0);
    let dist = rand_distr::StandardNormal;
    let eps = Tensor::from_fn(vec![7, 2, 2], |_| {
        let v: f64 = dist.sample(&mut rng);
        v
    });
    let params = model.to_params();
    let tensors: Vec<Tensor> = params.tensors().cloned().collect();
    let fd = finite_difference_grad(
        |ps| {
            let set: storn::ParamSet = params
                .iter()
                .zip(ps)
                .map(|((n, _), t)| (n.to_string(), t.clone()))
                .collect();
            let report = storn_bound(&model.with_params(&set)?, &x, &eps)?;
            Ok(report.batch_bound() / x.batch_size() as f64)
        },
        &tensors,
        1e-5,
    )
    .unwrap();
    let grads = storn::model::storn_batch_mean_grads(&model, &x, &eps).unwrap();
    for ((name, _), (g, f)) in params.iter().zip(grads.tensors().zip(&fd)) {
        let err = max_rel_err(g, f);
        worst = worst.max(err);
        println!("storn {name:<16} max rel err {err:.2e}");
    }
    println!("worst relative error: {worst:.2e} (tolerance 1e-5)");
    assert!(worst < 1e-5);
}
