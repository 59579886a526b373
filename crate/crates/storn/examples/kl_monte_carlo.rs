//! The closed-form KL from the recognition Gaussian to the standard-normal
//! prior, cross-checked against a Monte Carlo estimate of
//! `E_q[log q(z) - log p(z)]`.

use rand_distr::Distribution;
use storn::model::{kl_standard_normal, PosteriorStats};
use storn::seed::stream_rng;
use storn::tensor::Tensor;

fn main() {
    let mut rng = stream_rng(1, 0);
    let dist = rand_distr::StandardNormal;
    println!("{:>8} {:>8} {:>12} {:>12} {:>10}", "mu", "sigma", "closed", "monte-carlo", "std err");
    for _ in 0..8 {
        let mu: f64 = rand::Rng::random_range(&mut rng, -2.0..2.0);
        let sigma: f64 = rand::Rng::random_range(&mut rng, 0.3..3.0);
        let stats = PosteriorStats {
            mu: Tensor::filled(vec![1, 1, 1], mu),
            sigma: Tensor::filled(vec![1, 1, 1], sigma),
            sigma_sq: Tensor::filled(vec![1, 1, 1], sigma * sigma),
        };
        let mask = Tensor::filled(vec![1, 1], 1.0);
        let closed = kl_standard_normal(&stats, &mask).unwrap()[0];

        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let e: f64 = dist.sample(&mut rng);
            let z = mu + sigma * e;
            let log_q = -0.5 * e * e - sigma.ln();
            let log_p = -0.5 * z * z;
            let d = log_q - log_p;
            sum += d;
            sum_sq += d * d;
        }
        let mc = sum / n as f64;
        let se = ((sum_sq / n as f64 - mc * mc) / n as f64).sqrt();
        println!("{mu:>8.3} {sigma:>8.3} {closed:>12.6} {mc:>12.6} {se:>10.2e}");
        assert!((mc - closed).abs() <= 3.0 * se + 1e-12);
    }
    println!("all closed-form values within 3 standard errors of Monte Carlo");
}
