//! Property suites used as the correctness gate.
//!
//! Each check returns a [`PropertyResult`] with the measured quantity so the
//! command-line runner can print one line per property. The sizes and
//! tolerances are fixed here, not configurable: they are the gate.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::corrvine::{cvine_build, cvine_pairwise, n_pairs, PartialCorrVector};
use crate::dynamics::{draw_increments, log_euler_step, FactorBatch, StateBatch};
use crate::math::mean_var;
use crate::model::{CorrMode, ModelSpec};
use crate::neural::MlpParams;
use crate::policy::{bernoulli_log_density, gaussian_ppo_ratio, BangBangAction};
use crate::rng::{stream, Domain};

/// Outcome of one property check.
#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        PropertyResult {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

/// Positive definiteness, unit diagonal, unit row norms and the equality of
/// the two pairwise-correlation routes, over 10^4 random draws for each
/// dimension from 2 to 10.
pub fn check_cvine(seed: u64) -> PropertyResult {
    let mut rng = stream(seed, Domain::Check { case: 70 });
    let draws_per_dim = 10_000;
    let mut min_eig = f64::INFINITY;
    let mut max_diag_err: f64 = 0.0;
    let mut max_row_err: f64 = 0.0;
    let mut max_gram_err: f64 = 0.0;
    for dim in 2..=10usize {
        for _ in 0..draws_per_dim {
            let y: Vec<f64> = (0..n_pairs(dim))
                .map(|_| rng.random_range(-0.999..0.999))
                .collect();
            let yv = PartialCorrVector::new(dim, y).expect("in range");
            let factor = cvine_build(&yv).expect("valid partials");
            for i in 0..dim {
                let norm2: f64 = factor.lower().row(i).iter().map(|v| v * v).sum();
                max_row_err = max_row_err.max((norm2 - 1.0).abs());
            }
            let gram = factor.correlation();
            for i in 0..dim {
                max_diag_err = max_diag_err.max((gram.get(i, i) - 1.0).abs());
            }
            let rho = cvine_pairwise(&yv).expect("valid partials");
            for i in 0..dim {
                for j in 0..dim {
                    max_gram_err = max_gram_err.max((gram.get(i, j) - rho.get(i, j)).abs());
                }
            }
            min_eig = min_eig.min(gram.min_eigenvalue());
        }
    }
    let pass =
        min_eig > 0.0 && max_diag_err < 1e-12 && max_row_err < 1e-12 && max_gram_err < 1e-12;
    PropertyResult::new(
        "cvine_positive_definite",
        pass,
        format!(
            "min eigenvalue {min_eig:.3e}, diag err {max_diag_err:.3e}, row-norm err \
             {max_row_err:.3e}, route mismatch {max_gram_err:.3e}"
        ),
    )
}

/// Bernoulli densities sum to one over the full outcome set, d = 1..10.
pub fn check_bernoulli_density(seed: u64) -> PropertyResult {
    let mut rng = stream(seed, Domain::Check { case: 71 });
    let mut worst: f64 = 0.0;
    for d in 1..=10usize {
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..0.99)).collect();
        let mut total = 0.0;
        for mask in 0..(1usize << d) {
            let bits: Vec<u8> = (0..d).map(|k| ((mask >> k) & 1) as u8).collect();
            total += bernoulli_log_density(&q, &BangBangAction { bits }).exp();
        }
        worst = worst.max((total - 1.0).abs());
    }
    PropertyResult::new(
        "bernoulli_density_normalized",
        worst < 1e-12,
        format!("max |sum - 1| = {worst:.3e} over d = 1..10"),
    )
}

/// The explicit Gaussian likelihood ratio agrees with the direct density
/// quotient (the squashing Jacobians cancel).
pub fn check_ppo_ratio(seed: u64) -> PropertyResult {
    let mut rng = stream(seed, Domain::Check { case: 72 });
    let log_phi = |z: &[f64], m: &[f64], lambda: f64| -> f64 {
        let k = z.len() as f64;
        let q: f64 = z.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * q / lambda - 0.5 * k * (2.0 * std::f64::consts::PI * lambda).ln()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let dim = rng.random_range(1..16);
        let lambda = rng.random_range(0.005..2.0);
        let mn: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mo: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.5..2.5)).collect();
        let ratio = gaussian_ppo_ratio(&mn, &mo, &z, lambda).expect("valid inputs");
        let direct = (log_phi(&z, &mn, lambda) - log_phi(&z, &mo, lambda)).exp();
        worst = worst.max((ratio - direct).abs() / direct.max(1.0));
    }
    PropertyResult::new(
        "ppo_ratio_matches_density_quotient",
        worst < 1e-10,
        format!("max relative mismatch {worst:.3e}"),
    )
}

/// Analytic network gradients against central finite differences on a small
/// network, all parameter groups included.
pub fn check_mlp_gradients(seed: u64) -> PropertyResult {
    let mut rng = stream(seed, Domain::Check { case: 73 });
    let mut p = MlpParams::init_random(3, 4, 2, &mut rng);
    for b in p.b1.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    for g in p.ln_gain.iter_mut() {
        *g = rng.random_range(0.5..1.5);
    }
    for b in p.ln_bias.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    let batch = 7;
    let x: Vec<f64> = (0..batch * 3).map(|_| rng.random_range(-1.5..1.5)).collect();
    let up: Vec<f64> = (0..batch * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let analytic = p.backward(&x, &up, batch).expect("shapes match");
    let loss = |p: &MlpParams| -> f64 {
        p.forward(&x, batch)
            .expect("finite")
            .iter()
            .zip(up.iter())
            .map(|(a, b)| a * b)
            .sum()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let fields: [(&str, fn(&mut MlpParams) -> &mut Vec<f64>, fn(&crate::neural::MlpGrads) -> &Vec<f64>); 6] = [
        ("w1", |p| &mut p.w1, |g| &g.w1),
        ("b1", |p| &mut p.b1, |g| &g.b1),
        ("ln_gain", |p| &mut p.ln_gain, |g| &g.ln_gain),
        ("ln_bias", |p| &mut p.ln_bias, |g| &g.ln_bias),
        ("w2", |p| &mut p.w2, |g| &g.w2),
        ("b2", |p| &mut p.b2, |g| &g.b2),
    ];
    for (_, get_mut, get_grad) in fields {
        let ga = get_grad(&analytic).clone();
        for k in 0..ga.len() {
            let mut pp = p.clone();
            get_mut(&mut pp)[k] += h;
            let mut pm = p.clone();
            get_mut(&mut pm)[k] -= h;
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
            let denom = ga[k].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(((ga[k] - fd) / denom).abs());
        }
    }
    PropertyResult::new(
        "mlp_gradients_match_finite_differences",
        worst < 1e-5,
        format!("max relative error {worst:.3e}"),
    )
}

/// Monte Carlo average of the log-density gradient with respect to the
/// policy outputs vanishes under the policy's own samples, within five
/// standard errors on 10^5 samples, for both families.
pub fn check_score_function(seed: u64) -> PropertyResult {
    let n = 100_000;
    let mut rng = stream(seed, Domain::Check { case: 74 });

    // Continuous family: grad wrt the latent mean is (z - m) / lambda.
    let lambda: f64 = 0.3;
    let mean = [0.4, -0.2, 0.9];
    let mut acc = [0.0f64; 3];
    let mut acc2 = [0.0f64; 3];
    for _ in 0..n {
        for k in 0..3 {
            let z = mean[k] + lambda.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let g = (z - mean[k]) / lambda;
            acc[k] += g;
            acc2[k] += g * g;
        }
    }
    let (mut norm2_g, mut se2_g) = (0.0, 0.0);
    for k in 0..3 {
        let m = acc[k] / n as f64;
        let v = acc2[k] / n as f64 - m * m;
        norm2_g += m * m;
        se2_g += v / n as f64;
    }
    let gauss_sigmas = (norm2_g / se2_g).sqrt();

    // Bang-bang family: grad wrt the logits is a - q.
    let q = [0.25, 0.7, 0.5, 0.9];
    let mut acc = [0.0f64; 4];
    let mut acc2 = [0.0f64; 4];
    for _ in 0..n {
        for k in 0..4 {
            let a = f64::from(rng.random::<f64>() < q[k]);
            let g = a - q[k];
            acc[k] += g;
            acc2[k] += g * g;
        }
    }
    let (mut norm2_b, mut se2_b) = (0.0, 0.0);
    for k in 0..4 {
        let m = acc[k] / n as f64;
        let v = acc2[k] / n as f64 - m * m;
        norm2_b += m * m;
        se2_b += v / n as f64;
    }
    let bern_sigmas = (norm2_b / se2_b).sqrt();

    let pass = gauss_sigmas < 5.0 && bern_sigmas < 5.0;
    PropertyResult::new(
        "score_function_zero_mean",
        pass,
        format!(
            "gaussian |mean| = {gauss_sigmas:.2} se, bernoulli |mean| = {bern_sigmas:.2} se"
        ),
    )
}

/// Martingale property of the log-Euler step at zero rate: the sample mean
/// over one million antithetic paths stays within four standard errors of
/// the initial value, with a correlated two-asset scenario.
pub fn check_martingale(seed: u64) -> PropertyResult {
    let spec = ModelSpec::uniform(
        2,
        100.0,
        0.0,
        1.0,
        1,
        0.1,
        0.2,
        -0.5,
        0.5,
        CorrMode::Uncertain,
    )
    .expect("valid spec");
    let mut rng = stream(seed, Domain::Check { case: 75 });
    let n_paths = 1_000_000;
    let y = PartialCorrVector::new(2, vec![0.4]).expect("in range");
    let factor = cvine_build(&y).expect("valid");
    let xi = draw_increments(n_paths, 2, &mut rng).expect("even batch");
    let mut x = StateBatch::new(n_paths, 2, 2);
    for r in 0..n_paths {
        x.row_mut(r).copy_from_slice(&[100.0, 100.0]);
    }
    let mut sigma = vec![0.0; n_paths * 2];
    for r in 0..n_paths {
        sigma[r * 2] = 0.2;
        sigma[r * 2 + 1] = 0.15;
    }
    let next = log_euler_step(&x, &sigma, &FactorBatch::Shared(&factor), &xi, &spec)
        .expect("finite step");
    let half = n_paths / 2;
    let mut worst_sigmas: f64 = 0.0;
    let mut detail = String::new();
    for i in 0..2 {
        let pairs: Vec<f64> = (0..half)
            .map(|r| 0.5 * (next.row(r)[i] + next.row(half + r)[i]))
            .collect();
        let (mean, var) = mean_var(&pairs);
        let se = (var / half as f64).sqrt();
        let sigmas = (mean - 100.0).abs() / se;
        worst_sigmas = worst_sigmas.max(sigmas);
        detail.push_str(&format!("asset {i}: mean {mean:.4} ({sigmas:.2} se); "));
    }
    PropertyResult::new("log_euler_martingale", worst_sigmas < 4.0, detail)
}

/// Run the full property suite.
pub fn run_all(seed: u64) -> Vec<PropertyResult> {
    vec![
        check_cvine(seed),
        check_bernoulli_density(seed),
        check_ppo_ratio(seed),
        check_mlp_gradients(seed),
        check_score_function(seed),
        check_martingale(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_properties_pass() {
        for r in run_all(2024) {
            assert!(r.pass, "{}: {}", r.name, r.detail);
        }
    }
}
