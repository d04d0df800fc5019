//! Controlled market simulation: the multiplicative log-Euler transition,
//! the per-step training state sampler, antithetic Gaussian increments and
//! the path augmentation used by realized-variance payoffs.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::corrvine::CorrFactor;
use crate::error::{Result, UvmError};
use crate::model::ModelSpec;

/// Batch of states, row-major `[batch, state_dim]`. The first `asset_dim`
/// coordinates are strictly positive asset prices; the optional two trailing
/// coordinates are the running sum of squared monitored log-returns and the
/// asset value at the last monitoring date.
#[derive(Debug, Clone)]
pub struct StateBatch {
    pub data: Vec<f64>,
    pub batch: usize,
    pub state_dim: usize,
    pub asset_dim: usize,
}

impl StateBatch {
    pub fn new(batch: usize, state_dim: usize, asset_dim: usize) -> Self {
        StateBatch {
            data: vec![0.0; batch * state_dim],
            batch,
            state_dim,
            asset_dim,
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.state_dim..(r + 1) * self.state_dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.state_dim..(r + 1) * self.state_dim]
    }

    pub fn is_augmented(&self) -> bool {
        self.state_dim == self.asset_dim + 2
    }
}

/// Batch of standard-normal increment vectors, row-major `[batch, d]`.
#[derive(Debug, Clone)]
pub struct GaussianBatch {
    pub draws: Vec<f64>,
    pub batch: usize,
    pub dim: usize,
    pub antithetic: bool,
}

impl GaussianBatch {
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.draws[r * self.dim..(r + 1) * self.dim]
    }
}

/// Draw an antithetic batch: the first half is i.i.d. N(0, I_d), the second
/// half is its negation. The batch size must be even.
pub fn draw_increments(batch: usize, dim: usize, rng: &mut impl Rng) -> Result<GaussianBatch> {
    if batch % 2 != 0 {
        return Err(UvmError::InvalidInput(format!(
            "antithetic batch size must be even, got {batch}"
        )));
    }
    let half = batch / 2;
    let mut draws = vec![0.0; batch * dim];
    for v in draws[..half * dim].iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for k in 0..half * dim {
        draws[half * dim + k] = -draws[k];
    }
    Ok(GaussianBatch {
        draws,
        batch,
        dim,
        antithetic: true,
    })
}

/// Per-sample correlation factors for a batch of actions.
pub enum FactorBatch<'a> {
    /// One factor shared by every sample (fixed-correlation regimes).
    Shared(&'a CorrFactor),
    /// One factor per sample.
    PerSample(&'a [CorrFactor]),
}

impl FactorBatch<'_> {
    #[inline]
    fn at(&self, r: usize) -> &CorrFactor {
        match self {
            FactorBatch::Shared(f) => f,
            FactorBatch::PerSample(fs) => &fs[r],
        }
    }
}

/// One multiplicative log-Euler step for a single sample:
/// x'_i = x_i exp{(r - sigma_i^2 / 2) dt + sqrt(dt) sigma_i (L xi)_i}.
///
/// The drift correction uses sigma_i^2 because the factor rows have unit
/// norm, and the factor L is applied directly so no covariance matrix is
/// ever factorized.
#[inline]
pub fn log_euler_row(
    x: &[f64],
    sigma: &[f64],
    factor: &CorrFactor,
    xi: &[f64],
    rate: f64,
    dt: f64,
    out: &mut [f64],
    corr_scratch: &mut [f64],
) {
    factor.correlate_into(xi, corr_scratch);
    let sqrt_dt = dt.sqrt();
    for i in 0..x.len() {
        let drift = (rate - 0.5 * sigma[i] * sigma[i]) * dt;
        out[i] = x[i] * (drift + sigma[i] * sqrt_dt * corr_scratch[i]).exp();
    }
}

/// Batched log-Euler transition on the asset coordinates. Augmented
/// coordinates, when present, are copied through unchanged (use
/// [`augment_path_state`] afterwards). Aborts on non-finite output.
pub fn log_euler_step(
    x: &StateBatch,
    sigma: &[f64],
    factors: &FactorBatch,
    xi: &GaussianBatch,
    spec: &ModelSpec,
) -> Result<StateBatch> {
    let d = x.asset_dim;
    if xi.batch != x.batch || xi.dim != d || sigma.len() != x.batch * d {
        return Err(UvmError::ShapeMismatch(
            "log_euler_step: incongruent batch shapes".into(),
        ));
    }
    let mut next = StateBatch::new(x.batch, x.state_dim, d);
    let mut scratch = vec![0.0; d];
    for r in 0..x.batch {
        let row_in = x.row(r);
        let row_sigma = &sigma[r * d..(r + 1) * d];
        // Split borrow: operate on this row only.
        let row_out = &mut next.data[r * x.state_dim..(r + 1) * x.state_dim];
        log_euler_row(
            &row_in[..d],
            row_sigma,
            factors.at(r),
            xi.row(r),
            spec.rate,
            spec.dt(),
            &mut row_out[..d],
            &mut scratch,
        );
        row_out[d..].copy_from_slice(&row_in[d..]);
    }
    if next.data.iter().any(|v| !v.is_finite()) {
        return Err(UvmError::NonFinite {
            context: "log-Euler transition output".into(),
        });
    }
    Ok(next)
}

/// Analytic mean and variance of ln(x_i / x0_i) under the training sampler
/// at time t, with the volatility drawn uniformly from [lo, hi].
pub fn log_coord_moments(lo: f64, hi: f64, rate: f64, t: f64) -> (f64, f64) {
    let e_s2 = if hi > lo {
        (hi * hi * hi - lo * lo * lo) / (3.0 * (hi - lo))
    } else {
        lo * lo
    };
    let e_s4 = if hi > lo {
        (hi.powi(5) - lo.powi(5)) / (5.0 * (hi - lo))
    } else {
        lo.powi(4)
    };
    let var_s2 = (e_s4 - e_s2 * e_s2).max(0.0);
    let mean = (rate - 0.5 * e_s2) * t;
    let var = 0.25 * var_s2 * t * t + e_s2 * t;
    (mean, var)
}

/// Number of monitoring dates (k / 12, k >= 1) up to and including time
/// index n. Zero for payoffs without monitoring.
pub fn monitored_dates_up_to(n: usize, spec: &ModelSpec, monitor_count: usize) -> usize {
    if monitor_count == 0 {
        return 0;
    }
    // Monitoring dates coincide with grid points: every steps/monitor_count.
    let stride = spec.steps / monitor_count;
    n / stride
}

/// Validate that the time grid contains every monthly monitoring date.
pub fn validate_monitoring(spec: &ModelSpec, monitor_count: usize) -> Result<usize> {
    if monitor_count == 0 {
        return Err(UvmError::Config("monitor count must be >= 1".into()));
    }
    if spec.steps % monitor_count != 0 {
        return Err(UvmError::Config(format!(
            "steps ({}) must be a multiple of the number of monitoring dates ({monitor_count})",
            spec.steps
        )));
    }
    Ok(spec.steps / monitor_count)
}

/// Sample a training batch of states at time index n.
///
/// Asset coordinates are drawn componentwise as
/// x0_i exp{(r - sigma_i^2/2) t_n + sigma_i sqrt(t_n) Y_i} with independent
/// standard normals Y and volatilities uniform in their bounds; correlations
/// are deliberately ignored. At n = 0 the rows all equal the spot.
///
/// When `monitor_count > 0` the two augmentation coordinates are produced by
/// simulating the same volatility scenario at monitoring-date granularity, so
/// that (assets, running sum, last monitored value) are path-consistent.
pub fn sample_states(
    n: usize,
    batch: usize,
    spec: &ModelSpec,
    monitor_count: usize,
    rng: &mut impl Rng,
) -> Result<StateBatch> {
    let d = spec.dim;
    let aug = monitor_count > 0;
    let state_dim = if aug { d + 2 } else { d };
    if n >= spec.steps {
        return Err(UvmError::InvalidInput(format!(
            "state sampling index {n} out of range (N = {})",
            spec.steps
        )));
    }
    let mut out = StateBatch::new(batch, state_dim, d);
    let t_n = spec.time(n);
    if aug && d != 1 {
        return Err(UvmError::Config(
            "augmented state sampling is only defined for single-asset payoffs".into(),
        ));
    }
    for r in 0..batch {
        if !aug {
            let row = out.row_mut(r);
            for i in 0..d {
                if n == 0 {
                    row[i] = spec.spot[i];
                } else {
                    let sigma = rng.random_range(spec.vol_lo[i]..=spec.vol_hi[i]);
                    let y: f64 = rng.sample(StandardNormal);
                    row[i] = spec.spot[i]
                        * ((spec.rate - 0.5 * sigma * sigma) * t_n + sigma * t_n.sqrt() * y).exp();
                }
            }
        } else {
            // Path-consistent augmented sampling: simulate the monitored
            // monthly log-returns, then the remainder up to t_n.
            let k = monitored_dates_up_to(n, spec, monitor_count);
            let sigma = rng.random_range(spec.vol_lo[0]..=spec.vol_hi[0]);
            let month = spec.horizon / monitor_count as f64;
            let mut log_level = 0.0;
            let mut a1 = 0.0;
            for _ in 0..k {
                let y: f64 = rng.sample(StandardNormal);
                let ret = (spec.rate - 0.5 * sigma * sigma) * month + sigma * month.sqrt() * y;
                log_level += ret;
                a1 += ret * ret;
            }
            let a2 = spec.spot[0] * log_level.exp();
            let tail = t_n - k as f64 * month;
            let x = if tail > 1e-12 {
                let y: f64 = rng.sample(StandardNormal);
                a2 * ((spec.rate - 0.5 * sigma * sigma) * tail + sigma * tail.sqrt() * y).exp()
            } else {
                a2
            };
            let row = out.row_mut(r);
            row[0] = x;
            row[1] = a1;
            row[2] = a2;
        }
    }
    Ok(out)
}

/// Update the augmentation coordinates across the step n -> n+1: when
/// t_{n+1} is a monitoring date, the squared log-return since the previous
/// monitoring date is added to the running sum and the reference level is
/// reset to the new asset value.
pub fn augment_path_state(
    next: &mut StateBatch,
    n: usize,
    spec: &ModelSpec,
    monitor_count: usize,
) -> Result<()> {
    let stride = validate_monitoring(spec, monitor_count)?;
    if !next.is_augmented() {
        return Err(UvmError::ShapeMismatch(
            "augment_path_state requires an augmented state batch".into(),
        ));
    }
    if (n + 1) % stride != 0 {
        return Ok(());
    }
    let d = next.asset_dim;
    for r in 0..next.batch {
        let row = next.row_mut(r);
        let ret = (row[0] / row[d + 1]).ln();
        row[d] += ret * ret;
        row[d + 1] = row[0];
    }
    Ok(())
}

/// Network input features: componentwise ln(x_i / x0_i), plus the raw
/// augmentation coordinates (running sum, ln of the monitored level) when
/// present. Per-step affine normalization is held by the networks.
pub fn state_features_into(row: &[f64], spec: &ModelSpec, out: &mut [f64]) {
    let d = spec.dim;
    for i in 0..d {
        out[i] = (row[i] / spec.spot[i]).ln();
    }
    if row.len() == d + 2 {
        out[d] = row[d];
        out[d + 1] = (row[d + 1] / spec.spot[0]).ln();
    }
}

/// Batched feature extraction.
pub fn batch_features(states: &StateBatch, spec: &ModelSpec) -> Vec<f64> {
    let fdim = states.state_dim;
    let mut out = vec![0.0; states.batch * fdim];
    for r in 0..states.batch {
        state_features_into(states.row(r), spec, &mut out[r * fdim..(r + 1) * fdim]);
    }
    out
}

/// Per-step input normalization (shift, scale) for the feature vector,
/// derived from the analytic moments of the state sampler at time t_n. The
/// scale is floored away from zero so step 0 (deterministic features) stays
/// well-defined.
pub fn feature_normalization(
    n: usize,
    spec: &ModelSpec,
    monitor_count: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = spec.dim;
    let fdim = if monitor_count > 0 { d + 2 } else { d };
    let mut shift = vec![0.0; fdim];
    let mut scale = vec![1.0; fdim];
    let t_n = spec.time(n);
    for i in 0..d {
        let (m, v) = log_coord_moments(spec.vol_lo[i], spec.vol_hi[i], spec.rate, t_n);
        shift[i] = m;
        scale[i] = v.sqrt().max(1e-6);
    }
    if monitor_count > 0 {
        let k = monitored_dates_up_to(n, spec, monitor_count);
        let tau_k = spec.horizon * k as f64 / monitor_count as f64;
        let e_s2 = if spec.vol_hi[0] > spec.vol_lo[0] {
            (spec.vol_hi[0].powi(3) - spec.vol_lo[0].powi(3))
                / (3.0 * (spec.vol_hi[0] - spec.vol_lo[0]))
        } else {
            spec.vol_lo[0] * spec.vol_lo[0]
        };
        // Running sum of squared monthly returns has mean ~ E[sigma^2] tau_k.
        shift[d] = e_s2 * tau_k;
        scale[d] = (e_s2 * tau_k).max(1e-4);
        let (m, v) = log_coord_moments(spec.vol_lo[0], spec.vol_hi[0], spec.rate, tau_k);
        shift[d + 1] = m;
        scale[d + 1] = v.sqrt().max(1e-6);
    }
    (shift, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CorrMode;
    use crate::rng::{stream, Domain};

    fn spec_1d() -> ModelSpec {
        ModelSpec::uniform(1, 100.0, 0.0, 1.0, 1, 0.1, 0.2, 0.0, 0.0, CorrMode::Uncertain)
            .unwrap()
    }

    #[test]
    fn deterministic_increment_matches_exponent_arithmetic() {
        let spec = spec_1d();
        let mut x = StateBatch::new(1, 1, 1);
        x.data[0] = 100.0;
        let xi = GaussianBatch {
            draws: vec![0.0],
            batch: 1,
            dim: 1,
            antithetic: false,
        };
        let factor = CorrFactor::identity(1);
        let next = log_euler_step(
            &x,
            &[0.2],
            &FactorBatch::Shared(&factor),
            &xi,
            &spec,
        )
        .unwrap();
        assert!((next.data[0] - 100.0 * (-0.02f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn antithetic_product_identity() {
        let spec = spec_1d();
        let mut x = StateBatch::new(2, 1, 1);
        x.data = vec![100.0, 100.0];
        let xi = GaussianBatch {
            draws: vec![0.7, -0.7],
            batch: 2,
            dim: 1,
            antithetic: true,
        };
        let factor = CorrFactor::identity(1);
        let sigma = vec![0.15, 0.15];
        let next = log_euler_step(&x, &sigma, &FactorBatch::Shared(&factor), &xi, &spec).unwrap();
        let product = next.data[0] * next.data[1];
        let expect = 100.0f64 * 100.0 * (2.0f64 * (0.0 - 0.5 * 0.15 * 0.15)).exp();
        assert!((product - expect).abs() < 1e-8);
    }

    #[test]
    fn martingale_at_zero_rate() {
        let spec = spec_1d();
        let mut rng = stream(1, Domain::Check { case: 10 });
        let n_paths = 200_000;
        let xi = draw_increments(n_paths, 1, &mut rng).unwrap();
        let mut x = StateBatch::new(n_paths, 1, 1);
        x.data.iter_mut().for_each(|v| *v = 100.0);
        let sigma = vec![0.2; n_paths];
        let factor = CorrFactor::identity(1);
        let next = log_euler_step(&x, &sigma, &FactorBatch::Shared(&factor), &xi, &spec).unwrap();
        // i.i.d. units are antithetic pair means.
        let half = n_paths / 2;
        let pairs: Vec<f64> = (0..half)
            .map(|i| 0.5 * (next.data[i] + next.data[half + i]))
            .collect();
        let (mean, var) = crate::math::mean_var(&pairs);
        let se = (var / half as f64).sqrt();
        assert!(
            (mean - 100.0).abs() < 4.0 * se,
            "martingale violated: mean {mean}, se {se}"
        );
    }

    #[test]
    fn increments_are_antithetic_and_reproducible() {
        let mut rng = stream(2, Domain::Check { case: 11 });
        let g = draw_increments(64, 3, &mut rng).unwrap();
        for k in 0..32 * 3 {
            assert_eq!(g.draws[k], -g.draws[32 * 3 + k]);
        }
        // Pair sums cancel exactly, so the batch mean is zero by construction.
        let sum: f64 = (0..32 * 3).map(|k| g.draws[k] + g.draws[32 * 3 + k]).sum();
        assert_eq!(sum, 0.0);
        let mut rng2 = stream(2, Domain::Check { case: 11 });
        let g2 = draw_increments(64, 3, &mut rng2).unwrap();
        assert_eq!(g.draws, g2.draws);
        assert!(draw_increments(7, 3, &mut rng2).is_err());
    }

    #[test]
    fn increment_covariance_is_identity() {
        let mut rng = stream(3, Domain::Check { case: 12 });
        let batch = 40_000;
        let g = draw_increments(batch, 2, &mut rng).unwrap();
        // Products are identical on the two antithetic halves, so only the
        // first half carries independent information.
        let half = batch / 2;
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for r in 0..half {
                    acc += g.row(r)[i] * g.row(r)[j];
                }
                let cov = acc / half as f64;
                let expect = if i == j { 1.0 } else { 0.0 };
                // SE of the product moment is sqrt(2/half) on the diagonal.
                let tol = 4.0 * (2.0 / half as f64).sqrt();
                assert!((cov - expect).abs() < tol, "cov[{i}{j}] = {cov}");
            }
        }
    }

    #[test]
    fn sampler_at_zero_returns_spot() {
        let spec = ModelSpec::uniform(
            3,
            100.0,
            0.0,
            1.0,
            4,
            0.1,
            0.2,
            -0.5,
            0.5,
            CorrMode::Uncertain,
        )
        .unwrap();
        let mut rng = stream(4, Domain::Check { case: 13 });
        let s = sample_states(0, 8, &spec, 0, &mut rng).unwrap();
        for r in 0..8 {
            assert_eq!(s.row(r), &[100.0, 100.0, 100.0]);
        }
    }

    #[test]
    fn sampler_mean_and_cross_correlation() {
        let spec = ModelSpec::uniform(
            2,
            100.0,
            0.0,
            1.0,
            4,
            0.1,
            0.2,
            -0.5,
            0.5,
            CorrMode::Uncertain,
        )
        .unwrap();
        let mut rng = stream(5, Domain::Check { case: 14 });
        let batch = 200_000;
        let s = sample_states(2, batch, &spec, 0, &mut rng).unwrap();
        // Lognormal mean identity at r = 0: E[x_i] = x0.
        for i in 0..2 {
            let col: Vec<f64> = (0..batch).map(|r| s.row(r)[i]).collect();
            let (mean, var) = crate::math::mean_var(&col);
            let se = (var / batch as f64).sqrt();
            assert!((mean - 100.0).abs() < 4.0 * se, "mean {mean} se {se}");
        }
        // Components are uncorrelated by construction.
        let logs: Vec<(f64, f64)> = (0..batch)
            .map(|r| ((s.row(r)[0] / 100.0).ln(), (s.row(r)[1] / 100.0).ln()))
            .collect();
        let m0 = logs.iter().map(|p| p.0).sum::<f64>() / batch as f64;
        let m1 = logs.iter().map(|p| p.1).sum::<f64>() / batch as f64;
        let mut c00 = 0.0;
        let mut c11 = 0.0;
        let mut c01 = 0.0;
        for (a, b) in &logs {
            c00 += (a - m0) * (a - m0);
            c11 += (b - m1) * (b - m1);
            c01 += (a - m0) * (b - m1);
        }
        let corr = c01 / (c00 * c11).sqrt();
        assert!(corr.abs() < 4.0 / (batch as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn terminal_covariance_matches_scenario() {
        // Fixed sigma and correlation: after N steps the log-return sample
        // covariance approaches dt * N * diag(sigma) rho diag(sigma).
        let rho = ModelSpec::equicorrelation(2, 0.5);
        let spec = ModelSpec::uniform(
            2,
            100.0,
            0.0,
            1.0,
            4,
            0.1,
            0.2,
            0.5,
            0.5,
            CorrMode::Fixed(rho.clone()),
        )
        .unwrap();
        let factor = spec.fixed_factor().unwrap().clone();
        let mut rng = stream(6, Domain::Check { case: 15 });
        let batch = 100_000;
        let sigma_vec = vec![0.2, 0.1];
        let mut states = StateBatch::new(batch, 2, 2);
        for r in 0..batch {
            states.row_mut(r).copy_from_slice(&[100.0, 100.0]);
        }
        let mut sigma = vec![0.0; batch * 2];
        for r in 0..batch {
            sigma[r * 2] = sigma_vec[0];
            sigma[r * 2 + 1] = sigma_vec[1];
        }
        for _ in 0..spec.steps {
            let xi = draw_increments(batch, 2, &mut rng).unwrap();
            states = log_euler_step(&states, &sigma, &FactorBatch::Shared(&factor), &xi, &spec)
                .unwrap();
        }
        let logs: Vec<(f64, f64)> = (0..batch)
            .map(|r| ((states.row(r)[0] / 100.0).ln(), (states.row(r)[1] / 100.0).ln()))
            .collect();
        let m0 = logs.iter().map(|p| p.0).sum::<f64>() / batch as f64;
        let m1 = logs.iter().map(|p| p.1).sum::<f64>() / batch as f64;
        let mut cov = [[0.0f64; 2]; 2];
        for (a, b) in &logs {
            cov[0][0] += (a - m0) * (a - m0);
            cov[0][1] += (a - m0) * (b - m1);
            cov[1][1] += (b - m1) * (b - m1);
        }
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= batch as f64;
            }
        }
        let expect = [
            [0.04, 0.5 * 0.2 * 0.1],
            [0.5 * 0.2 * 0.1, 0.01],
        ];
        assert!((cov[0][0] - expect[0][0]).abs() < 5e-4);
        assert!((cov[0][1] - expect[0][1]).abs() < 5e-4);
        assert!((cov[1][1] - expect[1][1]).abs() < 2e-4);
    }

    #[test]
    fn augmentation_running_sum() {
        // 12 monitoring dates on a 24-step annual grid: stride 2.
        let spec = ModelSpec::uniform(
            1,
            100.0,
            0.0,
            1.0,
            24,
            0.1,
            0.2,
            0.0,
            0.0,
            CorrMode::Uncertain,
        )
        .unwrap();
        assert_eq!(validate_monitoring(&spec, 12).unwrap(), 2);
        // Constant path: running sum stays zero through all dates.
        let mut s = StateBatch::new(1, 3, 1);
        s.data = vec![100.0, 0.0, 100.0];
        for n in 0..24 {
            augment_path_state(&mut s, n, &spec, 12).unwrap();
        }
        assert_eq!(s.data, vec![100.0, 0.0, 100.0]);
        // Manual single-path trace.
        let levels = [
            102.0, 99.0, 101.5, 104.0, 97.0, 103.0, 100.5, 98.0, 105.0, 96.0, 102.5, 100.0,
        ];
        let mut s = StateBatch::new(1, 3, 1);
        s.data = vec![100.0, 0.0, 100.0];
        let mut expect_a1 = 0.0;
        let mut prev = 100.0f64;
        for n in 0..24 {
            // Asset evolves to the next monthly level at monitoring steps.
            if (n + 1) % 2 == 0 {
                let lvl = levels[(n + 1) / 2 - 1];
                s.data[0] = lvl;
                augment_path_state(&mut s, n, &spec, 12).unwrap();
                let r = (lvl / prev).ln();
                expect_a1 += r * r;
                prev = lvl;
                assert!((s.data[1] - expect_a1).abs() < 1e-14);
                assert_eq!(s.data[2], lvl);
            } else {
                augment_path_state(&mut s, n, &spec, 12).unwrap();
            }
        }
        // Before the very first monitoring date nothing has accumulated.
        let spec2 = spec.clone();
        let mut s2 = StateBatch::new(1, 3, 1);
        s2.data = vec![123.0, 0.0, 100.0];
        augment_path_state(&mut s2, 0, &spec2, 12).unwrap();
        assert_eq!(s2.data, vec![123.0, 0.0, 100.0]);
        // Rejects a grid that misses monitoring dates.
        let bad = ModelSpec::uniform(
            1,
            100.0,
            0.0,
            1.0,
            10,
            0.1,
            0.2,
            0.0,
            0.0,
            CorrMode::Uncertain,
        )
        .unwrap();
        assert!(validate_monitoring(&bad, 12).is_err());
    }

    #[test]
    fn augmented_sampler_is_path_consistent() {
        let spec = ModelSpec::uniform(
            1,
            100.0,
            0.0,
            1.0,
            24,
            0.1,
            0.2,
            0.0,
            0.0,
            CorrMode::Uncertain,
        )
        .unwrap();
        let mut rng = stream(7, Domain::Check { case: 16 });
        let s = sample_states(13, 64, &spec, 12, &mut rng).unwrap();
        for r in 0..64 {
            let row = s.row(r);
            assert!(row[0] > 0.0);
            assert!(row[1] >= 0.0);
            assert!(row[2] > 0.0);
        }
        // At n = 0 the augmentation is (0, spot).
        let s0 = sample_states(0, 4, &spec, 12, &mut rng).unwrap();
        for r in 0..4 {
            assert_eq!(s0.row(r), &[100.0, 0.0, 100.0]);
        }
    }

    #[test]
    fn feature_normalization_is_finite_and_positive() {
        let spec = ModelSpec::uniform(
            2,
            100.0,
            0.0,
            1.0,
            8,
            0.1,
            0.2,
            -0.5,
            0.5,
            CorrMode::Uncertain,
        )
        .unwrap();
        for n in 0..8 {
            let (shift, scale) = feature_normalization(n, &spec, 0);
            assert!(shift.iter().all(|v| v.is_finite()));
            assert!(scale.iter().all(|&v| v > 0.0));
        }
    }
}
