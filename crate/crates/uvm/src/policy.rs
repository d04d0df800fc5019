//! Stochastic policy families over volatility/correlation controls.
//!
//! Two families are provided:
//!
//! * continuous squashed-Gaussian policies: a latent Gaussian vector is
//!   pushed through tanh rescaling onto the open volatility intervals and,
//!   for the correlation part, through the C-vine map onto valid correlation
//!   matrices. The latent sample is carried with every action so likelihood
//!   ratios never invert the squashing map;
//! * bang-bang policies: factorized Bernoulli decisions selecting each
//!   volatility's extreme value (plus, for two assets with uncertain
//!   correlation, the extreme pairwise correlation).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::corrvine::{cvine_build, CorrFactor, PartialCorrVector};
use crate::dynamics::FactorBatch;
use crate::error::{Result, UvmError};
use crate::math::LowerTriangular;
use crate::model::{CorrMode, ModelSpec};
use crate::neural::MlpParams;

/// Partial correlations from tanh squashing are kept this far away from
/// +-1 so the vine's sqrt(1 - y^2) factors stay bounded away from zero even
/// for fully annealed policies.
pub const CORR_SQUASH_LIMIT: f64 = 1.0 - 1e-7;
/// Volatilities stay strictly inside their open bounds.
const VOL_SQUASH_LIMIT: f64 = 1.0 - 1e-12;
/// Bernoulli probabilities are clamped here to keep log-densities finite.
pub const Q_CLAMP: f64 = 1e-6;

/// Continuous action: volatility vector, correlation factor, and the latent
/// vector that generated them.
#[derive(Debug, Clone)]
pub struct ContinuousAction {
    pub sigma: Vec<f64>,
    pub factor: CorrFactor,
    pub latent: Vec<f64>,
}

/// Bang-bang action: one bit per controlled extreme.
#[derive(Debug, Clone, PartialEq)]
pub struct BangBangAction {
    pub bits: Vec<u8>,
}

/// Squashed-Gaussian policy: latent mean network plus a scalar temperature
/// (isotropic latent covariance temperature * I).
#[derive(Debug, Clone)]
pub struct GaussianPolicyState {
    pub mean_net: MlpParams,
    pub temperature: f64,
}

/// Factorized Bernoulli policy: logit network, probabilities via sigmoid.
#[derive(Debug, Clone)]
pub struct BernoulliPolicyState {
    pub logit_net: MlpParams,
}

/// Either policy family.
#[derive(Debug, Clone)]
pub enum PolicyState {
    Gaussian(GaussianPolicyState),
    Bernoulli(BernoulliPolicyState),
}

/// Policy family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyFamily {
    Continuous,
    BangBang,
}

impl PolicyState {
    pub fn network(&self) -> &MlpParams {
        match self {
            PolicyState::Gaussian(g) => &g.mean_net,
            PolicyState::Bernoulli(b) => &b.logit_net,
        }
    }

    pub fn network_mut(&mut self) -> &mut MlpParams {
        match self {
            PolicyState::Gaussian(g) => &mut g.mean_net,
            PolicyState::Bernoulli(b) => &mut b.logit_net,
        }
    }

    pub fn family(&self) -> PolicyFamily {
        match self {
            PolicyState::Gaussian(_) => PolicyFamily::Continuous,
            PolicyState::Bernoulli(_) => PolicyFamily::BangBang,
        }
    }
}

/// Check family/model compatibility. Bang-bang control of correlations only
/// exists for two assets; beyond that the correlation must be fixed.
pub fn validate_family(spec: &ModelSpec, family: PolicyFamily) -> Result<()> {
    if family == PolicyFamily::BangBang && spec.dim >= 3 && spec.is_uncertain_corr() {
        return Err(UvmError::Config(
            "bang-bang policies control volatilities only; d >= 3 requires fixed correlations"
                .into(),
        ));
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sigmoid output clamped to [Q_CLAMP, 1 - Q_CLAMP].
#[inline]
pub fn clamped_prob(logit: f64) -> f64 {
    sigmoid(logit).clamp(Q_CLAMP, 1.0 - Q_CLAMP)
}

/// Map a latent vector onto a continuous action.
///
/// The first d coordinates produce volatilities by midpoint/halfwidth tanh
/// rescaling. With uncertain correlations the remaining coordinates produce
/// either the bounded pairwise correlation directly (d = 2) or the C-vine
/// partial correlations (d >= 3). With fixed correlations the latent is d
/// dimensional and the precomputed factor is reused.
pub fn squash_map(z: &[f64], spec: &ModelSpec) -> Result<ContinuousAction> {
    if z.len() != spec.latent_dim() {
        return Err(UvmError::ShapeMismatch(format!(
            "latent length {} != expected {}",
            z.len(),
            spec.latent_dim()
        )));
    }
    let d = spec.dim;
    let mut sigma = vec![0.0; d];
    for i in 0..d {
        let mid = 0.5 * (spec.vol_hi[i] + spec.vol_lo[i]);
        let half = 0.5 * (spec.vol_hi[i] - spec.vol_lo[i]);
        let t = z[i].tanh().clamp(-VOL_SQUASH_LIMIT, VOL_SQUASH_LIMIT);
        sigma[i] = mid + half * t;
    }
    let factor = match &spec.corr_mode {
        CorrMode::Fixed(_) => spec.fixed_factor().expect("validated on construction").clone(),
        CorrMode::Uncertain => {
            if d == 1 {
                CorrFactor::identity(1)
            } else if d == 2 {
                let lo = spec.corr_bounds.lower_at(0, 1);
                let hi = spec.corr_bounds.upper_at(0, 1);
                let t = z[d].tanh().clamp(-CORR_SQUASH_LIMIT, CORR_SQUASH_LIMIT);
                let rho = 0.5 * (hi + lo) + 0.5 * (hi - lo) * t;
                factor_from_rho2(rho)?
            } else {
                let y: Vec<f64> = z[d..]
                    .iter()
                    .map(|v| v.tanh().clamp(-CORR_SQUASH_LIMIT, CORR_SQUASH_LIMIT))
                    .collect();
                cvine_build(&PartialCorrVector::new(d, y)?)?
            }
        }
    };
    Ok(ContinuousAction {
        sigma,
        factor,
        latent: z.to_vec(),
    })
}

/// Two-asset correlation factor [[1, 0], [rho, sqrt(1 - rho^2)]].
pub fn factor_from_rho2(rho: f64) -> Result<CorrFactor> {
    if !(rho.abs() < 1.0) {
        return Err(UvmError::InvalidInput(format!(
            "pairwise correlation {rho} outside (-1, 1)"
        )));
    }
    let mut l = LowerTriangular::zeros(2);
    *l.get_mut(0, 0) = 1.0;
    *l.get_mut(1, 0) = rho;
    *l.get_mut(1, 1) = (1.0 - rho * rho).sqrt();
    CorrFactor::from_lower(l)
}

/// Invert the squashing map on strictly interior actions. Used for
/// verification; training always carries the latent with the action.
pub fn squash_unmap(action: &ContinuousAction, spec: &ModelSpec) -> Result<Vec<f64>> {
    let d = spec.dim;
    let mut z = vec![0.0; spec.latent_dim()];
    for i in 0..d {
        let mid = 0.5 * (spec.vol_hi[i] + spec.vol_lo[i]);
        let half = 0.5 * (spec.vol_hi[i] - spec.vol_lo[i]);
        if half <= 0.0 {
            return Err(UvmError::InvalidInput(
                "degenerate volatility interval cannot be unmapped".into(),
            ));
        }
        if action.sigma[i] <= spec.vol_lo[i] || action.sigma[i] >= spec.vol_hi[i] {
            return Err(UvmError::InvalidInput(format!(
                "volatility {} at or outside its open bounds",
                action.sigma[i]
            )));
        }
        let t = ((action.sigma[i] - mid) / half).clamp(-VOL_SQUASH_LIMIT, VOL_SQUASH_LIMIT);
        z[i] = t.atanh();
    }
    if spec.is_uncertain_corr() && d >= 2 {
        if d == 2 {
            let lo = spec.corr_bounds.lower_at(0, 1);
            let hi = spec.corr_bounds.upper_at(0, 1);
            let rho = action.factor.lower().get(1, 0);
            if rho <= lo || rho >= hi {
                return Err(UvmError::InvalidInput(
                    "pairwise correlation at or outside its bounds".into(),
                ));
            }
            let t = ((rho - 0.5 * (hi + lo)) / (0.5 * (hi - lo)))
                .clamp(-CORR_SQUASH_LIMIT, CORR_SQUASH_LIMIT);
            z[d] = t.atanh();
        } else {
            let y = partials_from_factor(action.factor.lower())?;
            for (k, yv) in y.iter().enumerate() {
                if yv.abs() >= 1.0 {
                    return Err(UvmError::InvalidInput(
                        "partial correlation at the boundary".into(),
                    ));
                }
                z[d + k] = yv.atanh();
            }
        }
    }
    Ok(z)
}

/// Recover the packed partial correlations from a vine-built factor by
/// unwinding the row products.
fn partials_from_factor(l: &LowerTriangular) -> Result<Vec<f64>> {
    let d = l.dim();
    let mut y = vec![0.0; crate::corrvine::n_pairs(d)];
    for i in 1..d {
        let mut running = 1.0;
        for k in 0..i {
            if running <= 0.0 {
                return Err(UvmError::Numerical(
                    "degenerate factor row while unwinding partial correlations".into(),
                ));
            }
            let c = l.get(i, k) / running;
            y[crate::corrvine::pair_index(d, k, i)] = c;
            running *= (1.0 - c * c).max(0.0).sqrt();
        }
    }
    Ok(y)
}

impl GaussianPolicyState {
    /// Fresh random policy for the given feature dimension.
    pub fn init(
        spec: &ModelSpec,
        feature_dim: usize,
        hidden: usize,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(UvmError::InvalidInput("temperature must be > 0".into()));
        }
        Ok(GaussianPolicyState {
            mean_net: MlpParams::init_random(feature_dim, hidden, spec.latent_dim(), rng),
            temperature,
        })
    }

    /// Latent means for a feature batch.
    pub fn means(&self, feats: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.mean_net.forward(feats, batch)
    }

    /// Draw one latent: z = m + sqrt(temperature) * eps.
    pub fn sample_latent(&self, mean: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let sd = self.temperature.sqrt();
        mean.iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Sample a full action at one state.
    pub fn sample(&self, feat: &[f64], spec: &ModelSpec, rng: &mut impl Rng) -> Result<ContinuousAction> {
        let mut mean = vec![0.0; self.mean_net.out_dim];
        self.mean_net.forward_single_into(feat, &mut mean);
        let z = self.sample_latent(&mean, rng);
        squash_map(&z, spec)
    }

    /// Deterministic action: squash of the mean.
    pub fn deterministic(&self, feat: &[f64], spec: &ModelSpec) -> Result<ContinuousAction> {
        let mut mean = vec![0.0; self.mean_net.out_dim];
        self.mean_net.forward_single_into(feat, &mut mean);
        squash_map(&mean, spec)
    }
}

impl BernoulliPolicyState {
    pub fn init(
        spec: &ModelSpec,
        feature_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(BernoulliPolicyState {
            logit_net: MlpParams::init_random(feature_dim, hidden, spec.bangbang_bits(), rng),
        })
    }

    /// Clamped probabilities for a feature batch.
    pub fn probabilities(&self, feats: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut out = self.logit_net.forward(feats, batch)?;
        for v in out.iter_mut() {
            if !v.is_finite() {
                return Err(UvmError::NonFinite {
                    context: "bernoulli logits".into(),
                });
            }
            *v = clamped_prob(*v);
        }
        Ok(out)
    }

    /// Sample bits with the given probabilities.
    pub fn sample_bits(&self, q: &[f64], rng: &mut impl Rng) -> BangBangAction {
        BangBangAction {
            bits: q
                .iter()
                .map(|&p| u8::from(rng.random::<f64>() < p))
                .collect(),
        }
    }

    /// Deterministic action: componentwise threshold at 1/2.
    pub fn deterministic(&self, feat: &[f64]) -> Result<BangBangAction> {
        let q = self.probabilities(feat, 1)?;
        Ok(BangBangAction {
            bits: q.iter().map(|&p| u8::from(p >= 0.5)).collect(),
        })
    }
}

/// PPO likelihood ratio for the squashed-Gaussian family. The squashing
/// Jacobians cancel, leaving the plain Gaussian ratio evaluated at the
/// recorded latent:
/// exp[(m_new - m_old)' (lambda I)^{-1} (z - (m_new + m_old)/2)].
pub fn gaussian_ppo_ratio(
    new_mean: &[f64],
    old_mean: &[f64],
    latent: &[f64],
    lambda: f64,
) -> Result<f64> {
    if lambda <= 0.0 {
        return Err(UvmError::InvalidInput("lambda must be > 0".into()));
    }
    if new_mean.len() != old_mean.len() || new_mean.len() != latent.len() {
        return Err(UvmError::ShapeMismatch("ppo ratio vector lengths differ".into()));
    }
    let mut expo = 0.0;
    for k in 0..latent.len() {
        expo += (new_mean[k] - old_mean[k]) * (latent[k] - 0.5 * (new_mean[k] + old_mean[k]));
    }
    Ok((expo / lambda).exp())
}

/// Log-density of a bang-bang action under factorized Bernoulli parameters.
pub fn bernoulli_log_density(q: &[f64], action: &BangBangAction) -> f64 {
    q.iter()
        .zip(action.bits.iter())
        .map(|(&p, &a)| {
            if a == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// Shannon entropy of the factorized Bernoulli policy.
pub fn bernoulli_entropy(q: &[f64]) -> f64 {
    q.iter()
        .map(|&p| -p * p.ln() - (1.0 - p) * (1.0 - p).ln())
        .sum()
}

/// Owned per-batch correlation factors; borrows as a [`FactorBatch`].
pub enum OwnedFactors {
    Shared(CorrFactor),
    PerSample(Vec<CorrFactor>),
}

impl OwnedFactors {
    pub fn as_batch(&self) -> FactorBatch<'_> {
        match self {
            OwnedFactors::Shared(f) => FactorBatch::Shared(f),
            OwnedFactors::PerSample(fs) => FactorBatch::PerSample(fs),
        }
    }
}

/// Volatilities and correlation factors for a batch of continuous latents.
pub fn continuous_controls(
    spec: &ModelSpec,
    latents: &[f64],
    batch: usize,
) -> Result<(Vec<f64>, OwnedFactors)> {
    let d = spec.dim;
    let ldim = spec.latent_dim();
    let mut sigma = vec![0.0; batch * d];
    let per_sample_corr = spec.latent_corr_dim() > 0;
    let mut factors = if per_sample_corr {
        Vec::with_capacity(batch)
    } else {
        Vec::new()
    };
    for r in 0..batch {
        let action = squash_map(&latents[r * ldim..(r + 1) * ldim], spec)?;
        sigma[r * d..(r + 1) * d].copy_from_slice(&action.sigma);
        if per_sample_corr {
            factors.push(action.factor);
        }
    }
    let owned = if per_sample_corr {
        OwnedFactors::PerSample(factors)
    } else {
        OwnedFactors::Shared(match spec.fixed_factor() {
            Some(f) => f.clone(),
            None => CorrFactor::identity(d),
        })
    };
    Ok((sigma, owned))
}

/// Volatilities and correlation factors for a batch of bang-bang bits.
pub fn bangbang_controls(
    spec: &ModelSpec,
    bits: &[u8],
    batch: usize,
) -> Result<(Vec<f64>, OwnedFactors)> {
    let d = spec.dim;
    let nb = spec.bangbang_bits();
    let corr_bit = nb > d;
    let mut sigma = vec![0.0; batch * d];
    let mut factors = if corr_bit { Vec::with_capacity(batch) } else { Vec::new() };
    for r in 0..batch {
        let row = &bits[r * nb..(r + 1) * nb];
        for i in 0..d {
            sigma[r * d + i] =
                spec.vol_lo[i] + f64::from(row[i]) * (spec.vol_hi[i] - spec.vol_lo[i]);
        }
        if corr_bit {
            let rho = if row[d] == 1 {
                spec.corr_bounds.upper_at(0, 1)
            } else {
                spec.corr_bounds.lower_at(0, 1)
            };
            // Extreme bounds are clamped just inside (-1, 1) so the factor
            // stays full-rank.
            let rho = rho.clamp(-CORR_SQUASH_LIMIT, CORR_SQUASH_LIMIT);
            factors.push(factor_from_rho2(rho)?);
        }
    }
    let owned = if corr_bit {
        OwnedFactors::PerSample(factors)
    } else {
        OwnedFactors::Shared(match spec.fixed_factor() {
            Some(f) => f.clone(),
            None => CorrFactor::identity(d),
        })
    };
    Ok((sigma, owned))
}
