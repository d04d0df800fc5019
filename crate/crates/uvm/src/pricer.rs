//! Price estimation from trained artifacts.
//!
//! The actor price simulates antithetic paths from the spot under the
//! deterministic policy of every step and averages the discounted terminal
//! payoff; since it evaluates one specific policy it is a statistical lower
//! bound for the optimal value. The critic price evaluates the step-0 value
//! network at the spot and carries no bound property. A clamped variant
//! reprices with pairwise correlations projected onto their bounds to
//! quantify the price impact of bound violations.

use std::time::Instant;

use rayon::prelude::*;

use crate::corrvine::{cvine_pairwise, packed_offdiag, pair_index, CorrFactor, PartialCorrVector};
use crate::dynamics::{log_euler_row, state_features_into, validate_monitoring};
use crate::error::{Result, UvmError};
use crate::math::{cholesky, SymMatrix};
use crate::model::ModelSpec;
use crate::policy::{
    bangbang_controls, factor_from_rho2, OwnedFactors, PolicyState, CORR_SQUASH_LIMIT,
};
use crate::trainer::TrainedModel;

/// Pairs simulated per parallel work unit; fixed so results do not depend on
/// the worker count.
const PAIR_CHUNK: usize = 2048;

/// Price estimates and diagnostics for one experiment.
#[derive(Debug, Clone)]
pub struct PriceReport {
    pub actor_price: f64,
    /// 95% confidence halfwidth of the actor price (normal quantile on the
    /// i.i.d. antithetic pair means).
    pub ci_halfwidth: f64,
    pub critic_price: f64,
    pub n_paths: usize,
    pub runtime_seconds: f64,
    pub seed: u64,
    /// (unclamped - clamped) actor price over the reference, when computed.
    pub violation_impact: Option<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum CorrTreatment {
    AsTrained,
    ClampedToBounds,
}

/// Deterministic control at one state row.
struct StepControl {
    sigma: Vec<f64>,
    factor: FactorRef,
}

enum FactorRef {
    Owned(CorrFactor),
    Fixed,
}

fn deterministic_control(
    actor: &PolicyState,
    feat: &[f64],
    spec: &ModelSpec,
    treatment: CorrTreatment,
    scratch_out: &mut Vec<f64>,
) -> Result<StepControl> {
    match actor {
        PolicyState::Gaussian(g) => {
            scratch_out.resize(g.mean_net.out_dim, 0.0);
            g.mean_net.forward_single_into(feat, scratch_out);
            let d = spec.dim;
            let mut sigma = vec![0.0; d];
            for i in 0..d {
                let mid = 0.5 * (spec.vol_hi[i] + spec.vol_lo[i]);
                let half = 0.5 * (spec.vol_hi[i] - spec.vol_lo[i]);
                sigma[i] = mid + half * scratch_out[i].tanh();
            }
            if spec.is_uncertain_corr() && d >= 2 {
                if d == 2 {
                    let lo = spec.corr_bounds.lower_at(0, 1);
                    let hi = spec.corr_bounds.upper_at(0, 1);
                    let t = scratch_out[d]
                        .tanh()
                        .clamp(-CORR_SQUASH_LIMIT, CORR_SQUASH_LIMIT);
                    let rho = 0.5 * (hi + lo) + 0.5 * (hi - lo) * t;
                    Ok(StepControl {
                        sigma,
                        factor: FactorRef::Owned(factor_from_rho2(rho)?),
                    })
                } else {
                    let y: Vec<f64> = scratch_out[d..]
                        .iter()
                        .map(|v| v.tanh().clamp(-CORR_SQUASH_LIMIT, CORR_SQUASH_LIMIT))
                        .collect();
                    let yv = PartialCorrVector::new(d, y)?;
                    let factor = match treatment {
                        CorrTreatment::AsTrained => crate::corrvine::cvine_build(&yv)?,
                        CorrTreatment::ClampedToBounds => clamped_factor(&yv, spec)?,
                    };
                    Ok(StepControl {
                        sigma,
                        factor: FactorRef::Owned(factor),
                    })
                }
            } else {
                Ok(StepControl {
                    sigma,
                    factor: FactorRef::Fixed,
                })
            }
        }
        PolicyState::Bernoulli(b) => {
            scratch_out.resize(b.logit_net.out_dim, 0.0);
            b.logit_net.forward_single_into(feat, scratch_out);
            let nb = spec.bangbang_bits();
            let bits: Vec<u8> = (0..nb)
                .map(|k| u8::from(crate::policy::clamped_prob(scratch_out[k]) >= 0.5))
                .collect();
            let (sigma, factors) = bangbang_controls(spec, &bits, 1)?;
            match factors {
                OwnedFactors::PerSample(mut fs) => Ok(StepControl {
                    sigma,
                    factor: FactorRef::Owned(fs.pop().expect("one sample")),
                }),
                OwnedFactors::Shared(_) => Ok(StepControl {
                    sigma,
                    factor: FactorRef::Fixed,
                }),
            }
        }
    }
}

/// Project the pairwise correlations implied by the vine partials onto the
/// bounds and rebuild a factor. Projection can break positive
/// semidefiniteness; a nearest-correlation repair is attempted before giving
/// up.
fn clamped_factor(y: &PartialCorrVector, spec: &ModelSpec) -> Result<CorrFactor> {
    let rho = cvine_pairwise(y)?;
    let mut packed = packed_offdiag(&rho);
    let moved = spec.corr_bounds.clamp_packed(&mut packed);
    if !moved {
        return crate::corrvine::cvine_build(y);
    }
    let d = spec.dim;
    let mut clamped = SymMatrix::identity(d);
    for i in 0..d {
        for j in (i + 1)..d {
            clamped.set(i, j, packed[pair_index(d, i, j)]);
        }
    }
    match cholesky(&clamped) {
        Ok(l) => CorrFactor::from_lower(normalize_rows(l)),
        Err(_) => {
            let repaired = clamped.nearest_correlation(1e-10).map_err(|e| {
                UvmError::Numerical(format!(
                    "projected correlation matrix could not be repaired: {e}"
                ))
            })?;
            let l = cholesky(&repaired).map_err(|e| {
                UvmError::Numerical(format!("repaired correlation matrix not factorizable: {e}"))
            })?;
            CorrFactor::from_lower(normalize_rows(l))
        }
    }
}

/// Renormalize factor rows to unit norm (they are within roundoff already;
/// this keeps the factor invariant exact).
fn normalize_rows(mut l: crate::math::LowerTriangular) -> crate::math::LowerTriangular {
    for i in 0..l.dim() {
        let norm: f64 = l.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for k in 0..=i {
                *l.get_mut(i, k) /= norm;
            }
        }
    }
    l
}

struct ChunkStats {
    sum: f64,
    sum_sq: f64,
    pairs: usize,
}

static IDENTITY_1D: std::sync::LazyLock<CorrFactor> =
    std::sync::LazyLock::new(|| CorrFactor::identity(1));

fn simulate_chunk(
    model: &TrainedModel,
    chunk_index: usize,
    pairs: usize,
    treatment: CorrTreatment,
    seed: u64,
    antithetic: bool,
) -> Result<ChunkStats> {
    use rand::Rng;
    let spec = &model.spec;
    let d = spec.dim;
    let monitor = model.monitor_count();
    let sdim = model.payoff.state_dimension();
    let stride = if monitor > 0 {
        validate_monitoring(spec, monitor)?
    } else {
        0
    };
    let mut rng = crate::rng::stream(seed, crate::rng::Domain::Pricing { chunk: chunk_index });
    let discount = (-spec.rate * spec.horizon).exp();
    let dt = spec.dt();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut feat = vec![0.0; sdim];
    let mut net_out = Vec::new();
    let mut corr_scratch = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut signed_xi = vec![0.0; d];
    let mut next_assets = vec![0.0; d];
    let mut states = [vec![0.0; sdim], vec![0.0; sdim]];

    for _ in 0..pairs {
        for leg in &mut states {
            leg[..d].copy_from_slice(&spec.spot);
            if monitor > 0 {
                leg[d] = 0.0;
                leg[d + 1] = spec.spot[0];
            }
        }
        for n in 0..spec.steps {
            if antithetic {
                for k in 0..d {
                    xi[k] = rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
            for (leg_idx, leg) in states.iter_mut().enumerate() {
                if antithetic {
                    let sign = if leg_idx == 0 { 1.0 } else { -1.0 };
                    for k in 0..d {
                        signed_xi[k] = sign * xi[k];
                    }
                } else {
                    for k in 0..d {
                        signed_xi[k] = rng.sample::<f64, _>(rand_distr::StandardNormal);
                    }
                }
                state_features_into(leg, spec, &mut feat);
                let control = deterministic_control(
                    &model.steps[n].actor,
                    &feat,
                    spec,
                    treatment,
                    &mut net_out,
                )?;
                let factor = match &control.factor {
                    FactorRef::Owned(f) => f,
                    FactorRef::Fixed => match spec.fixed_factor() {
                        Some(f) => f,
                        None => &IDENTITY_1D,
                    },
                };
                log_euler_row(
                    &leg[..d],
                    &control.sigma,
                    factor,
                    &signed_xi,
                    spec.rate,
                    dt,
                    &mut next_assets,
                    &mut corr_scratch,
                );
                leg[..d].copy_from_slice(&next_assets);
                if monitor > 0 && (n + 1) % stride == 0 {
                    let ret = (leg[0] / leg[d + 1]).ln();
                    leg[d] += ret * ret;
                    leg[d + 1] = leg[0];
                }
            }
        }
        let g0 = model.payoff.evaluate_row(&states[0], spec.horizon);
        let g1 = model.payoff.evaluate_row(&states[1], spec.horizon);
        let pair_mean = 0.5 * discount * (g0 + g1);
        if !pair_mean.is_finite() {
            return Err(UvmError::NonFinite {
                context: "pricing path payoff".into(),
            });
        }
        sum += pair_mean;
        sum_sq += pair_mean * pair_mean;
    }
    Ok(ChunkStats { sum, sum_sq, pairs })
}

fn simulate_price(
    model: &TrainedModel,
    n_paths: usize,
    seed: u64,
    treatment: CorrTreatment,
    antithetic: bool,
) -> Result<(f64, f64)> {
    if n_paths < 2 || n_paths % 2 != 0 {
        return Err(UvmError::InvalidInput(
            "n_paths must be even and at least 2".into(),
        ));
    }
    if model.steps.len() != model.spec.steps {
        return Err(UvmError::InvalidInput(format!(
            "artifacts cover {} steps, model needs {}",
            model.steps.len(),
            model.spec.steps
        )));
    }
    let n_pairs = n_paths / 2;
    let n_chunks = n_pairs.div_ceil(PAIR_CHUNK);
    let stats: Vec<Result<ChunkStats>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let pairs = PAIR_CHUNK.min(n_pairs - c * PAIR_CHUNK);
            simulate_chunk(model, c, pairs, treatment, seed, antithetic)
        })
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for s in stats {
        let s = s?;
        sum += s.sum;
        sum_sq += s.sum_sq;
        count += s.pairs;
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    let halfwidth = 1.96 * (var / count as f64).sqrt();
    Ok((mean, halfwidth))
}

/// Monte Carlo price under the trained deterministic policy, with the 95%
/// confidence halfwidth computed on antithetic pair means.
pub fn actor_price(model: &TrainedModel, n_paths: usize, seed: u64) -> Result<(f64, f64)> {
    simulate_price(model, n_paths, seed, CorrTreatment::AsTrained, true)
}

/// Direct evaluation of the step-0 value network at the spot. No bound
/// property: the critic price may lie on either side of the true value.
pub fn critic_price(model: &TrainedModel) -> Result<f64> {
    let spec = &model.spec;
    let sdim = model.payoff.state_dimension();
    let mut state = vec![0.0; sdim];
    state[..spec.dim].copy_from_slice(&spec.spot);
    if sdim > spec.dim {
        state[spec.dim] = 0.0;
        state[spec.dim + 1] = spec.spot[0];
    }
    let mut feat = vec![0.0; sdim];
    state_features_into(&state, spec, &mut feat);
    Ok(model.steps[0].critic.forward(&feat, 1)?[0])
}

/// Relative price impact of correlation-bound violations: reprice with all
/// pairwise correlations projected onto their bounds (same increments) and
/// return (unclamped - clamped) / reference.
///
/// Projection alone does not guarantee the matrix stays positive
/// semidefinite; when it fails a nearest-correlation repair is applied, and
/// the diagnostic aborts if that also fails.
pub fn clamped_price_impact(
    model: &TrainedModel,
    n_paths: usize,
    seed: u64,
    reference: f64,
) -> Result<f64> {
    if !(model.spec.is_uncertain_corr() && model.spec.dim >= 3) {
        return Err(UvmError::InvalidInput(
            "clamped repricing requires uncertain correlations in dimension >= 3".into(),
        ));
    }
    if !(reference > 0.0) {
        return Err(UvmError::InvalidInput("reference price must be > 0".into()));
    }
    let (unclamped, _) = simulate_price(model, n_paths, seed, CorrTreatment::AsTrained, true)?;
    let (clamped, _) = simulate_price(model, n_paths, seed, CorrTreatment::ClampedToBounds, true)?;
    Ok((unclamped - clamped) / reference)
}

/// Full report: actor price with confidence interval, critic price, runtime
/// and optionally the clamped-correlation impact.
pub fn price_report(
    model: &TrainedModel,
    n_paths: usize,
    seed: u64,
    impact_reference: Option<f64>,
) -> Result<PriceReport> {
    let start = Instant::now();
    let (actor, ci) = actor_price(model, n_paths, seed)?;
    let critic = critic_price(model)?;
    let violation_impact = match impact_reference {
        Some(reference) if model.spec.is_uncertain_corr() && model.spec.dim >= 3 => {
            Some(clamped_price_impact(model, n_paths, seed, reference)?)
        }
        _ => None,
    };
    Ok(PriceReport {
        actor_price: actor,
        ci_halfwidth: ci,
        critic_price: critic,
        n_paths,
        runtime_seconds: start.elapsed().as_secs_f64(),
        seed,
        violation_impact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CorrMode;
    use crate::neural::MlpParams;
    use crate::payoffs::{PayoffKind, PayoffSpec};
    use crate::policy::GaussianPolicyState;
    use crate::trainer::StepArtifacts;

    /// Model whose actor always outputs latent zero: midpoint volatilities,
    /// identity correlation.
    fn constant_policy_model(spec: ModelSpec, payoff: PayoffSpec) -> TrainedModel {
        let fdim = payoff.state_dimension();
        let steps = (0..spec.steps)
            .map(|_| {
                let actor = PolicyState::Gaussian(GaussianPolicyState {
                    mean_net: MlpParams::zeros(fdim, 4, spec.latent_dim()),
                    temperature: 1.0,
                });
                let critic = MlpParams::zeros(fdim, 4, 1);
                StepArtifacts {
                    actor,
                    critic,
                    curve: Vec::new(),
                }
            })
            .collect();
        TrainedModel {
            spec,
            payoff,
            family: crate::policy::PolicyFamily::Continuous,
            seed: 0,
            steps,
        }
    }

    #[test]
    fn martingale_price_recovers_spot() {
        // Payoff g(x) = x at zero rate: any fixed-volatility policy prices
        // to the spot.
        let spec =
            ModelSpec::uniform(1, 100.0, 0.0, 1.0, 8, 0.1, 0.2, 0.0, 0.0, CorrMode::Uncertain)
                .unwrap();
        let payoff = PayoffSpec::new(PayoffKind::GeoCallSpread { k1: 0.0, k2: 1e12 }, 1).unwrap();
        let model = constant_policy_model(spec, payoff);
        let (price, ci) = actor_price(&model, 1 << 16, 99).unwrap();
        assert!(
            (price - 100.0).abs() < ci.max(0.05),
            "price {price} +- {ci}"
        );
    }

    #[test]
    fn ci_halfwidth_scales_with_paths() {
        let spec =
            ModelSpec::uniform(1, 100.0, 0.0, 1.0, 4, 0.1, 0.2, 0.0, 0.0, CorrMode::Uncertain)
                .unwrap();
        let payoff = PayoffSpec::new(PayoffKind::GeoCallSpread { k1: 100.0, k2: 1e7 }, 1).unwrap();
        let model = constant_policy_model(spec, payoff);
        let (_, ci_small) = actor_price(&model, 1 << 14, 7).unwrap();
        let (_, ci_large) = actor_price(&model, 1 << 16, 7).unwrap();
        let shrink = ci_small / ci_large;
        assert!(
            (shrink - 2.0).abs() < 0.25,
            "CI shrink factor {shrink}, expected ~2"
        );
    }

    #[test]
    fn antithetic_beats_independent_sampling() {
        let spec =
            ModelSpec::uniform(1, 100.0, 0.0, 1.0, 4, 0.1, 0.2, 0.0, 0.0, CorrMode::Uncertain)
                .unwrap();
        let payoff = PayoffSpec::new(PayoffKind::GeoCallSpread { k1: 100.0, k2: 1e7 }, 1).unwrap();
        let model = constant_policy_model(spec, payoff);
        let (_, ci_anti) =
            simulate_price(&model, 1 << 16, 5, CorrTreatment::AsTrained, true).unwrap();
        let (_, ci_indep) =
            simulate_price(&model, 1 << 16, 5, CorrTreatment::AsTrained, false).unwrap();
        assert!(
            ci_anti < ci_indep,
            "antithetic CI {ci_anti} not below independent CI {ci_indep}"
        );
    }

    #[test]
    fn critic_price_reads_the_value_network() {
        let spec =
            ModelSpec::uniform(2, 100.0, 0.0, 1.0, 2, 0.1, 0.2, -0.5, 0.5, CorrMode::Uncertain)
                .unwrap();
        let payoff = PayoffSpec::new(PayoffKind::GeoOutperformer, 2).unwrap();
        let mut model = constant_policy_model(spec, payoff);
        model.steps[0].critic.b2[0] = 13.5;
        assert!((critic_price(&model).unwrap() - 13.5).abs() < 1e-12);
    }

    #[test]
    fn clamped_impact_is_zero_inside_bounds() {
        // Zero-latent policy: identity correlation, well inside the bounds,
        // so projection never moves anything and the impact is exactly zero.
        let spec =
            ModelSpec::uniform(3, 100.0, 0.0, 1.0, 4, 0.1, 0.2, -0.5, 0.5, CorrMode::Uncertain)
                .unwrap();
        let payoff = PayoffSpec::new(PayoffKind::GeoOutperformer, 3).unwrap();
        let model = constant_policy_model(spec, payoff);
        let impact = clamped_price_impact(&model, 1 << 12, 3, 12.96).unwrap();
        assert_eq!(impact, 0.0);
    }

    #[test]
    fn clamped_impact_positive_for_violating_policy() {
        // Force partial correlations beyond the bounds: the unclamped price
        // of an outperformer-type payoff exceeds the clamped price.
        let spec =
            ModelSpec::uniform(3, 100.0, 0.0, 1.0, 4, 0.1, 0.2, -0.2, 0.2, CorrMode::Uncertain)
                .unwrap();
        let payoff = PayoffSpec::new(PayoffKind::GeoOutperformer, 3).unwrap();
        let mut model = constant_policy_model(spec, payoff);
        for step in model.steps.iter_mut() {
            if let PolicyState::Gaussian(g) = &mut step.actor {
                // Latent mean pushing rho_01 and rho_02 strongly negative
                // (basket assets against the short leg) and rho_12 positive.
                let b = &mut g.mean_net.b2;
                b[3] = -2.0;
                b[4] = -2.0;
                b[5] = 2.0;
            }
        }
        let impact = clamped_price_impact(&model, 1 << 14, 11, 12.96).unwrap();
        assert!(impact > 0.005, "impact {impact}");
    }

    #[test]
    fn rejects_odd_path_counts_and_wrong_modes() {
        let spec =
            ModelSpec::uniform(1, 100.0, 0.0, 1.0, 2, 0.1, 0.2, 0.0, 0.0, CorrMode::Uncertain)
                .unwrap();
        let payoff = PayoffSpec::new(PayoffKind::GeoCallSpread { k1: 100.0, k2: 1e7 }, 1).unwrap();
        let model = constant_policy_model(spec, payoff);
        assert!(actor_price(&model, 3, 1).is_err());
        assert!(clamped_price_impact(&model, 4, 1, 10.0).is_err());
    }
}
