//! Backward actor-critic training loop.
//!
//! For each time step n = N-1, ..., 0 a critic (value network) and an actor
//! (policy network) are trained alternately against the already-trained
//! continuation at step n+1. Each epoch freezes the policy, collects a fresh
//! batch of (state, action, increment) transitions, runs one pass of
//! minibatch critic regression onto the discounted continuation values, and
//! one pass of minibatch clipped-surrogate ascent on the actor. Exploration
//! (the latent temperature or the entropy coefficient) and the learning rate
//! follow a two-phase sigmoid schedule. After the final epoch one extra
//! critic pass regresses onto next states generated by the deterministic
//! policy, so the stored value network describes the control actually used
//! for pricing. Each step's networks are initialized from the next step's
//! trained weights.

use crate::corrvine::{corr_penalty_packed, cvine_pairwise_grad, n_pairs, PartialCorrVector};
use crate::dynamics::{
    augment_path_state, batch_features, draw_increments, feature_normalization, log_euler_step,
    sample_states, validate_monitoring, StateBatch,
};
use crate::error::{Result, UvmError};
use crate::math::mean_var;
use crate::model::ModelSpec;
use crate::neural::{adam_step, transfer_init, AdamState, MlpParams};
use crate::payoffs::PayoffSpec;
use crate::policy::{
    bangbang_controls, bernoulli_entropy, continuous_controls, validate_family,
    BernoulliPolicyState, GaussianPolicyState, PolicyFamily, PolicyState, CORR_SQUASH_LIMIT,
};
use crate::rng::{stream, Domain};
use rand::Rng;

/// Shape of the two-phase sigmoid annealing schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealShape {
    /// Fraction of the epoch budget at which the schedule crosses the
    /// midpoint value.
    pub midpoint: f64,
    /// Steepness of the transition.
    pub steepness: f64,
}

impl Default for AnnealShape {
    fn default() -> Self {
        AnnealShape {
            midpoint: 0.5,
            steepness: 12.0,
        }
    }
}

/// Sigmoid interpolation from `v_start` (epoch 0) to `v_end` (last epoch).
///
/// Monotone between the endpoints; equals the midpoint value exactly at the
/// configured epoch fraction, and reaches each endpoint within 1% of the
/// range at the default steepness.
pub fn anneal(
    epoch: usize,
    total: usize,
    v_start: f64,
    v_end: f64,
    shape: AnnealShape,
) -> Result<f64> {
    if total == 0 {
        return Err(UvmError::InvalidInput(
            "anneal: total epochs must be > 0".into(),
        ));
    }
    let x = epoch as f64 / total as f64;
    let s = 1.0 / (1.0 + (shape.steepness * (x - shape.midpoint)).exp());
    Ok(v_end + (v_start - v_end) * s)
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    /// Epoch budget at the first trained step n = N-1.
    pub outer_epochs: usize,
    /// Epoch budget at every transfer-initialized step n <= N-2.
    pub inner_epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Learning-rate divisor applied at transfer-initialized steps.
    pub inner_lr_divisor: f64,
    /// Latent temperature schedule (continuous family).
    pub lambda_start: f64,
    pub lambda_end: f64,
    /// Entropy coefficient schedule (bang-bang family).
    pub gamma_start: f64,
    pub gamma_end: f64,
    /// PPO clipping half-width.
    pub clip: f64,
    /// Correlation-penalty weight and Huber threshold.
    pub penalty_beta: f64,
    pub penalty_delta: f64,
    /// Transitions collected per epoch (even; antithetic increments).
    pub mc_samples: usize,
    /// Minibatch size; must divide `mc_samples`.
    pub minibatch: usize,
    pub anneal_shape: AnnealShape,
    /// Hidden width of both networks.
    pub hidden_dim: usize,
    /// Optional early stop: halt a step when the critic loss has not
    /// improved for this many epochs. Off by default; the fixed budget keeps
    /// both annealing phases intact.
    pub plateau_patience: Option<usize>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            outer_epochs: 500,
            inner_epochs: 10,
            lr_start: 5e-3,
            lr_end: 1e-4,
            inner_lr_divisor: 10.0,
            lambda_start: 1.0,
            lambda_end: 0.01,
            gamma_start: 0.01,
            gamma_end: 0.0,
            clip: 0.2,
            penalty_beta: 10.0,
            penalty_delta: 0.05,
            mc_samples: 1 << 15,
            minibatch: 1 << 10,
            anneal_shape: AnnealShape::default(),
            hidden_dim: 32,
            plateau_patience: None,
        }
    }
}

impl TrainSchedule {
    /// Same hyperparameters with a reduced per-epoch sample count, suitable
    /// for desktop CPU runs.
    pub fn reduced() -> Self {
        TrainSchedule {
            mc_samples: 1 << 14,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_epochs == 0 || self.inner_epochs == 0 {
            return Err(UvmError::Config("epoch budgets must be >= 1".into()));
        }
        for (name, v) in [
            ("lr_start", self.lr_start),
            ("lr_end", self.lr_end),
            ("inner_lr_divisor", self.inner_lr_divisor),
            ("lambda_start", self.lambda_start),
            ("lambda_end", self.lambda_end),
            ("clip", self.clip),
            ("penalty_delta", self.penalty_delta),
        ] {
            if !(v > 0.0) {
                return Err(UvmError::Config(format!("{name} must be > 0")));
            }
        }
        if self.lambda_end >= self.lambda_start {
            return Err(UvmError::Config("lambda must anneal downward".into()));
        }
        if self.gamma_start < 0.0 || self.gamma_end < 0.0 {
            return Err(UvmError::Config("entropy coefficients must be >= 0".into()));
        }
        if self.penalty_beta < 0.0 {
            return Err(UvmError::Config("penalty_beta must be >= 0".into()));
        }
        if self.mc_samples == 0 || self.mc_samples % 2 != 0 {
            return Err(UvmError::Config("mc_samples must be even and positive".into()));
        }
        if self.minibatch == 0 || self.mc_samples % self.minibatch != 0 {
            return Err(UvmError::Config("minibatch must divide mc_samples".into()));
        }
        if self.hidden_dim == 0 {
            return Err(UvmError::Config("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Gradient updates per epoch (per network).
    pub fn updates_per_epoch(&self) -> usize {
        self.mc_samples / self.minibatch
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub step: usize,
    pub epoch: usize,
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub penalty: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub lr: f64,
    pub lambda_or_gamma: f64,
}

/// Trained networks and learning curve for one time step.
#[derive(Debug, Clone)]
pub struct StepArtifacts {
    pub actor: PolicyState,
    pub critic: MlpParams,
    pub curve: Vec<EpochRecord>,
}

/// Full backward-trained model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub payoff: PayoffSpec,
    pub family: PolicyFamily,
    pub seed: u64,
    /// Artifacts indexed by time step n = 0, ..., N-1.
    pub steps: Vec<StepArtifacts>,
}

impl TrainedModel {
    pub fn monitor_count(&self) -> usize {
        self.payoff.monitor_count(self.spec.horizon)
    }
}

/// Value continuation used as the regression/advantage target at a step.
pub enum Continuation<'a> {
    /// Terminal payoff (step N-1).
    Terminal(&'a PayoffSpec),
    /// Trained critic of step n+1.
    Critic(&'a MlpParams),
    /// Arbitrary state function, for tests.
    #[cfg(test)]
    Custom(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
}

impl Continuation<'_> {
    /// Undiscounted continuation values at a batch of next states.
    fn values(&self, next: &StateBatch, spec: &ModelSpec) -> Result<Vec<f64>> {
        match self {
            Continuation::Terminal(payoff) => payoff.evaluate(next, spec.horizon),
            Continuation::Critic(net) => {
                let feats = batch_features(next, spec);
                net.forward(&feats, next.batch)
            }
            #[cfg(test)]
            Continuation::Custom(f) => Ok((0..next.batch).map(|r| f(next.row(r))).collect()),
        }
    }
}

/// One epoch's frozen training data.
struct EpochData {
    /// Features of the sampled states, `[m, fdim]`.
    feats: Vec<f64>,
    /// Discounted continuation values at the next states, `[m]`.
    targets: Vec<f64>,
    policy: PolicyData,
    m: usize,
}

enum PolicyData {
    Continuous {
        /// Latents that generated the actions, `[m, latent_dim]`.
        latents: Vec<f64>,
        /// Frozen policy means at collection time, `[m, latent_dim]`.
        old_means: Vec<f64>,
        /// Temperature used for collection.
        lambda: f64,
    },
    BangBang {
        bits: Vec<u8>,
        old_q: Vec<f64>,
    },
}

fn duplicate_rows<T: Copy>(half: &[T]) -> Vec<T> {
    let mut full = Vec::with_capacity(half.len() * 2);
    full.extend_from_slice(half);
    full.extend_from_slice(half);
    full
}

/// Trainer state for a single time step.
struct StepTrainer<'a> {
    spec: &'a ModelSpec,
    payoff: &'a PayoffSpec,
    schedule: &'a TrainSchedule,
    seed: u64,
    step: usize,
    monitor_count: usize,
    actor: PolicyState,
    critic: MlpParams,
    actor_opt: AdamState,
    critic_opt: AdamState,
}

impl StepTrainer<'_> {
    /// Collect one epoch of transitions under the frozen policy.
    ///
    /// `deterministic` replaces sampling by the policy's deterministic
    /// action (used by the final critic pass). Half the batch is sampled;
    /// each (state, action) pair is used with both xi and -xi.
    fn collect(
        &self,
        epoch: usize,
        continuation: &Continuation,
        deterministic: bool,
    ) -> Result<EpochData> {
        let spec = self.spec;
        let m = self.schedule.mc_samples;
        let half = m / 2;
        let fdim = self.payoff.state_dimension();
        let d = spec.dim;
        let mut rng = stream(
            self.seed,
            Domain::Collect {
                step: self.step,
                epoch,
            },
        );

        let states_half = sample_states(self.step, half, spec, self.monitor_count, &mut rng)?;
        let feats_half = batch_features(&states_half, spec);
        let xi = draw_increments(m, d, &mut rng)?;

        // Actions under the frozen policy, plus the data PPO needs later.
        let (sigma_half, factors, policy) = match &self.actor {
            PolicyState::Gaussian(g) => {
                let means_half = g.means(&feats_half, half)?;
                let latents_half = if deterministic {
                    means_half.clone()
                } else {
                    let sd = g.temperature.sqrt();
                    let mut l = means_half.clone();
                    for v in l.iter_mut() {
                        *v += sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
                    }
                    l
                };
                let (sigma, factors) = continuous_controls(spec, &latents_half, half)?;
                (
                    sigma,
                    factors,
                    PolicyData::Continuous {
                        latents: duplicate_rows(&latents_half),
                        old_means: duplicate_rows(&means_half),
                        lambda: g.temperature,
                    },
                )
            }
            PolicyState::Bernoulli(b) => {
                let q_half = b.probabilities(&feats_half, half)?;
                let nb = spec.bangbang_bits();
                let bits_half: Vec<u8> = if deterministic {
                    q_half.iter().map(|&p| u8::from(p >= 0.5)).collect()
                } else {
                    let mut bits = vec![0u8; half * nb];
                    for (k, bit) in bits.iter_mut().enumerate() {
                        *bit = u8::from(rng.random::<f64>() < q_half[k]);
                    }
                    bits
                };
                let (sigma, factors) = bangbang_controls(spec, &bits_half, half)?;
                (
                    sigma,
                    factors,
                    PolicyData::BangBang {
                        bits: duplicate_rows(&bits_half),
                        old_q: duplicate_rows(&q_half),
                    },
                )
            }
        };

        // Transition with xi on the first half and -xi on the second.
        let xi_plus = crate::dynamics::GaussianBatch {
            draws: xi.draws[..half * d].to_vec(),
            batch: half,
            dim: d,
            antithetic: false,
        };
        let xi_minus = crate::dynamics::GaussianBatch {
            draws: xi.draws[half * d..].to_vec(),
            batch: half,
            dim: d,
            antithetic: false,
        };
        let fb = factors.as_batch();
        let mut next_plus = log_euler_step(&states_half, &sigma_half, &fb, &xi_plus, spec)?;
        let mut next_minus = log_euler_step(&states_half, &sigma_half, &fb, &xi_minus, spec)?;
        if self.monitor_count > 0 {
            augment_path_state(&mut next_plus, self.step, spec, self.monitor_count)?;
            augment_path_state(&mut next_minus, self.step, spec, self.monitor_count)?;
        }

        let discount = (-spec.rate * spec.dt()).exp();
        let mut targets = Vec::with_capacity(m);
        for vals in [
            continuation.values(&next_plus, spec)?,
            continuation.values(&next_minus, spec)?,
        ] {
            targets.extend(vals.into_iter().map(|v| discount * v));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(UvmError::NonFinite {
                context: "continuation targets".into(),
            });
        }

        let feats = duplicate_rows(&feats_half);
        debug_assert_eq!(feats.len(), m * fdim);
        Ok(EpochData {
            feats,
            targets,
            policy,
            m,
        })
    }

    /// One epoch of minibatch critic regression onto the frozen targets.
    /// Returns the epoch-mean (pre-update) loss.
    fn critic_epoch(&mut self, data: &EpochData, lr: f64) -> Result<f64> {
        let mb = self.schedule.minibatch;
        let fdim = self.critic.in_dim;
        let mut loss_acc = 0.0;
        let n_batches = data.m / mb;
        for b in 0..n_batches {
            let feats = &data.feats[b * mb * fdim..(b + 1) * mb * fdim];
            let targets = &data.targets[b * mb..(b + 1) * mb];
            let values = self.critic.forward(feats, mb)?;
            let mut upstream = vec![0.0; mb];
            let mut loss = 0.0;
            for i in 0..mb {
                let err = values[i] - targets[i];
                loss += err * err;
                upstream[i] = 2.0 * err / mb as f64;
            }
            loss /= mb as f64;
            if !loss.is_finite() {
                return Err(UvmError::NonFinite {
                    context: "critic loss".into(),
                });
            }
            loss_acc += loss;
            let grads = self.critic.backward(feats, &upstream, mb)?;
            adam_step(&mut self.critic, &grads, &mut self.critic_opt, lr)?;
        }
        Ok(loss_acc / n_batches as f64)
    }

    /// Advantages against the updated critic, normalized to zero mean and
    /// unit variance over the epoch. Degenerate variance falls back to raw
    /// advantages.
    fn normalized_advantages(&self, data: &EpochData) -> Result<Vec<f64>> {
        let values = self.critic.forward(&data.feats, data.m)?;
        let mut adv: Vec<f64> = data
            .targets
            .iter()
            .zip(values.iter())
            .map(|(t, v)| t - v)
            .collect();
        let (mean, var) = mean_var(&adv);
        if var < 1e-12 {
            eprintln!(
                "warning: degenerate advantage variance ({var:.3e}) at step {}, using raw advantages",
                self.step
            );
            return Ok(adv);
        }
        let inv_sd = 1.0 / var.sqrt();
        for a in adv.iter_mut() {
            *a = (*a - mean) * inv_sd;
        }
        Ok(adv)
    }

    /// One epoch of minibatch clipped-surrogate ascent for the continuous
    /// family. Returns (objective, penalty, entropy, clip fraction).
    fn actor_epoch_continuous(
        &mut self,
        data: &EpochData,
        adv: &[f64],
        lr: f64,
    ) -> Result<(f64, f64, f64, f64)> {
        let (latents, old_means, lambda) = match &data.policy {
            PolicyData::Continuous {
                latents,
                old_means,
                lambda,
            } => (latents, old_means, *lambda),
            _ => unreachable!("continuous actor with bang-bang data"),
        };
        let spec = self.spec;
        let d = spec.dim;
        let ldim = spec.latent_dim();
        let fdim = self.payoff.state_dimension();
        let mb = self.schedule.minibatch;
        let n_batches = data.m / mb;
        let eps = self.schedule.clip;
        let beta = self.schedule.penalty_beta;
        let delta = self.schedule.penalty_delta;
        // The Huber penalty applies to the vine-parameterized correlations,
        // which exist for three and more assets; with two assets the bounds
        // are enforced directly by the squashing map.
        let with_penalty = spec.is_uncertain_corr() && d >= 3 && beta > 0.0;
        let npair = n_pairs(d.max(2));

        let net = match &mut self.actor {
            PolicyState::Gaussian(g) => &mut g.mean_net,
            _ => unreachable!(),
        };

        let mut objective_acc = 0.0;
        let mut penalty_acc = 0.0;
        let mut clip_count = 0usize;
        for b in 0..n_batches {
            let rows = b * mb..(b + 1) * mb;
            let feats = &data.feats[rows.start * fdim..rows.end * fdim];
            let means_new = net.forward(feats, mb)?;
            let mut upstream = vec![0.0; mb * ldim];
            let mut objective = 0.0;
            let mut penalty_val = 0.0;
            for i in 0..mb {
                let r_global = rows.start + i;
                let m_new = &means_new[i * ldim..(i + 1) * ldim];
                let m_old = &old_means[r_global * ldim..(r_global + 1) * ldim];
                let z = &latents[r_global * ldim..(r_global + 1) * ldim];
                let mut expo = 0.0;
                for k in 0..ldim {
                    expo += (m_new[k] - m_old[k]) * (z[k] - 0.5 * (m_new[k] + m_old[k]));
                }
                let ratio = (expo / lambda).exp();
                let a = adv[r_global];
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
                objective += (ratio * a).min(clipped * a);
                if !(1.0 - eps..=1.0 + eps).contains(&ratio) {
                    clip_count += 1;
                }
                // The min selects the unclipped branch unless the ratio has
                // left the trust region on the side the advantage pushes
                // toward; there the surrogate is flat.
                let active = if a >= 0.0 {
                    ratio <= 1.0 + eps
                } else {
                    ratio >= 1.0 - eps
                };
                if active {
                    let scale = a * ratio / lambda / mb as f64;
                    let row = &mut upstream[i * ldim..(i + 1) * ldim];
                    for k in 0..ldim {
                        row[k] -= scale * (z[k] - m_new[k]);
                    }
                }
                if with_penalty {
                    // Deterministic correlation produced by the mean.
                    let y: Vec<f64> = m_new[d..]
                        .iter()
                        .map(|v| v.tanh().clamp(-CORR_SQUASH_LIMIT, CORR_SQUASH_LIMIT))
                        .collect();
                    let yv = PartialCorrVector::new(d, y.clone())?;
                    let (rho, jac) = cvine_pairwise_grad(&yv);
                    let (psi, dpsi_drho) =
                        corr_penalty_packed(&rho, &spec.corr_bounds, beta, delta)?;
                    penalty_val += psi;
                    if psi > 0.0 {
                        let row = &mut upstream[i * ldim..(i + 1) * ldim];
                        for q in 0..npair {
                            let mut acc = 0.0;
                            for p in 0..npair {
                                acc += dpsi_drho[p] * jac[p * npair + q];
                            }
                            // Chain through tanh; gradient of the loss, so
                            // the penalty enters with a positive sign.
                            row[d + q] += acc * (1.0 - y[q] * y[q]) / mb as f64;
                        }
                    }
                }
            }
            objective_acc += objective / mb as f64;
            penalty_acc += penalty_val / mb as f64;
            let grads = net.backward(feats, &upstream, mb)?;
            adam_step(net, &grads, &mut self.actor_opt, lr)?;
        }
        // Differential entropy of the latent Gaussian (exogenous schedule).
        let entropy =
            0.5 * ldim as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E * lambda).ln();
        Ok((
            objective_acc / n_batches as f64,
            penalty_acc / n_batches as f64,
            entropy,
            clip_count as f64 / data.m as f64,
        ))
    }

    /// One epoch of minibatch clipped-surrogate ascent with entropy bonus
    /// for the bang-bang family.
    fn actor_epoch_bangbang(
        &mut self,
        data: &EpochData,
        adv: &[f64],
        lr: f64,
        gamma: f64,
    ) -> Result<(f64, f64, f64, f64)> {
        let (bits, old_q) = match &data.policy {
            PolicyData::BangBang { bits, old_q } => (bits, old_q),
            _ => unreachable!("bang-bang actor with continuous data"),
        };
        let nb = self.spec.bangbang_bits();
        let fdim = self.payoff.state_dimension();
        let mb = self.schedule.minibatch;
        let n_batches = data.m / mb;
        let eps = self.schedule.clip;

        let net = match &mut self.actor {
            PolicyState::Bernoulli(b) => &mut b.logit_net,
            _ => unreachable!(),
        };

        let mut objective_acc = 0.0;
        let mut entropy_acc = 0.0;
        let mut clip_count = 0usize;
        for b in 0..n_batches {
            let rows = b * mb..(b + 1) * mb;
            let feats = &data.feats[rows.start * fdim..rows.end * fdim];
            let logits = net.forward(feats, mb)?;
            let mut upstream = vec![0.0; mb * nb];
            let mut objective = 0.0;
            let mut entropy_val = 0.0;
            for i in 0..mb {
                let r_global = rows.start + i;
                let a_bits = &bits[r_global * nb..(r_global + 1) * nb];
                let qo = &old_q[r_global * nb..(r_global + 1) * nb];
                let mut log_ratio = 0.0;
                let mut q_new = vec![0.0; nb];
                for k in 0..nb {
                    let q = crate::policy::clamped_prob(logits[i * nb + k]);
                    q_new[k] = q;
                    log_ratio += if a_bits[k] == 1 {
                        q.ln() - qo[k].ln()
                    } else {
                        (1.0 - q).ln() - (1.0 - qo[k]).ln()
                    };
                }
                let ratio = log_ratio.exp();
                let a = adv[r_global];
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
                objective += (ratio * a).min(clipped * a);
                entropy_val += bernoulli_entropy(&q_new);
                if !(1.0 - eps..=1.0 + eps).contains(&ratio) {
                    clip_count += 1;
                }
                let active = if a >= 0.0 {
                    ratio <= 1.0 + eps
                } else {
                    ratio >= 1.0 - eps
                };
                let row = &mut upstream[i * nb..(i + 1) * nb];
                for k in 0..nb {
                    let q = q_new[k];
                    if active {
                        // d log-density / d logit = a_k - q_k.
                        row[k] -= a * ratio * (f64::from(a_bits[k]) - q) / mb as f64;
                    }
                    if gamma > 0.0 {
                        // d entropy / d logit = q (1 - q) ln((1-q)/q).
                        row[k] -= gamma * q * (1.0 - q) * ((1.0 - q) / q).ln() / mb as f64;
                    }
                }
            }
            objective_acc += objective / mb as f64;
            entropy_acc += entropy_val / mb as f64;
            let grads = net.backward(feats, &upstream, mb)?;
            adam_step(net, &grads, &mut self.actor_opt, lr)?;
        }
        Ok((
            objective_acc / n_batches as f64,
            0.0,
            entropy_acc / n_batches as f64,
            clip_count as f64 / data.m as f64,
        ))
    }

    /// Run the whole epoch loop plus the final deterministic critic pass.
    fn run(
        &mut self,
        epochs: usize,
        lr_divisor: f64,
        continuation: &Continuation,
    ) -> Result<Vec<EpochRecord>> {
        let sched = self.schedule;
        let mut curve = Vec::with_capacity(epochs);
        let mut best_loss = f64::INFINITY;
        let mut stale = 0usize;
        let mut last_lr = sched.lr_end / lr_divisor;
        for epoch in 0..epochs {
            let lr = anneal(epoch, epochs, sched.lr_start, sched.lr_end, sched.anneal_shape)?
                / lr_divisor;
            last_lr = lr;
            let explore = match &mut self.actor {
                PolicyState::Gaussian(g) => {
                    let lambda = anneal(
                        epoch,
                        epochs,
                        sched.lambda_start,
                        sched.lambda_end,
                        sched.anneal_shape,
                    )?;
                    g.temperature = lambda;
                    lambda
                }
                PolicyState::Bernoulli(_) => anneal(
                    epoch,
                    epochs,
                    sched.gamma_start,
                    sched.gamma_end,
                    sched.anneal_shape,
                )?,
            };

            let data = self
                .collect(epoch, continuation, false)
                .map_err(|e| e.at_step(self.step, epoch))?;
            let critic_loss = self
                .critic_epoch(&data, lr)
                .map_err(|e| e.at_step(self.step, epoch))?;
            let adv = self.normalized_advantages(&data)?;
            let (objective, penalty, entropy, clip_fraction) = match self.actor {
                PolicyState::Gaussian(_) => self.actor_epoch_continuous(&data, &adv, lr),
                PolicyState::Bernoulli(_) => self.actor_epoch_bangbang(&data, &adv, lr, explore),
            }
            .map_err(|e| e.at_step(self.step, epoch))?;

            curve.push(EpochRecord {
                step: self.step,
                epoch,
                critic_loss,
                actor_objective: objective,
                penalty,
                entropy,
                clip_fraction,
                lr,
                lambda_or_gamma: explore,
            });

            if let Some(patience) = sched.plateau_patience {
                if critic_loss + 1e-12 < best_loss {
                    best_loss = critic_loss;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        break;
                    }
                }
            }
        }

        // Last critic pass: regress onto next states generated by the
        // deterministic policy, so the stored value matches inference.
        let epochs_done = curve.len();
        let data = self
            .collect(epochs_done, continuation, true)
            .map_err(|e| e.at_step(self.step, epochs_done))?;
        self.critic_epoch(&data, last_lr)
            .map_err(|e| e.at_step(self.step, epochs_done))?;
        Ok(curve)
    }
}

/// Train the networks of one time step against the given continuation.
///
/// `init` carries the next step's trained networks for transfer
/// initialization; `None` trains from random weights with the outer epoch
/// budget. The per-step input normalization is recomputed from the state
/// sampler's analytic moments either way.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    spec: &ModelSpec,
    payoff: &PayoffSpec,
    schedule: &TrainSchedule,
    family: PolicyFamily,
    seed: u64,
    n: usize,
    continuation: &Continuation,
    init: Option<(&PolicyState, &MlpParams)>,
) -> Result<StepArtifacts> {
    let monitor_count = payoff.monitor_count(spec.horizon);
    let fdim = payoff.state_dimension();
    let (shift, scale) = feature_normalization(n, spec, monitor_count);
    let mut rng = stream(seed, Domain::Init { step: n });

    let (mut actor, mut critic, epochs, lr_div) = match init {
        Some((actor, critic)) => (
            actor.clone(),
            transfer_init(critic),
            schedule.inner_epochs,
            schedule.inner_lr_divisor,
        ),
        None => {
            let actor = match family {
                PolicyFamily::Continuous => PolicyState::Gaussian(GaussianPolicyState::init(
                    spec,
                    fdim,
                    schedule.hidden_dim,
                    schedule.lambda_start,
                    &mut rng,
                )?),
                PolicyFamily::BangBang => PolicyState::Bernoulli(BernoulliPolicyState::init(
                    spec,
                    fdim,
                    schedule.hidden_dim,
                    &mut rng,
                )?),
            };
            let critic = MlpParams::init_random(fdim, schedule.hidden_dim, 1, &mut rng);
            (actor, critic, schedule.outer_epochs, 1.0)
        }
    };
    actor.network_mut().set_input_normalization(&shift, &scale)?;
    critic.set_input_normalization(&shift, &scale)?;

    let actor_opt = AdamState::new(actor.network());
    let critic_opt = AdamState::new(&critic);
    let mut trainer = StepTrainer {
        spec,
        payoff,
        schedule,
        seed,
        step: n,
        monitor_count,
        actor,
        critic,
        actor_opt,
        critic_opt,
    };
    let curve = trainer.run(epochs, lr_div, continuation)?;
    Ok(StepArtifacts {
        actor: trainer.actor,
        critic: trainer.critic,
        curve,
    })
}

/// Validate a (model, payoff, schedule, family) combination.
pub fn validate_setup(
    spec: &ModelSpec,
    payoff: &PayoffSpec,
    schedule: &TrainSchedule,
    family: PolicyFamily,
) -> Result<()> {
    schedule.validate()?;
    validate_family(spec, family)?;
    if payoff.dim != spec.dim {
        return Err(UvmError::Config(format!(
            "payoff dimension {} != model dimension {}",
            payoff.dim, spec.dim
        )));
    }
    let mc = payoff.monitor_count(spec.horizon);
    if mc > 0 {
        validate_monitoring(spec, mc)?;
    }
    Ok(())
}

/// Backward training over all time steps: n = N-1 down to 0, each step
/// initialized from the next step's trained weights. Deterministic given
/// the seed.
pub fn train_backward(
    spec: &ModelSpec,
    payoff: &PayoffSpec,
    schedule: &TrainSchedule,
    family: PolicyFamily,
    seed: u64,
) -> Result<TrainedModel> {
    validate_setup(spec, payoff, schedule, family)?;
    let n_steps = spec.steps;
    let mut reversed: Vec<StepArtifacts> = Vec::with_capacity(n_steps);
    for n in (0..n_steps).rev() {
        let artifacts = if n == n_steps - 1 {
            train_step(
                spec,
                payoff,
                schedule,
                family,
                seed,
                n,
                &Continuation::Terminal(payoff),
                None,
            )?
        } else {
            let prev = reversed.last().expect("later step already trained");
            train_step(
                spec,
                payoff,
                schedule,
                family,
                seed,
                n,
                &Continuation::Critic(&prev.critic),
                Some((&prev.actor, &prev.critic)),
            )?
        };
        reversed.push(artifacts);
    }
    reversed.reverse();
    Ok(TrainedModel {
        spec: spec.clone(),
        payoff: payoff.clone(),
        family,
        seed,
        steps: reversed,
    })
}
