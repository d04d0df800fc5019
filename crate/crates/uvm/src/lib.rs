//! Robust pricing of multi-asset European options under volatility and
//! correlation uncertainty.
//!
//! The robust (worst-case) price is the value of a discrete-time stochastic
//! control problem: at each time step a volatility vector and a correlation
//! matrix are chosen inside prescribed bounds to maximize the expected
//! discounted payoff. This crate solves that problem with a backward
//! actor-critic scheme:
//!
//! * [`corrvine`] — C-vine parameterization turning unconstrained vectors
//!   into valid correlation matrices (with a directly assembled Cholesky
//!   factor), plus the Huber penalty on pairwise bound violations;
//! * [`policy`] — squashed-Gaussian and factorized-Bernoulli (bang-bang)
//!   stochastic policy families with explicit likelihood ratios;
//! * [`neural`] — one-hidden-layer networks with layer norm, explicit
//!   backpropagation and Adam;
//! * [`dynamics`] — the multiplicative log-Euler transition, training state
//!   samplers and antithetic increments;
//! * [`payoffs`] — the supported payoff functions, including a
//!   path-dependent realized-variance payoff on an augmented state;
//! * [`trainer`] — the backward training loop alternating critic regression
//!   and clipped-surrogate (PPO) actor ascent with annealed exploration;
//! * [`pricer`] — Monte Carlo price (with confidence interval) under the
//!   trained deterministic policy, value-network price, and the
//!   clamped-correlation diagnostic;
//! * [`oracle`] — independent reference solvers: a 1-D worst-case
//!   finite-difference solver, closed-form Black-Scholes, and a brute-force
//!   dynamic-programming solver on tiny instances;
//! * [`propcheck`] — the property suites used as a correctness gate.

pub mod checkpoint;
pub mod corrvine;
pub mod dynamics;
pub mod error;
pub mod math;
pub mod model;
pub mod neural;
pub mod oracle;
pub mod payoffs;
pub mod policy;
pub mod pricer;
pub mod propcheck;
pub mod rng;
pub mod trainer;

pub use error::{Result, UvmError};
pub use model::{CorrMode, ModelSpec};
pub use payoffs::{PayoffKind, PayoffSpec};
pub use policy::PolicyFamily;
