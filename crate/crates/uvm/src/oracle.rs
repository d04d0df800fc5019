//! Independent reference solvers used for validation.
//!
//! * [`bsb1d_solve`] — explicit finite differences on the one-dimensional
//!   worst-case pricing PDE, where the volatility at each node switches to
//!   its upper bound when the discrete convexity is nonnegative and to its
//!   lower bound otherwise;
//! * [`black_scholes_call`] — closed form, fixed-volatility anchor;
//! * [`dp_bruteforce`] — exhaustive dynamic programming over a finite action
//!   grid with Gauss-Hermite quadrature, for tiny instances.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::corrvine::CorrFactor;
use crate::error::{Result, UvmError};
use crate::math::gauss_hermite_normal;
use crate::policy::factor_from_rho2;

/// Log-price grid for the 1-D finite-difference solver.
#[derive(Debug, Clone)]
pub struct FdGrid {
    /// Spot the grid is centered on (in log space).
    pub x0: f64,
    /// Number of space nodes (>= 3).
    pub space_nodes: usize,
    /// Number of time layers.
    pub time_steps: usize,
    /// Half-width of the log-price domain in units of sigma_max * sqrt(T).
    pub half_width_mult: f64,
}

impl FdGrid {
    /// Grid with the time step chosen to satisfy the explicit-scheme
    /// stability bound with a 20% margin.
    pub fn stable(x0: f64, space_nodes: usize, sigma_hi: f64, rate: f64, horizon: f64) -> Self {
        let half_width_mult = 6.0;
        let width = half_width_mult * sigma_hi * horizon.sqrt();
        let h = 2.0 * width / (space_nodes - 1) as f64;
        // Positivity of the central coefficient: dt (sigma^2 / h^2 + r) <= 1.
        let dt_max = 1.0 / (sigma_hi * sigma_hi / (h * h) + rate);
        let time_steps = ((horizon / dt_max) * 1.2).ceil() as usize + 1;
        FdGrid {
            x0,
            space_nodes,
            time_steps,
            half_width_mult,
        }
    }

    fn validate(&self, sigma_hi: f64, rate: f64, horizon: f64) -> Result<(f64, f64)> {
        if self.space_nodes < 3 {
            return Err(UvmError::Config("need at least 3 space nodes".into()));
        }
        if self.time_steps == 0 {
            return Err(UvmError::Config("need at least 1 time step".into()));
        }
        let width = self.half_width_mult * sigma_hi * horizon.sqrt();
        let h = 2.0 * width / (self.space_nodes - 1) as f64;
        let dt = horizon / self.time_steps as f64;
        if dt * (sigma_hi * sigma_hi / (h * h) + rate) > 1.0 {
            return Err(UvmError::Numerical(format!(
                "explicit scheme unstable: dt={dt:.3e} exceeds the stability bound {:.3e}",
                1.0 / (sigma_hi * sigma_hi / (h * h) + rate)
            )));
        }
        Ok((h, dt))
    }
}

/// Value function of the 1-D solver at t = 0.
#[derive(Debug, Clone)]
pub struct Bsb1dSolution {
    /// Price nodes (not log-price).
    pub x_nodes: Vec<f64>,
    /// Worst-case value at t = 0 on the nodes.
    pub values: Vec<f64>,
}

impl Bsb1dSolution {
    /// Linear interpolation of the t = 0 value at price `x`.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.x_nodes.len();
        if x <= self.x_nodes[0] {
            return self.values[0];
        }
        if x >= self.x_nodes[n - 1] {
            return self.values[n - 1];
        }
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.x_nodes[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = (x - self.x_nodes[lo]) / (self.x_nodes[hi] - self.x_nodes[lo]);
        self.values[lo] * (1.0 - w) + self.values[hi] * w
    }
}

/// Backward explicit finite differences in log price for the worst-case
/// (upper) price of a one-dimensional claim with volatility in
/// [sigma_lo, sigma_hi].
///
/// At each node the squared volatility multiplies the discrete second
/// derivative in price; the maximizing choice is sigma_hi where that
/// derivative is nonnegative and sigma_lo otherwise. Domain edges use the
/// zero-convexity (linear-in-price) closure.
pub fn bsb1d_solve(
    payoff: impl Fn(f64) -> f64,
    sigma_lo: f64,
    sigma_hi: f64,
    rate: f64,
    horizon: f64,
    grid: &FdGrid,
) -> Result<Bsb1dSolution> {
    if !(sigma_lo > 0.0 && sigma_lo <= sigma_hi) {
        return Err(UvmError::Config(
            "volatility bounds must satisfy 0 < lo <= hi".into(),
        ));
    }
    let (h, dt) = grid.validate(sigma_hi, rate, horizon)?;
    let n = grid.space_nodes;
    let y0 = grid.x0.ln();
    let width = grid.half_width_mult * sigma_hi * horizon.sqrt();
    let y_nodes: Vec<f64> = (0..n)
        .map(|j| y0 - width + 2.0 * width * j as f64 / (n - 1) as f64)
        .collect();
    let x_nodes: Vec<f64> = y_nodes.iter().map(|y| y.exp()).collect();

    let mut v: Vec<f64> = x_nodes.iter().map(|&x| payoff(x)).collect();
    let mut v_new = vec![0.0; n];
    let s2_lo = sigma_lo * sigma_lo;
    let s2_hi = sigma_hi * sigma_hi;
    for _ in 0..grid.time_steps {
        for j in 1..(n - 1) {
            let d1 = (v[j + 1] - v[j - 1]) / (2.0 * h);
            let d2 = (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (h * h);
            // Convexity in price at this node: x^2 Vxx = Vyy - Vy.
            let s2 = if d2 - d1 >= 0.0 { s2_hi } else { s2_lo };
            v_new[j] = v[j] + dt * ((rate - 0.5 * s2) * d1 + 0.5 * s2 * d2 - rate * v[j]);
        }
        // Linear in price at the edges (zero second derivative in x).
        v_new[0] = {
            let slope = (v_new[2] - v_new[1]) / (x_nodes[2] - x_nodes[1]);
            v_new[1] - slope * (x_nodes[1] - x_nodes[0])
        };
        v_new[n - 1] = {
            let slope = (v_new[n - 2] - v_new[n - 3]) / (x_nodes[n - 2] - x_nodes[n - 3]);
            v_new[n - 2] + slope * (x_nodes[n - 1] - x_nodes[n - 2])
        };
        std::mem::swap(&mut v, &mut v_new);
    }
    Ok(Bsb1dSolution {
        x_nodes,
        values: v,
    })
}

/// Standard Black-Scholes call value.
pub fn black_scholes_call(x: f64, strike: f64, sigma: f64, rate: f64, horizon: f64) -> f64 {
    if horizon <= 0.0 || sigma <= 0.0 {
        return (x - strike * (-rate * horizon).exp()).max(0.0);
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sqrt_t = horizon.sqrt();
    let d1 = ((x / strike).ln() + (rate + 0.5 * sigma * sigma) * horizon) / (sigma * sqrt_t);
    let d2 = d1 - sigma * sqrt_t;
    x * normal.cdf(d1) - strike * (-rate * horizon).exp() * normal.cdf(d2)
}

/// Black-Scholes vega (sensitivity to sigma), used in grid-error estimates.
pub fn black_scholes_vega(x: f64, strike: f64, sigma: f64, rate: f64, horizon: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sqrt_t = horizon.sqrt();
    let d1 = ((x / strike).ln() + (rate + 0.5 * sigma * sigma) * horizon) / (sigma * sqrt_t);
    x * normal.pdf(d1) * sqrt_t
}

/// One action of the brute-force solver: a volatility per asset and, for
/// two assets, optionally a pairwise correlation.
#[derive(Debug, Clone)]
pub struct DpAction {
    pub sigma: Vec<f64>,
    pub rho: Option<f64>,
}

/// Configuration of the brute-force dynamic-programming oracle.
#[derive(Debug, Clone)]
pub struct DpConfig {
    /// Time steps (small: the state grid is re-interpolated each step).
    pub time_steps: usize,
    /// Gauss-Hermite nodes per dimension.
    pub quad_nodes: usize,
    /// State-grid nodes per dimension (odd keeps the spot on the grid).
    pub state_nodes: usize,
    /// Log-price half-width in units of sigma_max * sqrt(T).
    pub half_width_mult: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            time_steps: 1,
            quad_nodes: 64,
            state_nodes: 201,
            half_width_mult: 6.0,
        }
    }
}

/// Exhaustive backward dynamic programming on a tensor state grid:
/// V_n(x) = max_a exp(-r dt) E[V_{n+1}(F(x, a, xi))], the expectation by
/// Gauss-Hermite quadrature, V_{n+1} by multilinear interpolation in log
/// price (flat beyond the grid). Dimensions 1 and 2 only.
pub fn dp_bruteforce(
    spot: &[f64],
    rate: f64,
    horizon: f64,
    payoff: impl Fn(&[f64]) -> f64 + Sync,
    actions: &[DpAction],
    config: &DpConfig,
) -> Result<f64> {
    let d = spot.len();
    if d == 0 || d > 2 {
        return Err(UvmError::Config(
            "brute-force oracle supports one or two assets".into(),
        ));
    }
    if config.time_steps == 0 || config.time_steps > 3 {
        return Err(UvmError::Config(
            "brute-force oracle is meant for 1 to 3 time steps".into(),
        ));
    }
    if actions.is_empty() {
        return Err(UvmError::Config("need at least one action".into()));
    }
    let mut sigma_max: f64 = 0.0;
    for a in actions {
        if a.sigma.len() != d {
            return Err(UvmError::ShapeMismatch(
                "action volatility length != dimension".into(),
            ));
        }
        for &s in &a.sigma {
            sigma_max = sigma_max.max(s);
        }
        if d == 1 && a.rho.is_some() {
            return Err(UvmError::Config("correlation is undefined for one asset".into()));
        }
    }
    let dt = horizon / config.time_steps as f64;
    let (nodes, weights) = gauss_hermite_normal(config.quad_nodes);

    // Precompute each action's factor.
    let factors: Vec<CorrFactor> = actions
        .iter()
        .map(|a| match (d, a.rho) {
            (2, Some(r)) => factor_from_rho2(r),
            (2, None) => Ok(CorrFactor::identity(2)),
            _ => Ok(CorrFactor::identity(1)),
        })
        .collect::<Result<_>>()?;

    // Log-price grid per dimension, shared across assets.
    let g = config.state_nodes;
    let width = config.half_width_mult * sigma_max * horizon.sqrt();
    let log_grid: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let y0 = spot[i].ln();
            (0..g)
                .map(|j| y0 - width + 2.0 * width * j as f64 / (g - 1) as f64)
                .collect()
        })
        .collect();
    let grid_step = 2.0 * width / (g - 1) as f64;

    let n_states = g.pow(d as u32);
    let state_price = |flat: usize, i: usize| -> f64 {
        let idx = if i == 0 { flat % g } else { flat / g };
        log_grid[i][idx].exp()
    };

    // Terminal layer.
    let mut values: Vec<f64> = (0..n_states)
        .map(|flat| {
            let x: Vec<f64> = (0..d).map(|i| state_price(flat, i)).collect();
            payoff(&x)
        })
        .collect();

    // Multilinear interpolation in log price, flat extrapolation.
    let interp = |values: &[f64], x: &[f64]| -> f64 {
        let mut coords = [0usize; 2];
        let mut fracs = [0.0f64; 2];
        for i in 0..d {
            let y = x[i].ln();
            let pos = (y - log_grid[i][0]) / grid_step;
            if pos <= 0.0 {
                coords[i] = 0;
                fracs[i] = 0.0;
            } else if pos >= (g - 1) as f64 {
                coords[i] = g - 2;
                fracs[i] = 1.0;
            } else {
                coords[i] = pos as usize;
                fracs[i] = pos - coords[i] as f64;
            }
        }
        match d {
            1 => {
                let j = coords[0];
                values[j] * (1.0 - fracs[0]) + values[j + 1] * fracs[0]
            }
            _ => {
                let (j0, j1) = (coords[0], coords[1]);
                let (f0, f1) = (fracs[0], fracs[1]);
                let v00 = values[j1 * g + j0];
                let v10 = values[j1 * g + j0 + 1];
                let v01 = values[(j1 + 1) * g + j0];
                let v11 = values[(j1 + 1) * g + j0 + 1];
                v00 * (1.0 - f0) * (1.0 - f1)
                    + v10 * f0 * (1.0 - f1)
                    + v01 * (1.0 - f0) * f1
                    + v11 * f0 * f1
            }
        }
    };

    let discount = (-rate * dt).exp();
    let step_value = |values: &[f64], x: &[f64]| -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut next = vec![0.0; d];
        let mut corr = vec![0.0; d];
        for (a, factor) in actions.iter().zip(factors.iter()) {
            let mut expectation = 0.0;
            match d {
                1 => {
                    for (q, &z) in nodes.iter().enumerate() {
                        let drift = (rate - 0.5 * a.sigma[0] * a.sigma[0]) * dt;
                        next[0] = x[0] * (drift + a.sigma[0] * dt.sqrt() * z).exp();
                        expectation += weights[q] * interp(values, &next);
                    }
                }
                _ => {
                    for (q1, &z1) in nodes.iter().enumerate() {
                        for (q2, &z2) in nodes.iter().enumerate() {
                            let xi = [z1, z2];
                            factor.correlate_into(&xi, &mut corr);
                            for i in 0..2 {
                                let drift = (rate - 0.5 * a.sigma[i] * a.sigma[i]) * dt;
                                next[i] =
                                    x[i] * (drift + a.sigma[i] * dt.sqrt() * corr[i]).exp();
                            }
                            expectation += weights[q1] * weights[q2] * interp(values, &next);
                        }
                    }
                }
            }
            best = best.max(discount * expectation);
        }
        best
    };

    // Backward over interior layers (values on the grid), then the root.
    for _layer in (1..config.time_steps).rev() {
        let snapshot = values.clone();
        use rayon::prelude::*;
        let new_vals: Vec<f64> = (0..n_states)
            .into_par_iter()
            .map(|flat| {
                let x: Vec<f64> = (0..d).map(|i| state_price(flat, i)).collect();
                step_value(&snapshot, &x)
            })
            .collect();
        values = new_vals;
    }
    Ok(step_value(&values, spot))
}
