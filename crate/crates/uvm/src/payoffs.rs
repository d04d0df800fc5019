//! Payoff functions with a uniform evaluation interface.
//!
//! All payoffs are nonnegative on reachable states. Geometric means are
//! computed in log space so high-dimensional baskets neither overflow nor
//! underflow.

use crate::dynamics::StateBatch;
use crate::error::{Result, UvmError};

/// Payoff families.
#[derive(Debug, Clone, PartialEq)]
pub enum PayoffKind {
    /// (geometric mean of assets 2..d minus asset 1)^+, d >= 2.
    GeoOutperformer,
    /// (X2 - 0.9 X1)^+ - (X2 - 1.1 X1)^+, d = 2.
    OutperformerSpread,
    /// Butterfly on max(X1, X2) with strikes k1 < k2, d = 2.
    BestOfButterfly { k1: f64, k2: f64 },
    /// Call spread on the geometric mean of all assets, strikes k1 < k2.
    GeoCallSpread { k1: f64, k2: f64 },
    /// (X - k)^+ / sqrt(V_T) with V_T the realized variance from monthly
    /// returns; single asset, path-dependent (augmented state).
    CallSharpe { k: f64 },
}

/// A payoff bound to an asset dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub dim: usize,
    /// Payoff returned when the realized variance is zero but the call is in
    /// the money (an almost-surely null event kept finite by convention).
    pub zero_variance_cap: f64,
}

impl PayoffSpec {
    pub fn new(kind: PayoffKind, dim: usize) -> Result<Self> {
        match &kind {
            PayoffKind::GeoOutperformer => {
                if dim < 2 {
                    return Err(UvmError::Config(
                        "geo-outperformer needs at least two assets".into(),
                    ));
                }
            }
            PayoffKind::OutperformerSpread => {
                if dim != 2 {
                    return Err(UvmError::Config("outperformer spread needs d = 2".into()));
                }
            }
            PayoffKind::BestOfButterfly { k1, k2 } => {
                if dim != 2 {
                    return Err(UvmError::Config("best-of butterfly needs d = 2".into()));
                }
                if !(k1 < k2) {
                    return Err(UvmError::Config("butterfly strikes must satisfy k1 < k2".into()));
                }
            }
            PayoffKind::GeoCallSpread { k1, k2 } => {
                if !(k1 < k2) {
                    return Err(UvmError::Config(
                        "call-spread strikes must satisfy k1 < k2".into(),
                    ));
                }
            }
            PayoffKind::CallSharpe { k } => {
                if dim != 1 {
                    return Err(UvmError::Config("call Sharpe is single-asset".into()));
                }
                if !(*k > 0.0) {
                    return Err(UvmError::Config("call Sharpe strike must be > 0".into()));
                }
            }
        }
        Ok(PayoffSpec {
            kind,
            dim,
            zero_variance_cap: 1e4,
        })
    }

    /// State dimension the payoff reads: d, plus two augmentation
    /// coordinates for the realized-variance payoff.
    pub fn state_dimension(&self) -> usize {
        match self.kind {
            PayoffKind::CallSharpe { .. } => self.dim + 2,
            _ => self.dim,
        }
    }

    /// Number of monitoring dates per unit horizon (12 per year for the
    /// realized-variance payoff, zero otherwise).
    pub fn monitor_count(&self, horizon: f64) -> usize {
        match self.kind {
            PayoffKind::CallSharpe { .. } => (12.0 * horizon).round() as usize,
            _ => 0,
        }
    }

    /// Evaluate on one terminal state row.
    pub fn evaluate_row(&self, row: &[f64], horizon: f64) -> f64 {
        match &self.kind {
            PayoffKind::GeoOutperformer => {
                let d = self.dim;
                let basket = if d == 2 {
                    row[1]
                } else {
                    (row[1..d].iter().map(|x| x.ln()).sum::<f64>() / (d - 1) as f64).exp()
                };
                (basket - row[0]).max(0.0)
            }
            PayoffKind::OutperformerSpread => {
                (row[1] - 0.9 * row[0]).max(0.0) - (row[1] - 1.1 * row[0]).max(0.0)
            }
            PayoffKind::BestOfButterfly { k1, k2 } => {
                let m = row[0].max(row[1]);
                let mid = 0.5 * (k1 + k2);
                (m - k1).max(0.0) - 2.0 * (m - mid).max(0.0) + (m - k2).max(0.0)
            }
            PayoffKind::GeoCallSpread { k1, k2 } => {
                let g = if self.dim == 1 {
                    row[0]
                } else {
                    (row[..self.dim].iter().map(|x| x.ln()).sum::<f64>() / self.dim as f64).exp()
                };
                (g - k1).max(0.0) - (g - k2).max(0.0)
            }
            PayoffKind::CallSharpe { k } => {
                let intrinsic = (row[0] - k).max(0.0);
                let v_t = row[self.dim] / horizon;
                if v_t > 0.0 {
                    intrinsic / v_t.sqrt()
                } else if intrinsic == 0.0 {
                    0.0
                } else {
                    self.zero_variance_cap
                }
            }
        }
    }

    /// Evaluate on a terminal state batch.
    pub fn evaluate(&self, terminal: &StateBatch, horizon: f64) -> Result<Vec<f64>> {
        if terminal.state_dim != self.state_dimension() || terminal.asset_dim != self.dim {
            return Err(UvmError::ShapeMismatch(format!(
                "payoff expects state dimension {}, got {}",
                self.state_dimension(),
                terminal.state_dim
            )));
        }
        Ok((0..terminal.batch)
            .map(|r| self.evaluate_row(terminal.row(r), horizon))
            .collect())
    }
}
