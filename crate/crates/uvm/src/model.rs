//! Market model specification: dimension, spot, rate, horizon and the
//! volatility/correlation uncertainty sets.

use crate::corrvine::{CorrBounds, CorrFactor};
use crate::error::{Result, UvmError};
use crate::math::{cholesky, SymMatrix};

/// Whether correlations are part of the control or pinned to a fixed matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrMode {
    /// Correlations are controlled within pairwise bounds.
    Uncertain,
    /// Correlations are fixed to the given matrix for all scenarios.
    Fixed(SymMatrix),
}

/// Full market model description: the data defining the admissible scenario set.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub spot: Vec<f64>,
    pub rate: f64,
    pub horizon: f64,
    pub steps: usize,
    pub vol_lo: Vec<f64>,
    pub vol_hi: Vec<f64>,
    pub corr_bounds: CorrBounds,
    pub corr_mode: CorrMode,
    /// Cholesky factor of the fixed correlation matrix, precomputed.
    fixed_factor: Option<CorrFactor>,
}

impl ModelSpec {
    /// Validate and construct. Checks positive ordered volatility bounds,
    /// correlation bounds inside [-1, 1], and (in fixed mode) that the fixed
    /// matrix is a valid correlation matrix.
    pub fn new(
        dim: usize,
        spot: Vec<f64>,
        rate: f64,
        horizon: f64,
        steps: usize,
        vol_lo: Vec<f64>,
        vol_hi: Vec<f64>,
        corr_bounds: CorrBounds,
        corr_mode: CorrMode,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(UvmError::Config("dimension must be >= 1".into()));
        }
        if spot.len() != dim || vol_lo.len() != dim || vol_hi.len() != dim {
            return Err(UvmError::ShapeMismatch(
                "spot/vol bound lengths must equal dim".into(),
            ));
        }
        if spot.iter().any(|&s| !(s > 0.0)) {
            return Err(UvmError::Config("spot must be strictly positive".into()));
        }
        if rate < 0.0 {
            return Err(UvmError::Config("rate must be >= 0".into()));
        }
        if !(horizon > 0.0) {
            return Err(UvmError::Config("horizon must be > 0".into()));
        }
        if steps == 0 {
            return Err(UvmError::Config("steps must be >= 1".into()));
        }
        for i in 0..dim {
            if !(vol_lo[i] > 0.0 && vol_lo[i] <= vol_hi[i]) {
                return Err(UvmError::Config(format!(
                    "volatility bounds must satisfy 0 < lo <= hi (asset {i}: {} .. {})",
                    vol_lo[i], vol_hi[i]
                )));
            }
        }
        if corr_bounds.dim() != dim {
            return Err(UvmError::ShapeMismatch(
                "correlation bounds dimension != dim".into(),
            ));
        }
        let fixed_factor = match &corr_mode {
            CorrMode::Uncertain => None,
            CorrMode::Fixed(rho) => {
                if rho.dim() != dim {
                    return Err(UvmError::ShapeMismatch(
                        "fixed correlation dimension != dim".into(),
                    ));
                }
                for i in 0..dim {
                    if (rho.get(i, i) - 1.0).abs() > 1e-12 {
                        return Err(UvmError::Config(
                            "fixed correlation matrix must have unit diagonal".into(),
                        ));
                    }
                }
                let lower = cholesky(rho).map_err(|_| {
                    UvmError::Config("fixed correlation matrix is not positive definite".into())
                })?;
                Some(CorrFactor::from_lower(lower)?)
            }
        };
        Ok(ModelSpec {
            dim,
            spot,
            rate,
            horizon,
            steps,
            vol_lo,
            vol_hi,
            corr_bounds,
            corr_mode,
            fixed_factor,
        })
    }

    /// Time step T / N.
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time grid point t_n = n T / N.
    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.steps as f64
    }

    pub fn is_uncertain_corr(&self) -> bool {
        matches!(self.corr_mode, CorrMode::Uncertain)
    }

    /// Cholesky factor of the fixed correlation matrix (fixed mode only).
    pub fn fixed_factor(&self) -> Option<&CorrFactor> {
        self.fixed_factor.as_ref()
    }

    /// Number of latent correlation coordinates controlled by a continuous
    /// policy: d(d-1)/2 when correlation is uncertain (in d = 2 the single
    /// coordinate maps straight onto the bounded interval), zero otherwise.
    pub fn latent_corr_dim(&self) -> usize {
        if self.is_uncertain_corr() && self.dim >= 2 {
            self.dim * (self.dim - 1) / 2
        } else {
            0
        }
    }

    /// Latent dimension of the continuous policy: d volatility coordinates
    /// plus the correlation coordinates.
    pub fn latent_dim(&self) -> usize {
        self.dim + self.latent_corr_dim()
    }

    /// Number of binary decisions of a bang-bang policy: one per volatility,
    /// plus one for the pairwise correlation when d = 2 and uncertain.
    pub fn bangbang_bits(&self) -> usize {
        self.dim + usize::from(self.is_uncertain_corr() && self.dim == 2)
    }

    /// Convenience constructor with identical assets and uniform bounds.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        dim: usize,
        spot: f64,
        rate: f64,
        horizon: f64,
        steps: usize,
        vol_lo: f64,
        vol_hi: f64,
        corr_lo: f64,
        corr_hi: f64,
        corr_mode: CorrMode,
    ) -> Result<Self> {
        Self::new(
            dim,
            vec![spot; dim],
            rate,
            horizon,
            steps,
            vec![vol_lo; dim],
            vec![vol_hi; dim],
            CorrBounds::uniform(dim, corr_lo, corr_hi)?,
            corr_mode,
        )
    }

    /// Fixed correlation matrix with a common off-diagonal value.
    pub fn equicorrelation(dim: usize, rho: f64) -> SymMatrix {
        let mut m = SymMatrix::identity(dim);
        for i in 0..dim {
            for j in (i + 1)..dim {
                m.set(i, j, rho);
            }
        }
        m
    }
}
