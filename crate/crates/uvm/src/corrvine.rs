//! C-vine parameterization of correlation matrices.
//!
//! A vector of partial correlations in (-1,1)^{d(d-1)/2} maps bijectively to
//! a valid (unit-diagonal, positive-definite) correlation matrix. The packed
//! ordering is level-major: all level-1 entries first (pairs (0,j) for
//! j = 1..d, unconditional), then level 2 (pairs (1,j) given asset 0), and so
//! on, pairs in lexicographic order within each level. For d = 3 this is
//! (y_01, y_02, y_12|0).
//!
//! Two routes out of the parameterization are provided:
//! * [`cvine_build`] assembles the Cholesky factor L of the correlation
//!   matrix row by row, without any numerical factorization;
//! * [`cvine_pairwise`] recovers the pairwise correlations through the vine
//!   recursion alone.
//!
//! Both describe the same matrix: `cvine_pairwise(y) == L Lᵀ` up to roundoff.

use crate::error::{Result, UvmError};
use crate::math::{LowerTriangular, SymMatrix};

/// Packed index of pair (i, j), i < j, in level-major order.
#[inline]
pub fn pair_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < dim);
    i * dim - i * (i + 1) / 2 + (j - i - 1)
}

/// Number of packed entries for dimension `dim`.
#[inline]
pub fn n_pairs(dim: usize) -> usize {
    dim * (dim - 1) / 2
}

/// Ordered vector of partial correlations, level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCorrVector {
    dim: usize,
    entries: Vec<f64>,
}

impl PartialCorrVector {
    /// Validates that every entry lies strictly inside (-1, 1) and that the
    /// length matches `dim`.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n_pairs(dim) {
            return Err(UvmError::ShapeMismatch(format!(
                "expected {} partial correlations for d={dim}, got {}",
                n_pairs(dim),
                entries.len()
            )));
        }
        for (k, &y) in entries.iter().enumerate() {
            if !(y.is_finite() && y.abs() < 1.0) {
                return Err(UvmError::InvalidInput(format!(
                    "partial correlation {y} at index {k} is outside (-1, 1)"
                )));
            }
        }
        Ok(PartialCorrVector { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[pair_index(self.dim, i, j)]
    }
}

/// Lower-triangular factor L of a correlation matrix, rho = L Lᵀ.
///
/// Invariants by construction: strictly positive diagonal and unit-norm rows,
/// so the implied rho has unit diagonal and is positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrFactor {
    factor: LowerTriangular,
}

impl CorrFactor {
    pub fn identity(dim: usize) -> Self {
        CorrFactor {
            factor: LowerTriangular::identity(dim),
        }
    }

    /// Wraps an existing lower-triangular factor, checking the invariants.
    pub fn from_lower(factor: LowerTriangular) -> Result<Self> {
        for i in 0..factor.dim() {
            if factor.get(i, i) <= 0.0 {
                return Err(UvmError::InvalidInput(format!(
                    "nonpositive diagonal {} in correlation factor row {i}",
                    factor.get(i, i)
                )));
            }
            let norm2: f64 = factor.row(i).iter().map(|v| v * v).sum();
            if (norm2 - 1.0).abs() > 1e-9 {
                return Err(UvmError::InvalidInput(format!(
                    "correlation factor row {i} has norm^2 {norm2}, expected 1"
                )));
            }
        }
        Ok(CorrFactor { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn lower(&self) -> &LowerTriangular {
        &self.factor
    }

    /// The correlation matrix L Lᵀ.
    pub fn correlation(&self) -> SymMatrix {
        self.factor.gram()
    }

    /// Correlated draw: y = L x.
    pub fn correlate_into(&self, x: &[f64], out: &mut [f64]) {
        self.factor.matvec_into(x, out);
    }
}

/// Builds the Cholesky factor of the correlation matrix directly from the
/// partial correlations. Row i is assembled from the partials involving
/// asset i at successive vine levels; each diagonal entry is a product of
/// sqrt(1 - y^2) terms and stays strictly positive on the open domain.
pub fn cvine_build(y: &PartialCorrVector) -> Result<CorrFactor> {
    let d = y.dim();
    let mut l = LowerTriangular::zeros(d);
    *l.get_mut(0, 0) = 1.0;
    for i in 1..d {
        let mut running = 1.0;
        for k in 0..i {
            let c = y.get(k, i);
            *l.get_mut(i, k) = c * running;
            running *= (1.0 - c * c).sqrt();
        }
        *l.get_mut(i, i) = running;
    }
    Ok(CorrFactor { factor: l })
}

/// Recovers the pairwise correlation matrix through the vine recursion,
/// de-conditioning each partial correlation level by level.
pub fn cvine_pairwise(y: &PartialCorrVector) -> Result<SymMatrix> {
    let d = y.dim();
    let mut rho = SymMatrix::identity(d);
    for k in 0..(d - 1) {
        for j in (k + 1)..d {
            let mut t = y.get(k, j);
            for m in (0..k).rev() {
                let a = y.get(m, k);
                let b = y.get(m, j);
                t = t * ((1.0 - a * a) * (1.0 - b * b)).sqrt() + a * b;
            }
            rho.set(k, j, t);
        }
    }
    Ok(rho)
}

/// Pairwise correlations together with the Jacobian d rho / d y.
///
/// Returns the packed off-diagonal correlations (level-major pair order) and
/// the row-major Jacobian `jac[p * n + q] = d rho_p / d y_q` with
/// `n = d(d-1)/2`. Used to propagate the bound-penalty gradient back to the
/// latent policy mean.
pub fn cvine_pairwise_grad(y: &PartialCorrVector) -> (Vec<f64>, Vec<f64>) {
    let d = y.dim();
    let n = n_pairs(d);
    let mut rho = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    // Forward-mode tangents: value t plus dense gradient dt over all inputs.
    let mut dt = vec![0.0; n];
    for k in 0..(d - 1) {
        for j in (k + 1)..d {
            let p = pair_index(d, k, j);
            let mut t = y.get(k, j);
            dt.iter_mut().for_each(|v| *v = 0.0);
            dt[p] = 1.0;
            for m in (0..k).rev() {
                let a = y.get(m, k);
                let b = y.get(m, j);
                let ia = pair_index(d, m, k);
                let ib = pair_index(d, m, j);
                let sa = 1.0 - a * a;
                let sb = 1.0 - b * b;
                let s = (sa * sb).sqrt();
                // t' = t*s + a*b
                for q in 0..n {
                    dt[q] *= s;
                }
                if s > 0.0 {
                    dt[ia] += t * (-a * sb) / s + b;
                    dt[ib] += t * (-b * sa) / s + a;
                }
                t = t * s + a * b;
            }
            rho[p] = t;
            jac[p * n..(p + 1) * n].copy_from_slice(&dt);
        }
    }
    (rho, jac)
}

/// Pairwise lower/upper correlation bounds, packed over i < j.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrBounds {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl CorrBounds {
    /// Uniform bounds applied to every pair.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        let n = n_pairs(dim);
        Self::new(dim, vec![lower; n], vec![upper; n])
    }

    /// Per-pair bounds in packed level-major order.
    pub fn new(dim: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = n_pairs(dim);
        if lower.len() != n || upper.len() != n {
            return Err(UvmError::ShapeMismatch(format!(
                "expected {n} bound pairs for d={dim}"
            )));
        }
        for k in 0..n {
            if !(-1.0..=1.0).contains(&lower[k]) || !(-1.0..=1.0).contains(&upper[k]) {
                return Err(UvmError::InvalidInput(format!(
                    "correlation bound outside [-1, 1] at pair {k}"
                )));
            }
            if lower[k] > upper[k] {
                return Err(UvmError::InvalidInput(format!(
                    "correlation bounds reversed at pair {k}: {} > {}",
                    lower[k], upper[k]
                )));
            }
        }
        Ok(CorrBounds { dim, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn lower_at(&self, i: usize, j: usize) -> f64 {
        self.lower[pair_index(self.dim, i, j)]
    }

    #[inline]
    pub fn upper_at(&self, i: usize, j: usize) -> f64 {
        self.upper[pair_index(self.dim, i, j)]
    }

    pub fn lower_packed(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper_packed(&self) -> &[f64] {
        &self.upper
    }

    /// Clamp packed correlations onto the bounds; returns true if any entry
    /// actually moved.
    pub fn clamp_packed(&self, rho: &mut [f64]) -> bool {
        let mut moved = false;
        for (k, r) in rho.iter_mut().enumerate() {
            let c = r.clamp(self.lower[k], self.upper[k]);
            if c != *r {
                moved = true;
                *r = c;
            }
        }
        moved
    }
}

/// Huber function with transition threshold `delta`: quadratic v^2/(2 delta)
/// up to the threshold, linear v - delta/2 beyond it.
#[inline]
fn huber(v: f64, delta: f64) -> f64 {
    if v <= delta {
        v * v / (2.0 * delta)
    } else {
        v - delta / 2.0
    }
}

#[inline]
fn huber_prime(v: f64, delta: f64) -> f64 {
    if v <= delta {
        v / delta
    } else {
        1.0
    }
}

fn check_penalty_args(bounds: &CorrBounds, beta: f64, delta: f64) -> Result<()> {
    if delta <= 0.0 {
        return Err(UvmError::InvalidInput("penalty delta must be > 0".into()));
    }
    if beta < 0.0 {
        return Err(UvmError::InvalidInput("penalty beta must be >= 0".into()));
    }
    for k in 0..bounds.lower.len() {
        if bounds.upper[k] == bounds.lower[k] {
            return Err(UvmError::InvalidInput(format!(
                "degenerate correlation bounds at pair {k}: normalization divides by zero"
            )));
        }
    }
    Ok(())
}

/// Averaged Huber penalty on pairwise correlation bound violations.
///
/// Violations are normalized by the width of the admissible interval, so the
/// penalty scale is comparable across pairs; the result is zero exactly when
/// every pairwise correlation lies within its bounds.
pub fn corr_penalty(rho: &SymMatrix, bounds: &CorrBounds, beta: f64, delta: f64) -> Result<f64> {
    let packed = packed_offdiag(rho);
    corr_penalty_packed(&packed, bounds, beta, delta).map(|(v, _)| v)
}

/// Penalty and its derivative with respect to each packed correlation.
pub fn corr_penalty_packed(
    rho: &[f64],
    bounds: &CorrBounds,
    beta: f64,
    delta: f64,
) -> Result<(f64, Vec<f64>)> {
    check_penalty_args(bounds, beta, delta)?;
    let n = bounds.lower.len();
    if rho.len() != n {
        return Err(UvmError::ShapeMismatch(format!(
            "expected {n} packed correlations, got {}",
            rho.len()
        )));
    }
    let scale = beta * 2.0 / (bounds.dim * (bounds.dim - 1)) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let width = bounds.upper[k] - bounds.lower[k];
        let over = (rho[k] - bounds.upper[k]).max(0.0) / width;
        let under = (bounds.lower[k] - rho[k]).max(0.0) / width;
        total += huber(over, delta) + huber(under, delta);
        if over > 0.0 {
            grad[k] += huber_prime(over, delta) / width;
        }
        if under > 0.0 {
            grad[k] -= huber_prime(under, delta) / width;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((scale * total, grad))
}

/// Extract the strict upper triangle of a symmetric matrix in packed
/// level-major pair order.
pub fn packed_offdiag(rho: &SymMatrix) -> Vec<f64> {
    let d = rho.dim();
    let mut out = vec![0.0; n_pairs(d)];
    for i in 0..d {
        for j in (i + 1)..d {
            out[pair_index(d, i, j)] = rho.get(i, j);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_partials(dim: usize, span: f64, rng: &mut impl Rng) -> PartialCorrVector {
        let entries: Vec<f64> = (0..n_pairs(dim))
            .map(|_| rng.random_range(-span..span))
            .collect();
        PartialCorrVector::new(dim, entries).unwrap()
    }

    #[test]
    fn zero_partials_give_identity() {
        let y = PartialCorrVector::new(3, vec![0.0; 3]).unwrap();
        let f = cvine_build(&y).unwrap();
        let rho = f.correlation();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(rho.get(i, j), expect);
                if j <= i {
                    assert_eq!(f.lower().get(i, j), expect);
                }
            }
        }
    }

    #[test]
    fn d3_zero_conditional_term() {
        // With y_12|0 = 0 the (1,2) correlation is the product of the two
        // level-1 entries.
        let y = PartialCorrVector::new(3, vec![0.5, 0.5, 0.0]).unwrap();
        let rho = cvine_pairwise(&y).unwrap();
        assert!((rho.get(0, 1) - 0.5).abs() < 1e-15);
        assert!((rho.get(0, 2) - 0.5).abs() < 1e-15);
        assert!((rho.get(1, 2) - 0.25).abs() < 1e-15);
        let built = cvine_build(&y).unwrap().correlation();
        for i in 0..3 {
            for j in 0..3 {
                assert!((built.get(i, j) - rho.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn d3_explicit_deconditioning_formula() {
        let y = PartialCorrVector::new(3, vec![0.3, -0.4, 0.6]).unwrap();
        let rho = cvine_pairwise(&y).unwrap();
        let expect = 0.6 * ((1.0f64 - 0.09) * (1.0 - 0.16)).sqrt() + 0.3 * (-0.4);
        assert!((rho.get(1, 2) - expect).abs() < 1e-15);
    }

    #[test]
    fn extreme_partials_stay_positive_definite() {
        let y = PartialCorrVector::new(5, vec![0.9; 10]).unwrap();
        let rho = cvine_build(&y).unwrap().correlation();
        assert!(rho.min_eigenvalue() > 0.0);
    }

    #[test]
    fn d2_is_identity_on_the_single_entry() {
        let y = PartialCorrVector::new(2, vec![0.37]).unwrap();
        let rho = cvine_pairwise(&y).unwrap();
        assert_eq!(rho.get(0, 1), 0.37);
    }

    #[test]
    fn pairwise_matches_factor_gram_d4() {
        let mut rng = crate::rng::stream(11, crate::rng::Domain::Check { case: 1 });
        for _ in 0..50 {
            let y = random_partials(4, 0.99, &mut rng);
            let rho = cvine_pairwise(&y).unwrap();
            let gram = cvine_build(&y).unwrap().correlation();
            for i in 0..4 {
                for j in 0..4 {
                    assert!((rho.get(i, j) - gram.get(i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_range_entries() {
        assert!(PartialCorrVector::new(3, vec![0.0, 1.0, 0.0]).is_err());
        assert!(PartialCorrVector::new(3, vec![0.0, -1.3, 0.0]).is_err());
        assert!(PartialCorrVector::new(3, vec![0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = crate::rng::stream(13, crate::rng::Domain::Check { case: 2 });
        for &dim in &[3usize, 5] {
            let y = random_partials(dim, 0.8, &mut rng);
            let n = n_pairs(dim);
            let (rho, jac) = cvine_pairwise_grad(&y);
            let base = packed_offdiag(&cvine_pairwise(&y).unwrap());
            for (a, b) in rho.iter().zip(base.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
            let h = 1e-6;
            for q in 0..n {
                let mut up = y.entries().to_vec();
                let mut dn = up.clone();
                up[q] += h;
                dn[q] -= h;
                let rup = packed_offdiag(
                    &cvine_pairwise(&PartialCorrVector::new(dim, up).unwrap()).unwrap(),
                );
                let rdn = packed_offdiag(
                    &cvine_pairwise(&PartialCorrVector::new(dim, dn).unwrap()).unwrap(),
                );
                for p in 0..n {
                    let fd = (rup[p] - rdn[p]) / (2.0 * h);
                    assert!(
                        (jac[p * n + q] - fd).abs() < 1e-7,
                        "jacobian mismatch d={dim} p={p} q={q}: {} vs {}",
                        jac[p * n + q],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn penalty_zero_inside_bounds() {
        let bounds = CorrBounds::uniform(3, -0.5, 0.5).unwrap();
        let mut rho = SymMatrix::identity(3);
        rho.set(0, 1, 0.2);
        rho.set(0, 2, -0.5);
        rho.set(1, 2, 0.5);
        assert_eq!(corr_penalty(&rho, &bounds, 10.0, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn penalty_branch_values() {
        // Single pair (d=2), interval width 1 so violations are their own
        // normalized size.
        let bounds = CorrBounds::uniform(2, -0.5, 0.5).unwrap();
        let mut rho = SymMatrix::identity(2);
        // Violation exactly at the threshold: quadratic branch gives delta/2.
        rho.set(0, 1, 0.55);
        let v = corr_penalty(&rho, &bounds, 10.0, 0.05).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
        // Violation of 0.10: linear branch v - delta/2.
        rho.set(0, 1, 0.60);
        let v = corr_penalty(&rho, &bounds, 10.0, 0.05).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
    }

    #[test]
    fn penalty_scales_linearly_in_beta() {
        let bounds = CorrBounds::uniform(2, -0.5, 0.5).unwrap();
        let mut rho = SymMatrix::identity(2);
        rho.set(0, 1, 0.8);
        let v1 = corr_penalty(&rho, &bounds, 1.0, 0.05).unwrap();
        let v7 = corr_penalty(&rho, &bounds, 7.0, 0.05).unwrap();
        assert!((v7 - 7.0 * v1).abs() < 1e-12);
    }

    #[test]
    fn penalty_rejects_degenerate_bounds() {
        let bounds = CorrBounds::uniform(2, 0.3, 0.3).unwrap();
        let rho = SymMatrix::identity(2);
        assert!(corr_penalty(&rho, &bounds, 10.0, 0.05).is_err());
    }

    #[test]
    fn penalty_derivative_continuous_at_threshold() {
        // Derivative of the Huber branch w.r.t. the normalized violation is 1
        // at the threshold from both sides.
        let delta = 0.05;
        assert!((huber_prime(delta - 1e-12, delta) - 1.0).abs() < 1e-9);
        assert_eq!(huber_prime(delta + 1e-12, delta), 1.0);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let bounds = CorrBounds::uniform(3, -0.4, 0.4).unwrap();
        let rho = vec![0.41, -0.55, 0.2]; // one quadratic, one linear, one inactive
        let (_, grad) = corr_penalty_packed(&rho, &bounds, 10.0, 0.05).unwrap();
        let h = 1e-7;
        for k in 0..3 {
            let mut up = rho.clone();
            let mut dn = rho.clone();
            up[k] += h;
            dn[k] -= h;
            let (vu, _) = corr_penalty_packed(&up, &bounds, 10.0, 0.05).unwrap();
            let (vd, _) = corr_penalty_packed(&dn, &bounds, 10.0, 0.05).unwrap();
            let fd = (vu - vd) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-6, "pair {k}: {} vs {fd}", grad[k]);
        }
    }
}
