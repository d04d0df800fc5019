//! Small dense linear-algebra helpers shared across modules.
//!
//! Matrices here are tiny (d is the number of assets, rarely above 80), so
//! everything is plain row-major `Vec<f64>` with explicit loops. The only
//! heavyweight routine, symmetric eigendecomposition, is delegated to
//! `nalgebra`.

use nalgebra::DMatrix;

use crate::error::{Result, UvmError};

/// Mean and (population) variance of a slice.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Identity matrix of size `dim`.
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        SymMatrix { dim, data }
    }

    /// Build from a row-major slice; symmetry is enforced up to `tol`.
    pub fn from_row_major(dim: usize, data: &[f64], tol: f64) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(UvmError::ShapeMismatch(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (data[i * dim + j] - data[j * dim + i]).abs() > tol {
                    return Err(UvmError::InvalidInput(format!(
                        "matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(SymMatrix {
            dim,
            data: data.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Smallest eigenvalue, via nalgebra's symmetric eigensolver.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.data);
        let eig = m.symmetric_eigen();
        eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Project onto the positive-semidefinite cone and rescale to unit
    /// diagonal. Eigenvalues below `floor` are lifted to `floor`.
    pub fn nearest_correlation(&self, floor: f64) -> Result<SymMatrix> {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.data);
        let eig = m.symmetric_eigen();
        let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(floor)));
        let repaired = &eig.eigenvectors * clipped * eig.eigenvectors.transpose();
        let mut out = SymMatrix {
            dim: self.dim,
            data: vec![0.0; self.dim * self.dim],
        };
        for i in 0..self.dim {
            for j in 0..self.dim {
                let dii = repaired[(i, i)];
                let djj = repaired[(j, j)];
                if dii <= 0.0 || djj <= 0.0 {
                    return Err(UvmError::Numerical(
                        "degenerate diagonal in nearest-correlation repair".into(),
                    ));
                }
                out.data[i * self.dim + j] = repaired[(i, j)] / (dii * djj).sqrt();
            }
        }
        for i in 0..self.dim {
            out.data[i * self.dim + i] = 1.0;
        }
        Ok(out)
    }
}

/// Packed lower-triangular matrix (row-major, row i holds i+1 entries).
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        LowerTriangular {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim);
        for i in 0..dim {
            *l.get_mut(i, i) = 1.0;
        }
        l
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        self.data[Self::offset(i) + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i);
        &mut self.data[Self::offset(i) + j]
    }

    /// Row `i` as a slice of its `i + 1` stored entries.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[Self::offset(i)..Self::offset(i) + i + 1]
    }

    /// y = L x, writing into `out`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for i in 0..self.dim {
            let row = self.row(i);
            let mut acc = 0.0;
            for (l, xi) in row.iter().zip(x.iter()) {
                acc += l * xi;
            }
            out[i] = acc;
        }
    }

    /// L Lᵀ as a dense symmetric matrix.
    pub fn gram(&self) -> SymMatrix {
        let d = self.dim;
        let mut out = SymMatrix::identity(d);
        for i in 0..d {
            for j in 0..=i {
                let ri = self.row(i);
                let rj = self.row(j);
                let mut acc = 0.0;
                for k in 0..=j {
                    acc += ri[k] * rj[k];
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Fails when a pivot drops below `1e-12`, which doubles as the
/// positive-definiteness check used by callers.
pub fn cholesky(m: &SymMatrix) -> Result<LowerTriangular> {
    let d = m.dim();
    let mut l = LowerTriangular::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            let mut acc = m.get(i, j);
            for k in 0..j {
                acc -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if acc <= 1e-12 {
                    return Err(UvmError::Numerical(format!(
                        "matrix not positive definite (pivot {acc:.3e} at row {i})"
                    )));
                }
                *l.get_mut(i, i) = acc.sqrt();
            } else {
                *l.get_mut(i, j) = acc / l.get(j, j);
            }
        }
    }
    Ok(l)
}

/// Gauss-Hermite nodes and weights transformed for standard-normal
/// expectations: `E[f(Y)] ~ sum_i w_i f(y_i)` with `Y ~ N(0,1)`.
///
/// Computed by the Golub-Welsch algorithm on the Hermite Jacobi matrix.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            // Weight = sqrt(pi) * v0^2 for physicists' Hermite; the sqrt(pi)
            // cancels against the normal-measure normalization.
            let v0 = eig.eigenvectors[(0, i)];
            (node * std::f64::consts::SQRT_2, v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let nodes = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1).collect();
    (nodes, weights)
}
