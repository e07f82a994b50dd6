//! Euclidean projections onto l1 vector balls and onto induced-inf-norm and
//! spectral-norm matrix balls.

use nalgebra::{DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dependency::MatrixNorm;
use crate::error::{input, Error, Result};

/// `{Z : ||Z||_* <= radius}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBall {
    pub norm: MatrixNorm,
    pub radius: f64,
}

impl NormBall {
    pub fn new(norm: MatrixNorm, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return input(format!("ball radius must be positive, got {radius}"));
        }
        Ok(Self { norm, radius })
    }

    pub fn project(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self.norm {
            MatrixNorm::Inf => Ok(project_inf_ball(a, self.radius)),
            MatrixNorm::Spectral => project_spectral_ball(a, self.radius),
        }
    }
}

/// Projection onto `{z : ||z||_1 <= c}` by sorting magnitudes and
/// soft-thresholding at the unique level that lands on the boundary.
pub fn project_l1(a: &[f64], c: f64) -> Vec<f64> {
    let mut out = a.to_vec();
    project_l1_in_place(&mut out, c);
    out
}

pub fn project_l1_in_place(a: &mut [f64], c: f64) {
    let l1: f64 = a.iter().map(|v| v.abs()).sum();
    if l1 <= c {
        return;
    }
    let tau = l1_threshold(a, c);
    for v in a.iter_mut() {
        *v = v.signum() * (v.abs() - tau).max(0.0);
    }
}

/// Threshold `tau` with `sum_i max(|a_i| - tau, 0) = c`, for `||a||_1 > c`.
fn l1_threshold(a: &[f64], c: f64) -> f64 {
    let mut u: Vec<f64> = a.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    u.sort_unstable_by(|x, y| y.total_cmp(x));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - c) / (k + 1) as f64;
        if uk > t {
            tau = t;
        } else {
            break;
        }
    }
    tau
}

/// Row-wise l1 projection. Zero entries stay zero.
pub fn project_inf_ball(a: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let mut out = a.clone();
    let mut row = vec![0.0; a.ncols()];
    for r in 0..a.nrows() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = a[(r, k)];
        }
        project_l1_in_place(&mut row, c);
        for (k, v) in row.iter().enumerate() {
            out[(r, k)] = *v;
        }
    }
    out
}

/// Symmetric eigendecomposition of `[[0, A], [A^T, 0]]`, whose eigenvalues
/// are `+-` the singular values of `A`. An eigenvector `w = (u; v) / sqrt(2)`
/// of a positive eigenvalue `s` gives the singular pair `A v = s u`. Used
/// instead of a direct SVD, which loses accuracy on clustered singular values.
pub(crate) fn jordan_wielandt(a: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let (m, n) = a.shape();
    let mut j = DMatrix::<f64>::zeros(m + n, m + n);
    j.view_mut((0, m), (m, n)).copy_from(a);
    j.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    j.symmetric_eigen()
}

/// Clamps the singular values of `a` at `c`.
pub fn project_spectral_ball(a: &DMatrix<f64>, c: f64) -> Result<DMatrix<f64>> {
    if a.is_empty() {
        return Ok(a.clone());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let m = a.nrows();
    let eig = jordan_wielandt(a);
    // Subtract only the excess above `c`; rebuilding the whole matrix would
    // add rounding error to directions that are already inside the ball.
    let mut out = a.clone();
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        if s > c {
            let w = eig.eigenvectors.column(k);
            out -= (2.0 * (s - c)) * w.rows(0, m) * w.rows(m, a.ncols()).transpose();
        }
    }
    Ok(out)
}
