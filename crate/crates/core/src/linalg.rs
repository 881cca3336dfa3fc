//! Small dense complex linear algebra: Hermitian eigendecomposition,
//! Cholesky factorization, and positive-semidefinite square roots.
//!
//! The matrices handled here are tiny (receiver-channel or grid-constant
//! sized, well under 100×100), so a cyclic Jacobi eigensolver and an
//! unblocked Cholesky are both accurate and fast, and keep the crate free of
//! external BLAS/LAPACK linkage. Results are deterministic: fixed sweep
//! order, fixed tie-breaking, fixed eigenvector phase convention.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::{C64, CMat};

/// Conjugate transpose.
pub fn adjoint(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// Frobenius norm.
pub fn frob_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Complex identity matrix.
pub fn identity(n: usize) -> CMat {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Largest absolute deviation from the Hermitian property, `max |A - A^H|`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Eigenvalues in descending (algebraic) order.
    pub values: Array1<f64>,
    /// Unitary matrix whose k-th column is the eigenvector of `values[k]`.
    pub vectors: CMat,
}

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix.
///
/// The input is symmetrized as `(A + A^H)/2` before iteration, so small
/// round-off defects in the input are tolerated. Eigenvalues are returned in
/// descending order; each eigenvector is phase-normalized so that its
/// largest-modulus entry (lowest index on ties) is real and positive.
pub fn hermitian_eigen(a: &CMat) -> Result<HermitianEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "hermitian_eigen: {}x{} is not square",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(HermitianEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }

    let mut m = Array2::from_shape_fn((n, n), |(i, j)| (a[[i, j]] + a[[j, i]].conj()) * 0.5);
    let mut v = identity(n);
    let scale = frob_norm(&m).max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;

    for _sweep in 0..128 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * m[[p, q]].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let h = m[[p, q]];
                let habs = h.norm();
                if habs <= 1e-18 * scale {
                    m[[p, q]] = C64::new(0.0, 0.0);
                    m[[q, p]] = C64::new(0.0, 0.0);
                    continue;
                }
                let alpha = m[[p, p]].re;
                let beta = m[[q, q]].re;
                let phase = h / habs;
                // Zeroing condition: t^2 - 2*tau*t - 1 = 0 with t = s/c; take
                // the root of magnitude <= 1 for stability.
                let tau = (alpha - beta) / (2.0 * habs);
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Column rotation: col_p <- c*col_p - s*conj(phase)*col_q,
                //                  col_q <- s*phase*col_p + c*col_q.
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = mkp * c - mkq * phase.conj() * s;
                    m[[k, q]] = mkp * phase * s + mkq * c;
                }
                // Matching row rotation (conjugated coefficients).
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = mpk * c - mqk * phase * s;
                    m[[q, k]] = mpk * phase.conj() * s + mqk * c;
                }
                m[[p, q]] = C64::new(0.0, 0.0);
                m[[q, p]] = C64::new(0.0, 0.0);
                m[[p, p]] = C64::new(m[[p, p]].re, 0.0);
                m[[q, q]] = C64::new(m[[q, q]].re, 0.0);
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c - vkq * phase.conj() * s;
                    v[[k, q]] = vkp * phase * s + vkq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[[j, j]]
            .re
            .partial_cmp(&m[[i, i]].re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (col, &idx) in order.iter().enumerate() {
        values[col] = m[[idx, idx]].re;
        // Phase convention: largest-modulus entry real positive.
        let mut kmax = 0;
        let mut best = -1.0f64;
        for k in 0..n {
            let mag = v[[k, idx]].norm();
            if mag > best * (1.0 + 1e-12) {
                best = mag;
                kmax = k;
            }
        }
        let pivot = v[[kmax, idx]];
        let rot = if pivot.norm() > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for k in 0..n {
            vectors[[k, col]] = v[[k, idx]] * rot;
        }
    }

    Ok(HermitianEigen { values, vectors })
}

impl HermitianEigen {
    /// Reassemble `V diag(f(λ)) V^H`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.values.len();
        let mut out = Array2::zeros((n, n));
        for k in 0..n {
            let w = f(self.values[k]);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] += self.vectors[[i, k]] * self.vectors[[j, k]].conj() * w;
                }
            }
        }
        out
    }
}

/// Hermitian positive-semidefinite square root and inverse square root.
///
/// Fails when the matrix is singular relative to its largest eigenvalue
/// (ratio below `1e-12`), since the inverse root is then meaningless.
pub fn psd_sqrt_pair(a: &CMat) -> Result<(CMat, CMat)> {
    let eig = hermitian_eigen(a)?;
    let lmax = eig.values.iter().cloned().fold(0.0f64, f64::max);
    if lmax <= 0.0 {
        return Err(Error::Singular(
            "psd_sqrt_pair: matrix has no positive eigenvalue".into(),
        ));
    }
    let lmin = eig.values[eig.values.len() - 1];
    if lmin <= 1e-12 * lmax {
        return Err(Error::Singular(format!(
            "psd_sqrt_pair: eigenvalue ratio {:.3e} below 1e-12; matrix effectively singular",
            lmin / lmax
        )));
    }
    let sqrt = eig.apply(f64::sqrt);
    let inv_sqrt = eig.apply(|l| 1.0 / l.sqrt());
    Ok((sqrt, inv_sqrt))
}

/// Unblocked Cholesky factorization `A = L L^H` of a Hermitian positive
/// definite matrix. Returns the lower factor.
pub fn cholesky(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::ShapeMismatch("cholesky: not square".into()));
    }
    let mut l: CMat = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]].conj();
            }
            if i == j {
                let d = sum.re;
                if d <= 0.0 || !d.is_finite() {
                    return Err(Error::Singular(format!(
                        "cholesky: non-positive pivot {d:.3e} at index {i}"
                    )));
                }
                l[[i, j]] = C64::new(d.sqrt(), 0.0);
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `A X = B` given the Cholesky factor `L` of `A`.
pub fn cholesky_solve(l: &CMat, b: &CMat) -> CMat {
    let n = l.nrows();
    let m = b.ncols();
    let mut x = b.clone();
    // Forward: L Y = B.
    for col in 0..m {
        for i in 0..n {
            let mut sum = x[[i, col]];
            for k in 0..i {
                sum -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = sum / l[[i, i]];
        }
        // Backward: L^H X = Y.
        for i in (0..n).rev() {
            let mut sum = x[[i, col]];
            for k in (i + 1)..n {
                sum -= l[[k, i]].conj() * x[[k, col]];
            }
            x[[i, col]] = sum / l[[i, i]];
        }
    }
    x
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn hermitian_inverse(a: &CMat) -> Result<CMat> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, &identity(a.nrows())))
}
