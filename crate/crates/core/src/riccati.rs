//! Discrete algebraic Riccati equation by fixed-point iteration.

use crate::error::{dim_check, Error, Result};
use crate::linalg::{symmetrize, Mat};

pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 200_000;

/// Solution `P` and the optimal gain `K` (`u = Kx`).
#[derive(Debug, Clone)]
pub struct DareSolution {
    pub p: Mat,
    pub k: Mat,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `P = Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA`.
pub fn dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<DareSolution> {
    let n = a.nrows();
    dim_check(a.is_square() && b.nrows() == n && q.shape() == (n, n), || {
        "DARE: A, B, Q shapes disagree".into()
    })?;
    dim_check(r.shape() == (b.ncols(), b.ncols()), || "DARE: R shape".into())?;
    let mut p = symmetrize(q);
    for it in 0..DARE_MAX_ITER {
        let next = riccati_map(a, b, q, r, &p)?;
        let diff = (&next - &p).amax();
        p = next;
        if diff <= DARE_TOL * p.amax().max(1.0) {
            // Polish to roundoff while the update keeps shrinking.
            let mut last = diff;
            for _ in 0..1000 {
                let next = riccati_map(a, b, q, r, &p)?;
                let d = (&next - &p).amax();
                if d >= last {
                    break;
                }
                p = next;
                last = d;
            }
            let residual = (riccati_map(a, b, q, r, &p)? - &p).amax();
            let k = gain(a, b, r, &p)?;
            return Ok(DareSolution {
                p,
                k,
                iterations: it + 1,
                residual,
            });
        }
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::NotConverged(format!(
        "DARE fixed-point iteration exceeded {DARE_MAX_ITER} steps"
    )))
}

fn riccati_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<Mat> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let chol = symmetrize(&s)
        .cholesky()
        .ok_or_else(|| Error::Numerical("R + BᵀPB not positive definite".into()))?;
    let x = chol.solve(&(b.transpose() * &pa));
    Ok(symmetrize(&(q + a.transpose() * &pa - (a.transpose() * &pb) * x)))
}

/// `K = −(R + BᵀPB)⁻¹ BᵀPA`.
pub fn gain(a: &Mat, b: &Mat, r: &Mat, p: &Mat) -> Result<Mat> {
    let s = r + b.transpose() * p * b;
    let chol = symmetrize(&s)
        .cholesky()
        .ok_or_else(|| Error::Numerical("R + BᵀPB not positive definite".into()))?;
    Ok(-chol.solve(&(b.transpose() * p * a)))
}
