//! Equality-constrained tracking QP
//!
//! minimize Σ_k F_k(y_k − r_k)  subject to  𝒜y = b(x_0)
//!
//! solved through the dual Schur complement `M = 𝒜Σ⁻¹𝒜ᵀ`, which is block
//! tridiagonal in the stage index. `M` is factored offline by a block
//! Cholesky recursion; each online solve costs `O(N n²)`:
//!
//! `ω = M⁻¹(𝒜r − b)`, `y = r − Σ⁻¹𝒜ᵀω`, `δ = 2ω`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{serde_mat_vec, symmetrize, Mat, Vector};
use crate::stacked::StackedProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledFactorization {
    /// Row count of each dual block.
    pub block_dims: Vec<usize>,
    pub primal_dim: usize,
    /// Lower Cholesky factors `L_kk`.
    #[serde(with = "serde_mat_vec")]
    pub diag: Vec<Mat>,
    /// Sub-diagonal blocks `C_k = M_{k,k−1} L_{k−1,k−1}⁻ᵀ`; `sub[0]` is empty.
    #[serde(with = "serde_mat_vec")]
    pub sub: Vec<Mat>,
}

/// Scratch space for one solve; reuse across iterations.
#[derive(Debug, Clone)]
pub struct TrackingWorkspace {
    v: Vector,
    w: Vector,
}

impl TrackingWorkspace {
    pub fn new(sp: &StackedProblem) -> Self {
        TrackingWorkspace {
            v: Vector::zeros(sp.dual_dim()),
            w: Vector::zeros(sp.primal_dim()),
        }
    }
}

/// Output of one tracking solve.
#[derive(Debug, Clone)]
pub struct TrackingSolution {
    pub y: Vector,
    pub delta: Vector,
}

impl CoupledFactorization {
    pub fn factorize(sp: &StackedProblem) -> Result<Self> {
        let n = sp.horizon();
        let mut diag: Vec<Mat> = Vec::with_capacity(n);
        let mut sub: Vec<Mat> = Vec::with_capacity(n);
        for k in 0..n {
            let hk = sp.h_block(k);
            let gk1 = sp.g_block(k + 1);
            let mut mkk = hk * sp.sigma_inv(k) * hk.transpose()
                + gk1 * sp.sigma_inv(k + 1) * gk1.transpose();
            if k > 0 {
                // M_{k,k−1} = −H_k Σ_k⁻¹ G_kᵀ.
                let mk = -(hk * sp.sigma_inv(k) * sp.g_block(k).transpose());
                let lprev = &diag[k - 1];
                let ck = lprev
                    .solve_lower_triangular(&mk.transpose())
                    .ok_or_else(|| Error::Numerical("singular Cholesky block".into()))?
                    .transpose();
                mkk -= &ck * ck.transpose();
                sub.push(ck);
            } else {
                sub.push(Mat::zeros(0, 0));
            }
            let chol = symmetrize(&mkk).cholesky().ok_or_else(|| {
                Error::Numerical(format!("coupled KKT system is singular at stage {k}"))
            })?;
            diag.push(chol.l());
        }
        Ok(CoupledFactorization {
            block_dims: (0..n).map(|k| sp.l_dim(k)).collect(),
            primal_dim: sp.primal_dim(),
            diag,
            sub,
        })
    }

    pub fn dual_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    /// Size of the full KKT system (primal plus coupling duals).
    pub fn kkt_dim(&self) -> usize {
        self.primal_dim + self.dual_dim()
    }

    /// Solves `Mω = v` in place.
    pub fn solve_schur(&self, v: &mut Vector) {
        let n = self.diag.len();
        let mut offs = Vec::with_capacity(n + 1);
        offs.push(0);
        for d in &self.block_dims {
            offs.push(offs.last().unwrap() + d);
        }
        for k in 0..n {
            if k > 0 {
                let prev = v.rows(offs[k - 1], self.block_dims[k - 1]).into_owned();
                let mut cur = v.rows_mut(offs[k], self.block_dims[k]);
                cur.gemv(-1.0, &self.sub[k], &prev, 1.0);
            }
            let mut cur = v.rows_mut(offs[k], self.block_dims[k]);
            self.diag[k].solve_lower_triangular_mut(&mut cur);
        }
        for k in (0..n).rev() {
            if k + 1 < n {
                let next = v.rows(offs[k + 1], self.block_dims[k + 1]).into_owned();
                let mut cur = v.rows_mut(offs[k], self.block_dims[k]);
                cur.gemv_tr(-1.0, &self.sub[k + 1], &next, 1.0);
            }
            let mut cur = v.rows_mut(offs[k], self.block_dims[k]);
            self.diag[k].tr_solve_lower_triangular_mut(&mut cur);
        }
    }

    /// Minimizer of `Σ F_k(y_k − r_k)` on `𝒜y = b(x_0)` and its duals.
    pub fn solve_tracking(
        &self,
        sp: &StackedProblem,
        y_ref: &Vector,
        x0: &Vector,
        ws: &mut TrackingWorkspace,
    ) -> Result<TrackingSolution> {
        dim_check(y_ref.len() == self.primal_dim, || {
            format!("reference has length {}, expected {}", y_ref.len(), self.primal_dim)
        })?;
        sp.check_state(x0)?;
        ws.v.copy_from(&sp.a_mul(y_ref));
        ws.v -= sp.b_of(x0);
        self.solve_schur(&mut ws.v);
        sp.at_mul_into(&ws.v, &mut ws.w);
        let y = y_ref - sp.sigma_inv_mul(&ws.w);
        Ok(TrackingSolution {
            y,
            delta: &ws.v * 2.0,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("factorization serializes")
    }
}
