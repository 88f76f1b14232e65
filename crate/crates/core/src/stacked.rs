//! Stage-stacked form of the MPC problem.
//!
//! Primal blocks are `y_0 = (u_0, z_0)`, `y_k = (x_k, u_k, z_k)` for
//! `1 ≤ k ≤ N−1` and `y_N = x_N`. Row block `k` of the coupling constraint
//! `𝒜y = b(x_0)` reads `G_{k+1} y_{k+1} − H_k y_k = h_k`:
//!
//! * block 0 has `n_x` rows, `x_1 = A x_0 + B u_0 + C z_0`;
//! * blocks `k ≥ 1` have `n_x + n_z` rows, the dynamics plus `0 = D x_k + E z_k`.
//!
//! The algebraic equation of stage 0 involves only the measured state and is
//! kept inside `𝕐_0(x_0)`, so stage sets never couple subsystems through `D`.
//! The objective is `F(y) = Σ_k y_kᵀ Σ_k y_k`; `J(x_0) = x_0ᵀQx_0 + F(y*)`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Result};
use crate::linalg::{block_diag, Mat, Vector};
use crate::polytope::Polyhedron;
use crate::problem::MpcProblem;

/// Which of the three stage templates a stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum StageKind {
    Initial,
    Interior,
    Terminal,
}

/// `{ξ | Gξ ≤ w + W e, G_eq ξ = w_eq + W_eq e}` with `e = (A x_0, D x_0)`.
/// Only the initial stage has a nonzero `e` dependence.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSet {
    pub ineq: Mat,
    pub rhs: Vector,
    pub rhs_e: Mat,
    pub eq: Mat,
    pub eq_rhs: Vector,
    pub eq_e: Mat,
}

impl StageSet {
    pub fn dim(&self) -> usize {
        self.ineq.ncols()
    }

    pub fn param_dim(&self) -> usize {
        self.rhs_e.ncols()
    }

    /// The polyhedron at a fixed `e`.
    pub fn at(&self, e: &Vector) -> Result<Polyhedron> {
        let rhs = if self.param_dim() == 0 {
            self.rhs.clone()
        } else {
            &self.rhs + &self.rhs_e * e
        };
        let eq_rhs = if self.param_dim() == 0 {
            self.eq_rhs.clone()
        } else {
            &self.eq_rhs + &self.eq_e * e
        };
        Polyhedron::new(self.ineq.clone(), rhs)?.with_equalities(self.eq.clone(), eq_rhs)
    }
}

/// Where the algebraic equation `D x_0 + E z_0 = 0` of the first stage lives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgebraicPlacement {
    InitialStage,
    Coupling,
    #[default]
    Both,
}

#[derive(Debug, Clone)]
pub struct StackedProblem {
    pub problem: MpcProblem,
    placement: AlgebraicPlacement,
    nx: usize,
    nu: usize,
    nz: usize,
    n: usize,
    y_off: Vec<usize>,
    l_off: Vec<usize>,
    sigma: Vec<Mat>,
    sigma_inv: Vec<Mat>,
    /// `g[k]` is `G_k` for `1 ≤ k ≤ N`; `g[0]` is unused.
    g: Vec<Mat>,
    /// `hm[k]` is `H_k` for `0 ≤ k ≤ N−1`.
    hm: Vec<Mat>,
    sets: [StageSet; 3],
}

impl StackedProblem {
    pub fn new(p: &MpcProblem) -> Result<Self> {
        Self::with_placement(p, AlgebraicPlacement::default())
    }

    pub fn with_placement(p: &MpcProblem, placement: AlgebraicPlacement) -> Result<Self> {
        p.check_dimensions()?;
        let z0_coupled = placement != AlgebraicPlacement::InitialStage;
        let (nx, nu, nz, n) = (p.nx(), p.nu(), p.nz(), p.horizon);
        let ydim = |k: usize| {
            if k == 0 {
                nu + nz
            } else if k < n {
                nx + nu + nz
            } else {
                nx
            }
        };
        let rdim = |k: usize| if k == 0 && !z0_coupled { nx } else { nx + nz };
        let mut y_off = vec![0];
        for k in 0..=n {
            y_off.push(y_off[k] + ydim(k));
        }
        let mut l_off = vec![0];
        for k in 0..n {
            l_off.push(l_off[k] + rdim(k));
        }

        let sig0 = block_diag(&[&p.r, &p.s]);
        let sigk = block_diag(&[&p.q, &p.r, &p.s]);
        let mut sigma = Vec::with_capacity(n + 1);
        for k in 0..=n {
            sigma.push(if k == 0 {
                sig0.clone()
            } else if k < n {
                sigk.clone()
            } else {
                p.p.clone()
            });
        }
        let sigma_inv = sigma
            .iter()
            .map(crate::linalg::spd_inverse)
            .collect::<Result<Vec<_>>>()?;

        let mut hm = Vec::with_capacity(n);
        for k in 0..n {
            if k == 0 {
                let mut h0 = Mat::zeros(rdim(0), nu + nz);
                h0.view_mut((0, 0), (nx, nu)).copy_from(&p.b);
                h0.view_mut((0, nu), (nx, nz)).copy_from(&p.c);
                if z0_coupled {
                    h0.view_mut((nx, nu), (nz, nz)).copy_from(&p.e);
                }
                hm.push(h0);
            } else {
                let mut hk = Mat::zeros(nx + nz, nx + nu + nz);
                hk.view_mut((0, 0), (nx, nx)).copy_from(&p.a);
                hk.view_mut((0, nx), (nx, nu)).copy_from(&p.b);
                hk.view_mut((0, nx + nu), (nx, nz)).copy_from(&p.c);
                hk.view_mut((nx, 0), (nz, nx)).copy_from(&p.d);
                hk.view_mut((nx, nx + nu), (nz, nz)).copy_from(&p.e);
                hm.push(hk);
            }
        }
        let mut g = vec![Mat::zeros(0, 0)];
        for k in 1..=n {
            let mut gk = Mat::zeros(rdim(k - 1), ydim(k));
            gk.view_mut((0, 0), (nx, nx)).fill_with_identity();
            g.push(gk);
        }
        let sets = [
            initial_set(p, placement != AlgebraicPlacement::Coupling),
            interior_set(p),
            terminal_set(p),
        ];
        Ok(StackedProblem {
            problem: p.clone(),
            placement,
            nx,
            nu,
            nz,
            n,
            y_off,
            l_off,
            sigma,
            sigma_inv,
            g,
            hm,
            sets,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nu(&self) -> usize {
        self.nu
    }
    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn horizon(&self) -> usize {
        self.n
    }
    /// Stacked primal dimension.
    pub fn primal_dim(&self) -> usize {
        self.y_off[self.n + 1]
    }
    /// Number of coupling rows.
    pub fn dual_dim(&self) -> usize {
        self.l_off[self.n]
    }
    /// Dimension of `e = (A x_0, D x_0)`.
    pub fn e_dim(&self) -> usize {
        self.nx + self.nz
    }
    pub fn y_offset(&self, k: usize) -> usize {
        self.y_off[k]
    }
    pub fn y_dim(&self, k: usize) -> usize {
        self.y_off[k + 1] - self.y_off[k]
    }
    pub fn l_offset(&self, k: usize) -> usize {
        self.l_off[k]
    }
    pub fn l_dim(&self, k: usize) -> usize {
        self.l_off[k + 1] - self.l_off[k]
    }
    pub fn sigma(&self, k: usize) -> &Mat {
        &self.sigma[k]
    }
    pub fn sigma_inv(&self, k: usize) -> &Mat {
        &self.sigma_inv[k]
    }
    pub fn g_block(&self, k: usize) -> &Mat {
        &self.g[k]
    }
    pub fn h_block(&self, k: usize) -> &Mat {
        &self.hm[k]
    }

    pub fn kind(&self, k: usize) -> StageKind {
        if k == 0 {
            StageKind::Initial
        } else if k < self.n {
            StageKind::Interior
        } else {
            StageKind::Terminal
        }
    }

    pub fn stage_set(&self, kind: StageKind) -> &StageSet {
        match kind {
            StageKind::Initial => &self.sets[0],
            StageKind::Interior => &self.sets[1],
            StageKind::Terminal => &self.sets[2],
        }
    }

    /// `𝕐_k` as a polyhedron (stage 0 evaluated at `x_0`).
    pub fn stage_polyhedron(&self, k: usize, x0: &Vector) -> Result<Polyhedron> {
        let set = self.stage_set(self.kind(k));
        if k == 0 {
            set.at(&self.e_of(x0))
        } else {
            set.at(&Vector::zeros(0))
        }
    }

    pub fn block<'a>(&self, v: &'a Vector, k: usize) -> nalgebra::DVectorView<'a, f64> {
        v.rows(self.y_off[k], self.y_dim(k))
    }

    pub fn dual_block<'a>(&self, v: &'a Vector, k: usize) -> nalgebra::DVectorView<'a, f64> {
        v.rows(self.l_off[k], self.l_dim(k))
    }

    /// `e(x_0) = (A x_0, D x_0)`.
    pub fn e_of(&self, x0: &Vector) -> Vector {
        let p = &self.problem;
        crate::linalg::vcat(&(&p.a * x0), &(&p.d * x0))
    }

    /// Right-hand side `b(x_0)` of the coupling constraint.
    pub fn b_of(&self, x0: &Vector) -> Vector {
        let mut b = Vector::zeros(self.dual_dim());
        b.rows_mut(0, self.nx).copy_from(&(&self.problem.a * x0));
        if self.l_dim(0) > self.nx {
            b.rows_mut(self.nx, self.nz).copy_from(&(&self.problem.d * x0));
        }
        b
    }

    /// `F(y) = Σ y_kᵀΣ_k y_k`.
    pub fn f(&self, y: &Vector) -> f64 {
        (0..=self.n)
            .map(|k| {
                let b = self.block(y, k);
                b.dot(&(&self.sigma[k] * b))
            })
            .sum()
    }

    /// `F_k(y_k)`, with the `x_0ᵀQx_0` constant included for `k = 0`.
    pub fn stage_cost(&self, k: usize, yk: &Vector, x0: &Vector) -> f64 {
        let v = yk.dot(&(&self.sigma[k] * yk));
        if k == 0 {
            v + x0.dot(&(&self.problem.q * x0))
        } else {
            v
        }
    }

    /// `𝒜y`, block by block.
    pub fn a_mul(&self, y: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dual_dim());
        for k in 0..self.n {
            let r = &self.g[k + 1] * self.block(y, k + 1) - &self.hm[k] * self.block(y, k);
            out.rows_mut(self.l_off[k], self.l_dim(k)).copy_from(&r);
        }
        out
    }

    /// `𝒜ᵀλ`, block by block.
    pub fn at_mul(&self, lambda: &Vector) -> Vector {
        let mut out = Vector::zeros(self.primal_dim());
        self.at_mul_into(lambda, &mut out);
        out
    }

    pub fn at_mul_into(&self, lambda: &Vector, out: &mut Vector) {
        out.fill(0.0);
        for k in 0..self.n {
            let l = self.dual_block(lambda, k);
            let mut a = out.rows_mut(self.y_off[k], self.y_dim(k));
            a.gemv_tr(-1.0, &self.hm[k], &l, 1.0);
            let mut b = out.rows_mut(self.y_off[k + 1], self.y_dim(k + 1));
            b.gemv_tr(1.0, &self.g[k + 1], &l, 1.0);
        }
    }

    /// `Σ⁻¹v` for a stacked primal vector.
    pub fn sigma_inv_mul(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(v.len());
        for k in 0..=self.n {
            let r = &self.sigma_inv[k] * self.block(v, k);
            out.rows_mut(self.y_off[k], self.y_dim(k)).copy_from(&r);
        }
        out
    }

    /// `F*(λ) = ¼ (𝒜ᵀλ)ᵀ Σ⁻¹ (𝒜ᵀλ)`.
    pub fn f_conj(&self, lambda: &Vector) -> f64 {
        let w = self.at_mul(lambda);
        0.25 * w.dot(&self.sigma_inv_mul(&w))
    }

    pub fn placement(&self) -> AlgebraicPlacement {
        self.placement
    }

    /// Dual coordinates that never reach the iterates: the algebraic rows
    /// of `λ_0` when the first stage enforces the same equation. Dual
    /// solutions are unique only up to these directions.
    pub fn neutral_duals(&self) -> Vec<usize> {
        if self.placement == AlgebraicPlacement::Both {
            (self.nx..self.nx + self.nz).collect()
        } else {
            Vec::new()
        }
    }

    /// `F*` on the quotient by the neutral directions,
    /// `min_t F*(λ + Σ t_i e_i)`.
    pub fn f_conj_reduced(&self, lambda: &Vector) -> f64 {
        let idx = self.neutral_duals();
        let full = self.f_conj(lambda);
        if idx.is_empty() {
            return full;
        }
        let cols: Vec<Vector> = idx
            .iter()
            .map(|&i| {
                let mut e = Vector::zeros(self.dual_dim());
                e[i] = 1.0;
                self.at_mul(&e)
            })
            .collect();
        let w = self.at_mul(lambda);
        let sw = self.sigma_inv_mul(&w);
        let scols: Vec<Vector> = cols.iter().map(|c| self.sigma_inv_mul(c)).collect();
        let gram = Mat::from_fn(idx.len(), idx.len(), |i, j| 0.25 * cols[i].dot(&scols[j]));
        let g = Vector::from_fn(idx.len(), |i, _| 0.25 * cols[i].dot(&sw));
        match gram.cholesky() {
            Some(ch) => (full - g.dot(&ch.solve(&g))).max(0.0),
            None => full,
        }
    }

    /// `⟨λ, y⟩ = λᵀ𝒜y`.
    pub fn pairing(&self, lambda: &Vector, y: &Vector) -> f64 {
        lambda.dot(&self.a_mul(y))
    }

    /// Dense `𝒜`.
    pub fn a_dense(&self) -> Mat {
        let mut a = Mat::zeros(self.dual_dim(), self.primal_dim());
        for k in 0..self.n {
            let (r, rd) = (self.l_off[k], self.l_dim(k));
            a.view_mut((r, self.y_off[k]), (rd, self.y_dim(k)))
                .copy_from(&(-&self.hm[k]));
            a.view_mut((r, self.y_off[k + 1]), (rd, self.y_dim(k + 1)))
                .copy_from(&self.g[k + 1]);
        }
        a
    }

    /// Dense `Σ = blkdiag(Σ_0, …, Σ_N)`, so that `F(y) = yᵀΣy`.
    pub fn sigma_dense(&self) -> Mat {
        block_diag(&self.sigma.iter().collect::<Vec<_>>())
    }

    /// Stage-QP parameters `θ = 𝒜ᵀλ − 2Σy`, stacked.
    pub fn stage_parameters(&self, y: &Vector, lambda: &Vector) -> Vector {
        let mut theta = self.at_mul(lambda);
        for k in 0..=self.n {
            let sy = &self.sigma[k] * self.block(y, k);
            let mut t = theta.rows_mut(self.y_off[k], self.y_dim(k));
            t -= sy * 2.0;
        }
        theta
    }

    pub fn check_state(&self, x0: &Vector) -> Result<()> {
        dim_check(x0.len() == self.nx, || {
            format!("state has dimension {}, expected {}", x0.len(), self.nx)
        })
    }

    /// Per-stage slack `w + We − Gξ` of the inequality rows.
    pub fn slacks(&self, k: usize, xi_k: &Vector, e: &Vector) -> Vector {
        let set = self.stage_set(self.kind(k));
        let mut s = &set.rhs - &set.ineq * xi_k;
        if k == 0 && set.param_dim() > 0 {
            s += &set.rhs_e * e;
        }
        s
    }

    /// Number of inequality rows of all stages with slack ≤ `tol` at `v`.
    pub fn active_count(&self, v: &Vector, x0: &Vector, tol: f64) -> usize {
        let e = self.e_of(x0);
        (0..=self.n)
            .map(|k| {
                let s = self.slacks(k, &self.block(v, k).into_owned(), &e);
                s.iter().filter(|&&si| si <= tol).count()
            })
            .sum()
    }
}

fn set_rows(s: &Polyhedron) -> (Mat, Vector, Mat, Vector) {
    (s.h().clone(), s.b().clone(), s.h_eq().clone(), s.b_eq().clone())
}

struct RowBuilder {
    n: usize,
    ne: usize,
    rows: Vec<(Vec<f64>, f64, Vec<f64>)>,
    eq: Vec<(Vec<f64>, f64, Vec<f64>)>,
}

impl RowBuilder {
    fn new(n: usize, ne: usize) -> Self {
        RowBuilder {
            n,
            ne,
            rows: Vec::new(),
            eq: Vec::new(),
        }
    }

    /// Adds `H (M ξ) ≤ b + Hp e` (or `=` when `equality`).
    fn add(&mut self, h: &Mat, m: &Mat, b: &Vector, he: Option<&Mat>, equality: bool) {
        let hm = h * m;
        for i in 0..h.nrows() {
            let r: Vec<f64> = (0..self.n).map(|j| hm[(i, j)]).collect();
            let e: Vec<f64> = match he {
                Some(pe) => (0..self.ne).map(|j| pe[(i, j)]).collect(),
                None => vec![0.0; self.ne],
            };
            if equality {
                self.eq.push((r, b[i], e));
            } else {
                self.rows.push((r, b[i], e));
            }
        }
    }

    fn finish(self) -> StageSet {
        let pack = |v: &Vec<(Vec<f64>, f64, Vec<f64>)>, n: usize, ne: usize| {
            let mut a = Mat::zeros(v.len(), n);
            let mut b = Vector::zeros(v.len());
            let mut e = Mat::zeros(v.len(), ne);
            for (i, (r, bi, ei)) in v.iter().enumerate() {
                for j in 0..n {
                    a[(i, j)] = r[j];
                }
                b[i] = *bi;
                for j in 0..ne {
                    e[(i, j)] = ei[j];
                }
            }
            (a, b, e)
        };
        let (ineq, rhs, rhs_e) = pack(&self.rows, self.n, self.ne);
        let (eq, eq_rhs, eq_e) = pack(&self.eq, self.n, self.ne);
        StageSet {
            ineq,
            rhs,
            rhs_e,
            eq,
            eq_rhs,
            eq_e,
        }
    }
}

/// Selector matrix picking `len` coordinates starting at `off` out of `n`.
fn selector(len: usize, off: usize, n: usize) -> Mat {
    let mut m = Mat::zeros(len, n);
    for i in 0..len {
        m[(i, off + i)] = 1.0;
    }
    m
}

fn initial_set(p: &MpcProblem, z_equality: bool) -> StageSet {
    let (nx, nu, nz) = (p.nx(), p.nu(), p.nz());
    let n = nu + nz;
    let ne = nx + nz;
    let mut rb = RowBuilder::new(n, ne);
    let su = selector(nu, 0, n);
    let sz = selector(nz, nu, n);
    let (hu, bu, hue, bue) = set_rows(&p.u_set);
    rb.add(&hu, &su, &bu, None, false);
    rb.add(&hue, &su, &bue, None, true);
    let (hz, bz, hze, bze) = set_rows(&p.z_set);
    rb.add(&hz, &sz, &bz, None, false);
    rb.add(&hze, &sz, &bze, None, true);
    // A x_0 + B u + C z ∈ X, with a = A x_0 the first block of e.
    let mut bc = Mat::zeros(nx, n);
    bc.view_mut((0, 0), (nx, nu)).copy_from(&p.b);
    bc.view_mut((0, nu), (nx, nz)).copy_from(&p.c);
    let (hx, bx, hxe, bxe) = set_rows(&p.x_set);
    let ea = selector(nx, 0, ne);
    rb.add(&hx, &bc, &bx, Some(&(-(&hx * &ea))), false);
    rb.add(&hxe, &bc, &bxe, Some(&(-(&hxe * &ea))), true);
    if z_equality {
        // E z = −D x_0 = −d.
        let ed = selector(nz, nx, ne);
        rb.add(&p.e, &sz, &Vector::zeros(nz), Some(&(-ed)), true);
    }
    rb.finish()
}

fn interior_set(p: &MpcProblem) -> StageSet {
    let (nx, nu, nz) = (p.nx(), p.nu(), p.nz());
    let n = nx + nu + nz;
    let mut rb = RowBuilder::new(n, 0);
    let (hx, bx, hxe, bxe) = set_rows(&p.x_set);
    let sx = selector(nx, 0, n);
    rb.add(&hx, &sx, &bx, None, false);
    rb.add(&hxe, &sx, &bxe, None, true);
    let (hu, bu, hue, bue) = set_rows(&p.u_set);
    let su = selector(nu, nx, n);
    rb.add(&hu, &su, &bu, None, false);
    rb.add(&hue, &su, &bue, None, true);
    let (hz, bz, hze, bze) = set_rows(&p.z_set);
    let sz = selector(nz, nx + nu, n);
    rb.add(&hz, &sz, &bz, None, false);
    rb.add(&hze, &sz, &bze, None, true);
    let mut abc = Mat::zeros(nx, n);
    abc.view_mut((0, 0), (nx, nx)).copy_from(&p.a);
    abc.view_mut((0, nx), (nx, nu)).copy_from(&p.b);
    abc.view_mut((0, nx + nu), (nx, nz)).copy_from(&p.c);
    rb.add(&hx, &abc, &bx, None, false);
    rb.add(&hxe, &abc, &bxe, None, true);
    rb.finish()
}

fn terminal_set(p: &MpcProblem) -> StageSet {
    let nx = p.nx();
    let mut rb = RowBuilder::new(nx, 0);
    let (h, b, he, be) = set_rows(&p.xn_set);
    let i = Mat::identity(nx, nx);
    rb.add(&h, &i, &b, None, false);
    rb.add(&he, &i, &be, None, true);
    rb.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};

    fn stacked(i: usize, n: usize) -> StackedProblem {
        let p = build_spring_damper_benchmark(&InterconnectedSpec::chain(i), &Weights::default(), n)
            .unwrap();
        StackedProblem::new(&p).unwrap()
    }

    #[test]
    fn dimension_count() {
        let sp = stacked(1, 10);
        assert_eq!(sp.primal_dim(), 3 + 9 * 5 + 2);
        let sp = stacked(1, 1);
        assert_eq!((sp.primal_dim(), sp.dual_dim()), (5, 4));
        let p = build_spring_damper_benchmark(&InterconnectedSpec::chain(1), &Weights::default(), 1)
            .unwrap();
        let sp = StackedProblem::with_placement(&p, AlgebraicPlacement::InitialStage).unwrap();
        assert_eq!((sp.primal_dim(), sp.dual_dim()), (5, 2));
    }

    #[test]
    fn origin_has_zero_offset() {
        let sp = stacked(2, 4);
        assert_eq!(sp.b_of(&Vector::zeros(4)).amax(), 0.0);
        assert_eq!(sp.e_of(&Vector::zeros(4)).amax(), 0.0);
    }

    #[test]
    fn blockwise_products_match_dense() {
        let sp = stacked(2, 4);
        let a = sp.a_dense();
        let y = Vector::from_fn(sp.primal_dim(), |i, _| ((i * 7 % 11) as f64) - 5.0);
        let l = Vector::from_fn(sp.dual_dim(), |i, _| ((i * 5 % 13) as f64) - 6.0);
        assert!((sp.a_mul(&y) - &a * &y).amax() < 1e-12);
        assert!((sp.at_mul(&l) - a.transpose() * &l).amax() < 1e-12);
        let s = sp.sigma_dense();
        assert!((sp.f(&y) - y.dot(&(&s * &y))).abs() < 1e-9);
    }

    #[test]
    fn coupling_rows_are_independent() {
        let sp = stacked(3, 3);
        assert_eq!(crate::linalg::rank(&sp.a_dense(), 1e-10), sp.dual_dim());
    }

    #[test]
    fn single_step_coupling() {
        let sp = stacked(1, 1);
        let g = sp.g_block(1);
        assert_eq!(g.shape(), (4, 2));
        assert_eq!(g.rows(0, 2), Mat::identity(2, 2));
        assert_eq!(g.rows(2, 2).amax(), 0.0);
        assert_eq!(sp.h_block(0).shape(), (4, 3));
    }
}
