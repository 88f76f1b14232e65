//! Dense strongly convex QPs:
//!
//! minimize ½xᵀHx + gᵀx  subject to  A_eq x = b_eq,  A_in x ≤ b_in.
//!
//! The main solver is the dual active-set method of Goldfarb and Idnani,
//! followed by a KKT polish on the final working set and an explicit
//! residual check. A brute-force active-set enumeration is kept for
//! cross-checking on small instances.
//!
//! Dual convention: `Hx + g + A_eqᵀν + A_inᵀμ = 0`, `μ ≥ 0`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{rank, symmetrize, vcat, vstack, Mat, Vector};
use crate::polytope::Combinations;
use crate::stacked::StackedProblem;

pub const KKT_TOL: f64 = 1e-8;
pub const DUAL_TOL: f64 = 1e-9;
/// Largest number of candidate active sets the enumeration solver visits.
pub const ENUM_BUDGET: u64 = 1 << 20;

#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: Mat,
    pub g: Vector,
    pub a_eq: Mat,
    pub b_eq: Vector,
    pub a_in: Mat,
    pub b_in: Vector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpSolution {
    #[serde(with = "crate::linalg::serde_vec")]
    pub x: Vector,
    #[serde(with = "crate::linalg::serde_vec")]
    pub eq_duals: Vector,
    #[serde(with = "crate::linalg::serde_vec")]
    pub ineq_duals: Vector,
    pub active_set: Vec<usize>,
    pub objective: f64,
}

/// Residuals of the KKT conditions at a candidate solution.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn ok(&self) -> bool {
        self.stationarity <= KKT_TOL
            && self.primal <= KKT_TOL
            && self.dual <= DUAL_TOL
            && self.complementarity <= KKT_TOL
    }
}

impl DenseQp {
    pub fn new(h: Mat, g: Vector) -> Self {
        let n = g.len();
        DenseQp {
            h,
            g,
            a_eq: Mat::zeros(0, n),
            b_eq: Vector::zeros(0),
            a_in: Mat::zeros(0, n),
            b_in: Vector::zeros(0),
        }
    }

    pub fn with_eq(mut self, a: Mat, b: Vector) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ineq(mut self, a: Mat, b: Vector) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n();
        dim_check(self.h.shape() == (n, n), || "QP Hessian shape".into())?;
        dim_check(
            self.a_eq.ncols() == n && self.a_eq.nrows() == self.b_eq.len(),
            || "QP equality block shape".into(),
        )?;
        dim_check(
            self.a_in.ncols() == n && self.a_in.nrows() == self.b_in.len(),
            || "QP inequality block shape".into(),
        )?;
        Ok(())
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Scaled KKT residuals; the scale is `1 + max |data|`.
    pub fn kkt_residuals(&self, x: &Vector, nu: &Vector, mu: &Vector) -> KktResiduals {
        let scale = 1.0 + self.g.amax().max(self.b_in.amax()).max(self.b_eq.amax());
        let mut st = &self.h * x + &self.g;
        if self.a_eq.nrows() > 0 {
            st += self.a_eq.transpose() * nu;
        }
        if self.a_in.nrows() > 0 {
            st += self.a_in.transpose() * mu;
        }
        let slack = &self.b_in - &self.a_in * x;
        let eq = &self.a_eq * x - &self.b_eq;
        let primal = slack.iter().fold(eq.amax(), |a, &s| a.max(-s));
        let dual = mu.iter().fold(0.0f64, |a, &m| a.max(-m));
        let comp = mu
            .iter()
            .zip(slack.iter())
            .fold(0.0f64, |a, (m, s)| a.max((m * s).abs()));
        KktResiduals {
            stationarity: st.amax() / scale,
            primal: primal / scale,
            dual,
            complementarity: comp / scale,
        }
    }
}

/// Solves the QP and certifies the KKT conditions.
pub fn solve_qp_dense(qp: &DenseQp) -> Result<QpSolution> {
    qp.check()?;
    let gi = GoldfarbIdnani::new(qp)?;
    let working = gi.run()?;
    let sol = polish(qp, &working)?;
    let r = qp.kkt_residuals(&sol.x, &sol.eq_duals, &sol.ineq_duals);
    if !r.ok() {
        return Err(Error::Numerical(format!(
            "KKT check failed: stationarity {:.2e}, primal {:.2e}, dual {:.2e}, complementarity {:.2e}",
            r.stationarity, r.primal, r.dual, r.complementarity
        )));
    }
    Ok(sol)
}

/// Solves the equality-constrained KKT system for the given active rows.
fn kkt_solve(qp: &DenseQp, active: &[usize]) -> Option<(Vector, Vector, Vector)> {
    let n = qp.n();
    let me = qp.a_eq.nrows();
    let ma = active.len();
    let dim = n + me + ma;
    let mut k = Mat::zeros(dim, dim);
    let mut rhs = Vector::zeros(dim);
    k.view_mut((0, 0), (n, n)).copy_from(&symmetrize(&qp.h));
    rhs.rows_mut(0, n).copy_from(&(-&qp.g));
    for i in 0..me {
        for j in 0..n {
            k[(n + i, j)] = qp.a_eq[(i, j)];
            k[(j, n + i)] = qp.a_eq[(i, j)];
        }
        rhs[n + i] = qp.b_eq[i];
    }
    for (r, &a) in active.iter().enumerate() {
        for j in 0..n {
            k[(n + me + r, j)] = qp.a_in[(a, j)];
            k[(j, n + me + r)] = qp.a_in[(a, j)];
        }
        rhs[n + me + r] = qp.b_in[a];
    }
    let sol = k.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let nu = sol.rows(n, me).into_owned();
    let mut mu = Vector::zeros(qp.a_in.nrows());
    for (r, &a) in active.iter().enumerate() {
        mu[a] = sol[n + me + r];
    }
    Some((x, nu, mu))
}

fn polish(qp: &DenseQp, w: &Working) -> Result<QpSolution> {
    let mut active = w.active.clone();
    active.sort_unstable();
    let (x, nu, mu) = match kkt_solve(qp, &active) {
        Some(s) => s,
        None => (w.x.clone(), w.eq_duals.clone(), w.ineq_duals.clone()),
    };
    // Keep the polished point only if it is at least as accurate.
    let rp = qp.kkt_residuals(&x, &nu, &mu);
    let rw = qp.kkt_residuals(&w.x, &w.eq_duals, &w.ineq_duals);
    let worst = |r: &KktResiduals| r.stationarity.max(r.primal).max(r.dual).max(r.complementarity);
    let (x, nu, mu) = if worst(&rp) <= worst(&rw) {
        (x, nu, mu)
    } else {
        (w.x.clone(), w.eq_duals.clone(), w.ineq_duals.clone())
    };
    let objective = qp.objective(&x);
    Ok(QpSolution {
        x,
        eq_duals: nu,
        ineq_duals: mu,
        active_set: active,
        objective,
    })
}

struct Working {
    x: Vector,
    eq_duals: Vector,
    ineq_duals: Vector,
    active: Vec<usize>,
}

/// Dual active-set solver. Constraints are handled in the form `nᵀx ≥ c`.
struct GoldfarbIdnani<'a> {
    qp: &'a DenseQp,
    linv: Mat,
    /// `L⁻¹n_j` for every constraint (equalities first, sign as stored).
    d_all: Mat,
}

impl<'a> GoldfarbIdnani<'a> {
    fn new(qp: &'a DenseQp) -> Result<Self> {
        let chol = symmetrize(&qp.h)
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("QP Hessian is not positive definite".into()))?;
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&Mat::identity(qp.n(), qp.n()))
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        // Inequalities a x ≤ b become (−a) x ≥ −b.
        let normals = vstack(&qp.a_eq, &(-&qp.a_in)).transpose();
        let d_all = &linv * normals;
        Ok(GoldfarbIdnani { qp, linv, d_all })
    }

    fn me(&self) -> usize {
        self.qp.a_eq.nrows()
    }

    fn normal(&self, j: usize, sign: f64) -> (Vector, f64) {
        let me = self.me();
        if j < me {
            (self.qp.a_eq.row(j).transpose() * sign, self.qp.b_eq[j] * sign)
        } else {
            (-self.qp.a_in.row(j - me).transpose(), -self.qp.b_in[j - me])
        }
    }

    fn run(&self) -> Result<Working> {
        let qp = self.qp;
        let n = qp.n();
        let me = self.me();
        let mi = qp.a_in.nrows();
        let scale = 1.0 + qp.b_in.amax().max(qp.b_eq.amax()).max(qp.g.amax());
        let viol_tol = 1e-12 * scale;

        // Unconstrained minimizer x = −H⁻¹g.
        let mut x = -(self.linv.transpose() * (&self.linv * &qp.g));
        let mut active: Vec<usize> = Vec::new();
        let mut signs: Vec<f64> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let max_steps = 20 * (n + me + mi) + 100;
        let mut steps = 0usize;

        let mut eq_order: Vec<usize> = (0..me).collect();
        let mut next_eq = 0usize;
        loop {
            steps += 1;
            if steps > max_steps {
                return Err(Error::NotConverged("dual active-set iteration limit".into()));
            }
            // Pick the next constraint: remaining equalities first, then the
            // most violated inequality.
            let (p, sign) = if next_eq < eq_order.len() {
                let j = eq_order[next_eq];
                next_eq += 1;
                let s = qp.a_eq.row(j).dot(&x.transpose()) - qp.b_eq[j];
                (j, if s > 0.0 { -1.0 } else { 1.0 })
            } else {
                let mut best = -viol_tol;
                let mut pick = None;
                for i in 0..mi {
                    let j = me + i;
                    if active.contains(&j) {
                        continue;
                    }
                    let s = qp.b_in[i] - qp.a_in.row(i).dot(&x.transpose());
                    let nrm = qp.a_in.row(i).norm().max(1e-300);
                    if s / nrm < best {
                        best = s / nrm;
                        pick = Some(j);
                    }
                }
                match pick {
                    Some(j) => (j, 1.0),
                    None => break,
                }
            };
            let (np, cp) = self.normal(p, sign);
            let dp = self.d_all.column(p) * sign;
            let mut u_new = 0.0;
            loop {
                steps += 1;
                if steps > max_steps {
                    return Err(Error::NotConverged("dual active-set iteration limit".into()));
                }
                let (r, zhat) = self.directions(&active, &signs, &dp);
                let z = self.linv.transpose() * &zhat;
                // Dual step: largest step keeping inequality multipliers ≥ 0.
                let mut t1 = f64::INFINITY;
                let mut k_drop = None;
                for (idx, &j) in active.iter().enumerate() {
                    if j >= me && r[idx] > 1e-14 {
                        let t = u[idx] / r[idx];
                        if t < t1 {
                            t1 = t;
                            k_drop = Some(idx);
                        }
                    }
                }
                let zn = zhat.norm_squared();
                let sp = np.dot(&x) - cp;
                let t2 = if zhat.norm() > 1e-12 * dp.norm().max(1e-300) {
                    (-sp / zn).max(0.0)
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if t == f64::INFINITY {
                    if p < me && sp.abs() <= 1e-10 * scale {
                        // Dependent equality that already holds.
                        break;
                    }
                    return Err(Error::Infeasible("QP constraints are inconsistent".into()));
                }
                if t2.is_finite() {
                    x += &z * t;
                }
                for (idx, ui) in u.iter_mut().enumerate() {
                    *ui -= t * r[idx];
                }
                u_new += t;
                if t2 <= t1 {
                    active.push(p);
                    signs.push(sign);
                    u.push(u_new);
                    break;
                }
                let kd = k_drop.expect("finite dual step has a blocking index");
                active.remove(kd);
                signs.remove(kd);
                u.remove(kd);
            }
            if next_eq >= eq_order.len() {
                eq_order.clear();
                next_eq = 0;
            }
        }
        let mut eq_duals = Vector::zeros(me);
        let mut ineq_duals = Vector::zeros(mi);
        let mut act_in = Vec::new();
        for (idx, &j) in active.iter().enumerate() {
            if j < me {
                // Lagrangian term −u·s(nᵀx − c) with n = s·a gives ν = −s·u.
                eq_duals[j] = -signs[idx] * u[idx];
            } else {
                ineq_duals[j - me] = u[idx];
                act_in.push(j - me);
            }
        }
        Ok(Working {
            x,
            eq_duals,
            ineq_duals,
            active: act_in,
        })
    }

    /// Dual direction `r` and projected primal direction `ẑ = (I − QQᵀ)d`.
    fn directions(&self, active: &[usize], signs: &[f64], d: &Vector) -> (Vector, Vector) {
        if active.is_empty() {
            return (Vector::zeros(0), d.clone());
        }
        let n = self.qp.n();
        let mut j = Mat::zeros(n, active.len());
        for (c, (&a, &s)) in active.iter().zip(signs.iter()).enumerate() {
            j.set_column(c, &(self.d_all.column(a) * s));
        }
        let qr = j.qr();
        let q = qr.q();
        let rm = qr.r();
        let qtd = q.transpose() * d;
        let r = rm
            .solve_upper_triangular(&qtd)
            .unwrap_or_else(|| Vector::zeros(active.len()));
        let zhat = d - &q * qtd;
        (r, zhat)
    }
}

/// Brute-force active-set enumeration (small problems only).
pub fn solve_qp_enumerate(qp: &DenseQp) -> Result<QpSolution> {
    qp.check()?;
    crate::linalg::spd_inverse(&qp.h)
        .map_err(|_| Error::InvalidInput("QP Hessian is not positive definite".into()))?;
    let n = qp.n();
    let me = qp.a_eq.nrows();
    let mi = qp.a_in.nrows();
    let max_k = n.saturating_sub(me).min(mi);
    let total: u64 = (0..=max_k).map(|k| binomial(mi as u64, k as u64)).sum();
    if total > ENUM_BUDGET {
        return Err(Error::Budget(format!(
            "{total} candidate active sets exceed the enumeration budget"
        )));
    }
    let scale = 1.0 + qp.b_in.amax().max(qp.b_eq.amax()).max(qp.g.amax());
    for k in 0..=max_k {
        for set in Combinations::new(mi, k) {
            let rows = vstack(&qp.a_eq, &crate::linalg::select_rows(&qp.a_in, &set));
            if rank(&rows, 1e-10) < me + k {
                continue;
            }
            let Some((x, nu, mu)) = kkt_solve(qp, &set) else {
                continue;
            };
            let slack = &qp.b_in - &qp.a_in * &x;
            if slack.iter().any(|&s| s < -1e-9 * scale) {
                continue;
            }
            if set.iter().any(|&i| mu[i] < -DUAL_TOL) {
                continue;
            }
            let objective = qp.objective(&x);
            return Ok(QpSolution {
                x,
                eq_duals: nu,
                ineq_duals: mu,
                active_set: set,
                objective,
            });
        }
    }
    Err(Error::Infeasible("no active set admits a feasible KKT point".into()))
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Exact solution of the stacked problem at `x_0`.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub y: Vector,
    pub lambda: Vector,
    /// `J(x_0) = x_0ᵀQx_0 + F(y*)`.
    pub value: f64,
    /// Active inequality rows per stage.
    pub active_per_stage: Vec<usize>,
}

/// Dense QP of the stacked problem. The first `dual_dim` equality rows are
/// the coupling constraints, so their multipliers are `λ`.
pub fn stacked_qp(sp: &StackedProblem, x0: &Vector) -> Result<DenseQp> {
    sp.check_state(x0)?;
    let ny = sp.primal_dim();
    let e = sp.e_of(x0);
    let mut a_eq = sp.a_dense();
    let mut b_eq = sp.b_of(x0);
    let mut a_in = Mat::zeros(0, ny);
    let mut b_in = Vector::zeros(0);
    for k in 0..=sp.horizon() {
        let set = sp.stage_set(sp.kind(k));
        let off = sp.y_offset(k);
        let mut rows = Mat::zeros(set.ineq.nrows(), ny);
        rows.view_mut((0, off), (set.ineq.nrows(), set.dim())).copy_from(&set.ineq);
        let mut rhs = set.rhs.clone();
        let mut eq = Mat::zeros(set.eq.nrows(), ny);
        eq.view_mut((0, off), (set.eq.nrows(), set.dim())).copy_from(&set.eq);
        let mut eq_rhs = set.eq_rhs.clone();
        if k == 0 {
            rhs += &set.rhs_e * &e;
            eq_rhs += &set.eq_e * &e;
        }
        a_in = vstack(&a_in, &rows);
        b_in = vcat(&b_in, &rhs);
        a_eq = vstack(&a_eq, &eq);
        b_eq = vcat(&b_eq, &eq_rhs);
    }
    let h = sp.sigma_dense() * 2.0;
    Ok(DenseQp::new(h, Vector::zeros(ny))
        .with_eq(a_eq, b_eq)
        .with_ineq(a_in, b_in))
}

/// `(y*, λ*, J(x_0))` of the stacked problem.
pub fn solve_stacked_exact(sp: &StackedProblem, x0: &Vector) -> Result<ExactSolution> {
    let qp = stacked_qp(sp, x0)?;
    let sol = solve_qp_dense(&qp).map_err(|e| match e {
        Error::Infeasible(_) => Error::Infeasible("initial state outside the feasible domain".into()),
        other => other,
    })?;
    let lambda = sol.eq_duals.rows(0, sp.dual_dim()).into_owned();
    let value = x0.dot(&(&sp.problem.q * x0)) + sp.f(&sol.x);
    let e = sp.e_of(x0);
    let active_per_stage = (0..=sp.horizon())
        .map(|k| {
            let s = sp.slacks(k, &sp.block(&sol.x, k).into_owned(), &e);
            s.iter().filter(|&&v| v <= 1e-6).count()
        })
        .collect();
    Ok(ExactSolution {
        y: sol.x,
        lambda,
        value,
        active_per_stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(h: f64, g: f64) -> DenseQp {
        DenseQp::new(Mat::from_element(1, 1, h), Vector::from_element(1, g))
    }

    #[test]
    fn single_bound() {
        // min x² s.t. x ≥ 1.
        let qp = scalar(2.0, 0.0).with_ineq(Mat::from_element(1, 1, -1.0), Vector::from_element(1, -1.0));
        for sol in [solve_qp_dense(&qp).unwrap(), solve_qp_enumerate(&qp).unwrap()] {
            assert!((sol.x[0] - 1.0).abs() < 1e-12);
            assert!((sol.ineq_duals[0] - 2.0).abs() < 1e-12);
            assert_eq!(sol.active_set, vec![0]);
        }
    }

    #[test]
    fn unconstrained_stationarity() {
        let h = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = Vector::from_vec(vec![1.0, -2.0]);
        let sol = solve_qp_dense(&DenseQp::new(h.clone(), f.clone())).unwrap();
        let expect = -h.try_inverse().unwrap() * f;
        assert!((sol.x - expect).amax() < 1e-12);
    }

    #[test]
    fn contradictory_bounds() {
        let qp = scalar(2.0, 0.0).with_ineq(
            Mat::from_row_slice(2, 1, &[-1.0, 1.0]),
            Vector::from_vec(vec![-1.0, 0.0]),
        );
        assert!(matches!(solve_qp_dense(&qp), Err(Error::Infeasible(_))));
        assert!(matches!(solve_qp_enumerate(&qp), Err(Error::Infeasible(_))));
    }

    #[test]
    fn equality_and_inequality() {
        // min x² + y² s.t. x + y = 2, x ≤ 0.5.
        let qp = DenseQp::new(Mat::identity(2, 2) * 2.0, Vector::zeros(2))
            .with_eq(Mat::from_row_slice(1, 2, &[1.0, 1.0]), Vector::from_element(1, 2.0))
            .with_ineq(Mat::from_row_slice(1, 2, &[1.0, 0.0]), Vector::from_element(1, 0.5));
        let a = solve_qp_dense(&qp).unwrap();
        let b = solve_qp_enumerate(&qp).unwrap();
        assert!((a.x[0] - 0.5).abs() < 1e-12 && (a.x[1] - 1.5).abs() < 1e-12);
        assert!((a.x.clone() - b.x).amax() < 1e-12);
        assert!((a.eq_duals[0] + 3.0).abs() < 1e-12);
        assert!((a.ineq_duals[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_convex_rejected() {
        let qp = scalar(-1.0, 0.0);
        assert!(matches!(solve_qp_dense(&qp), Err(Error::InvalidInput(_))));
    }
}
