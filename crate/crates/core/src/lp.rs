//! Dense two-phase simplex for small linear programs over free variables.
//!
//! minimize cᵀx  subject to  A_ub x ≤ b_ub,  A_eq x = b_eq.
//!
//! Pivoting uses Dantzig's rule and switches to Bland's rule after a run of
//! degenerate pivots, which rules out cycling.

use crate::linalg::{Mat, Vector};

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;
const DEGENERATE_SWITCH: usize = 30;

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: Vector,
    pub a_ub: Mat,
    pub b_ub: Vector,
    pub a_eq: Mat,
    pub b_eq: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vector, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<(&Vector, f64)> {
        match self {
            LpOutcome::Optimal { x, value } => Some((x, *value)),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn new(c: Vector, a_ub: Mat, b_ub: Vector) -> Self {
        let n = c.len();
        LinearProgram {
            c,
            a_ub,
            b_ub,
            a_eq: Mat::zeros(0, n),
            b_eq: Vector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a_eq: Mat, b_eq: Vector) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    t: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    n: usize,
    ncols: usize,
    first_art: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let n = lp.c.len();
        let m_ub = lp.a_ub.nrows();
        let m_eq = lp.a_eq.nrows();
        let m = m_ub + m_eq;
        // Columns: x⁺ (n) | x⁻ (n) | slacks (m_ub) | artificials (≤ m).
        let n_art = (0..m_ub).filter(|&i| lp.b_ub[i] < 0.0).count() + m_eq;
        let first_art = 2 * n + m_ub;
        let ncols = first_art + n_art;
        let mut t = vec![vec![0.0; ncols]; m];
        let mut rhs = vec![0.0; m];
        let mut basis = vec![0; m];
        let mut art = first_art;
        for i in 0..m {
            let (row, b, slack) = if i < m_ub {
                (lp.a_ub.row(i), lp.b_ub[i], Some(2 * n + i))
            } else {
                (lp.a_eq.row(i - m_ub), lp.b_eq[i - m_ub], None)
            };
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i][j] = sign * row[j];
                t[i][n + j] = -sign * row[j];
            }
            rhs[i] = sign * b;
            if let Some(s) = slack {
                t[i][s] = sign;
            }
            if sign > 0.0 && slack.is_some() {
                basis[i] = slack.unwrap();
            } else {
                t[i][art] = 1.0;
                basis[i] = art;
                art += 1;
            }
        }
        Tableau {
            t,
            rhs,
            basis,
            n,
            ncols,
            first_art,
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        let prow = self.t[r].clone();
        let prhs = self.rhs[r];
        for i in 0..self.t.len() {
            if i == r {
                continue;
            }
            let f = self.t[i][c];
            if f != 0.0 {
                for (v, pv) in self.t[i].iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                self.rhs[i] -= f * prhs;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (dj, tij) in d.iter_mut().zip(self.t[i].iter()) {
                    *dj -= cb * tij;
                }
            }
        }
        d
    }

    /// Minimizes `cost` over the current feasible basis. Returns false if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Option<bool> {
        let mut degenerate = 0usize;
        for _ in 0..MAX_PIVOTS {
            let d = self.reduced_costs(cost);
            let scale = 1.0 + cost.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut enter = None;
            let mut best = -FEAS_TOL * scale;
            for (j, &dj) in d.iter().enumerate().take(allowed) {
                if dj < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = dj;
                }
            }
            let Some(e) = enter else {
                return Some(true);
            };
            let mut leave: Option<usize> = None;
            let mut ratio = f64::INFINITY;
            for i in 0..self.t.len() {
                let a = self.t[i][e];
                if a > PIVOT_TOL {
                    let q = self.rhs[i].max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            q < ratio - 1e-14
                                || (q <= ratio + 1e-14 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        ratio = q;
                        leave = Some(i);
                    }
                }
            }
            let Some(l) = leave else {
                return Some(false);
            };
            if ratio <= 1e-14 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(l, e);
        }
        None
    }

    fn run(mut self, lp: &LinearProgram) -> LpOutcome {
        let n = self.n;
        let rhs_scale = 1.0 + self.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if self.ncols > self.first_art {
            let mut cost = vec![0.0; self.ncols];
            for c in cost.iter_mut().skip(self.first_art) {
                *c = 1.0;
            }
            if self.optimize(&cost, self.ncols).is_none() {
                return LpOutcome::Infeasible;
            }
            let infeas: f64 = self
                .basis
                .iter()
                .zip(self.rhs.iter())
                .filter(|(b, _)| **b >= self.first_art)
                .map(|(_, r)| *r)
                .sum();
            if infeas > FEAS_TOL * rhs_scale {
                return LpOutcome::Infeasible;
            }
            // Drive remaining artificials out of the basis, dropping redundant rows.
            let mut i = 0;
            while i < self.t.len() {
                if self.basis[i] >= self.first_art {
                    let col = (0..self.first_art).find(|&j| self.t[i][j].abs() > 1e-9);
                    match col {
                        Some(j) => {
                            self.pivot(i, j);
                            i += 1;
                        }
                        None => {
                            self.t.remove(i);
                            self.rhs.remove(i);
                            self.basis.remove(i);
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }
        let mut cost = vec![0.0; self.ncols];
        for j in 0..n {
            cost[j] = lp.c[j];
            cost[n + j] = -lp.c[j];
        }
        match self.optimize(&cost, self.first_art) {
            None => LpOutcome::Infeasible,
            Some(false) => LpOutcome::Unbounded,
            Some(true) => {
                let mut x = Vector::zeros(n);
                for (i, &b) in self.basis.iter().enumerate() {
                    if b < n {
                        x[b] += self.rhs[i];
                    } else if b < 2 * n {
                        x[b - n] -= self.rhs[i];
                    }
                }
                let value = lp.c.dot(&x);
                LpOutcome::Optimal { x, value }
            }
        }
    }
}
