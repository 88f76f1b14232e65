//! H-representation polyhedra `{x | Hx ≤ b, H_eq x = b_eq}`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{mat_from_rows, mat_to_rows, rank, Mat, Vector};
use crate::lp::{LinearProgram, LpOutcome};

pub const LP_TOL: f64 = 1e-9;
/// Largest ambient dimension accepted by vertex enumeration.
pub const MAX_VERTEX_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    dim: usize,
    h: Mat,
    b: Vector,
    h_eq: Mat,
    b_eq: Vector,
}

impl Polyhedron {
    pub fn new(h: Mat, b: Vector) -> Result<Self> {
        dim_check(h.nrows() == b.len(), || {
            format!("H has {} rows but b has {} entries", h.nrows(), b.len())
        })?;
        Ok(Polyhedron {
            dim: h.ncols(),
            h_eq: Mat::zeros(0, h.ncols()),
            b_eq: Vector::zeros(0),
            h,
            b,
        })
    }

    pub fn with_equalities(mut self, h_eq: Mat, b_eq: Vector) -> Result<Self> {
        dim_check(h_eq.ncols() == self.dim && h_eq.nrows() == b_eq.len(), || {
            "equality block does not match polyhedron dimension".into()
        })?;
        self.h_eq = h_eq;
        self.b_eq = b_eq;
        Ok(self)
    }

    /// The whole space ℝⁿ (no rows).
    pub fn whole_space(dim: usize) -> Self {
        Polyhedron {
            dim,
            h: Mat::zeros(0, dim),
            b: Vector::zeros(0),
            h_eq: Mat::zeros(0, dim),
            b_eq: Vector::zeros(0),
        }
    }

    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        dim_check(lo.len() == hi.len(), || "box bounds of unequal length".into())?;
        let n = lo.len();
        let mut h = Mat::zeros(2 * n, n);
        let mut b = Vector::zeros(2 * n);
        for i in 0..n {
            h[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            h[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        Polyhedron::new(h, b)
    }

    /// Cartesian product of polyhedra.
    pub fn product(parts: &[Polyhedron]) -> Polyhedron {
        let dim: usize = parts.iter().map(|p| p.dim).sum();
        let rows: usize = parts.iter().map(|p| p.h.nrows()).sum();
        let eq_rows: usize = parts.iter().map(|p| p.h_eq.nrows()).sum();
        let mut h = Mat::zeros(rows, dim);
        let mut b = Vector::zeros(rows);
        let mut h_eq = Mat::zeros(eq_rows, dim);
        let mut b_eq = Vector::zeros(eq_rows);
        let (mut r, mut re, mut c) = (0, 0, 0);
        for p in parts {
            h.view_mut((r, c), (p.h.nrows(), p.dim)).copy_from(&p.h);
            b.rows_mut(r, p.h.nrows()).copy_from(&p.b);
            h_eq.view_mut((re, c), (p.h_eq.nrows(), p.dim)).copy_from(&p.h_eq);
            b_eq.rows_mut(re, p.h_eq.nrows()).copy_from(&p.b_eq);
            r += p.h.nrows();
            re += p.h_eq.nrows();
            c += p.dim;
        }
        Polyhedron {
            dim,
            h,
            b,
            h_eq,
            b_eq,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn h(&self) -> &Mat {
        &self.h
    }
    pub fn b(&self) -> &Vector {
        &self.b
    }
    pub fn h_eq(&self) -> &Mat {
        &self.h_eq
    }
    pub fn b_eq(&self) -> &Vector {
        &self.b_eq
    }
    pub fn n_ineq(&self) -> usize {
        self.h.nrows()
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool> {
        dim_check(x.len() == self.dim, || {
            format!("point has dimension {}, polyhedron {}", x.len(), self.dim)
        })?;
        Ok(self.max_violation(x) <= tol)
    }

    /// Largest constraint violation at `x` (≤ 0 means inside).
    pub fn max_violation(&self, x: &Vector) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.h.nrows() {
            worst = worst.max(self.h.row(i).dot(&x.transpose()) - self.b[i]);
        }
        for i in 0..self.h_eq.nrows() {
            worst = worst.max((self.h_eq.row(i).dot(&x.transpose()) - self.b_eq[i]).abs());
        }
        if worst == f64::NEG_INFINITY {
            0.0
        } else {
            worst
        }
    }

    pub fn scaled(&self, s: f64) -> Polyhedron {
        let mut p = self.clone();
        p.b *= s;
        p.b_eq *= s;
        p
    }

    pub fn intersect(&self, other: &Polyhedron) -> Result<Polyhedron> {
        dim_check(self.dim == other.dim, || "intersecting polyhedra of different dimension".into())?;
        let h = crate::linalg::vstack(&self.h, &other.h);
        let b = crate::linalg::vcat(&self.b, &other.b);
        let h_eq = crate::linalg::vstack(&self.h_eq, &other.h_eq);
        let b_eq = crate::linalg::vcat(&self.b_eq, &other.b_eq);
        Polyhedron::new(h, b)?.with_equalities(h_eq, b_eq)
    }

    /// Normalizes inequality rows to unit norm, merges duplicates (keeping the
    /// tightest offset) and sorts rows lexicographically.
    pub fn canonicalize(&self) -> Polyhedron {
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(self.h.nrows());
        let mut infeasible_zero_row = false;
        for i in 0..self.h.nrows() {
            let norm = self.h.row(i).norm();
            if norm <= 1e-12 {
                if self.b[i] < -LP_TOL {
                    infeasible_zero_row = true;
                }
                continue;
            }
            let r: Vec<f64> = self.h.row(i).iter().map(|v| clean(v / norm)).collect();
            rows.push((r, clean(self.b[i] / norm)));
        }
        rows.sort_by(|a, b| {
            for (x, y) in a.0.iter().zip(b.0.iter()) {
                match x.partial_cmp(y).unwrap() {
                    std::cmp::Ordering::Equal => continue,
                    o => return o,
                }
            }
            a.1.partial_cmp(&b.1).unwrap()
        });
        let mut merged: Vec<(Vec<f64>, f64)> = Vec::with_capacity(rows.len());
        for (r, b) in rows {
            if let Some(last) = merged.last_mut() {
                if last.0.iter().zip(r.iter()).all(|(x, y)| (x - y).abs() <= 1e-12) {
                    last.1 = last.1.min(b);
                    continue;
                }
            }
            merged.push((r, b));
        }
        if infeasible_zero_row {
            let mut r = vec![0.0; self.dim];
            if self.dim > 0 {
                r[0] = 1.0;
                merged.push((r.clone(), -1.0));
                r[0] = -1.0;
                merged.push((r, -1.0));
            }
        }
        let mut h = Mat::zeros(merged.len(), self.dim);
        let mut b = Vector::zeros(merged.len());
        for (i, (r, bi)) in merged.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                h[(i, j)] = *v;
            }
            b[i] = *bi;
        }
        Polyhedron {
            dim: self.dim,
            h,
            b,
            h_eq: self.h_eq.clone(),
            b_eq: self.b_eq.clone(),
        }
    }

    /// Maximizes `cᵀx` over the polyhedron.
    pub fn maximize(&self, c: &Vector) -> LpOutcome {
        let lp = LinearProgram::new(-c, self.h.clone(), self.b.clone())
            .with_equalities(self.h_eq.clone(), self.b_eq.clone());
        match lp.solve() {
            LpOutcome::Optimal { x, value } => LpOutcome::Optimal { x, value: -value },
            o => o,
        }
    }

    /// Chebyshev ball (center, radius) with the radius capped at `r_max`.
    /// `None` when the polyhedron is empty.
    pub fn chebyshev(&self, r_max: f64) -> Option<(Vector, f64)> {
        let n = self.dim;
        let m = self.h.nrows();
        let mut a = Mat::zeros(m + 1, n + 1);
        let mut b = Vector::zeros(m + 1);
        for i in 0..m {
            let norm = self.h.row(i).norm();
            for j in 0..n {
                a[(i, j)] = self.h[(i, j)];
            }
            a[(i, n)] = norm;
            b[i] = self.b[i];
        }
        a[(m, n)] = 1.0;
        b[m] = r_max;
        let mut a_eq = Mat::zeros(self.h_eq.nrows(), n + 1);
        a_eq.view_mut((0, 0), (self.h_eq.nrows(), n)).copy_from(&self.h_eq);
        let mut c = Vector::zeros(n + 1);
        c[n] = -1.0;
        let lp = LinearProgram::new(c, a, b).with_equalities(a_eq, self.b_eq.clone());
        match lp.solve() {
            LpOutcome::Optimal { x, .. } => {
                let r = x[n];
                if r < -LP_TOL {
                    None
                } else {
                    Some((x.rows(0, n).into_owned(), r))
                }
            }
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.chebyshev(1.0).is_none()
    }

    /// Minimal H-representation via one LP per row.
    pub fn remove_redundant(&self) -> Result<Polyhedron> {
        let canon = self.canonicalize();
        if canon.is_empty() {
            return Err(Error::Infeasible("cannot reduce an empty polyhedron".into()));
        }
        let m = canon.h.nrows();
        let mut keep = vec![true; m];
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != i && keep[j]).collect();
            let mut h = Mat::zeros(others.len() + 1, canon.dim);
            let mut b = Vector::zeros(others.len() + 1);
            for (r, &j) in others.iter().enumerate() {
                h.set_row(r, &canon.h.row(j));
                b[r] = canon.b[j];
            }
            // Bound the probed direction just outside the facet.
            h.set_row(others.len(), &canon.h.row(i));
            b[others.len()] = canon.b[i] + 1.0;
            let probe = Polyhedron {
                dim: canon.dim,
                h,
                b,
                h_eq: canon.h_eq.clone(),
                b_eq: canon.b_eq.clone(),
            };
            let dir = canon.h.row(i).transpose();
            if let LpOutcome::Optimal { value, .. } = probe.maximize(&dir) {
                if value <= canon.b[i] + LP_TOL {
                    keep[i] = false;
                }
            }
        }
        let rows: Vec<usize> = (0..m).filter(|&i| keep[i]).collect();
        Ok(Polyhedron {
            dim: canon.dim,
            h: crate::linalg::select_rows(&canon.h, &rows),
            b: crate::linalg::select_entries(&canon.b, &rows),
            h_eq: canon.h_eq,
            b_eq: canon.b_eq,
        })
    }

    pub fn is_bounded(&self) -> bool {
        for i in 0..self.dim {
            for s in [1.0, -1.0] {
                let mut c = Vector::zeros(self.dim);
                c[i] = s;
                if matches!(self.maximize(&c), LpOutcome::Unbounded) {
                    return false;
                }
            }
        }
        true
    }

    /// All vertices of a bounded polyhedron of dimension at most six.
    pub fn vertices(&self) -> Result<Vec<Vector>> {
        if self.dim > MAX_VERTEX_DIM {
            return Err(Error::InvalidInput(format!(
                "vertex enumeration limited to dimension {MAX_VERTEX_DIM}, got {}",
                self.dim
            )));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if !self.is_bounded() {
            return Err(Error::Unbounded("vertex enumeration needs a bounded polyhedron".into()));
        }
        let canon = self.canonicalize();
        let n = canon.dim;
        let n_eq = canon.h_eq.nrows();
        let need = n.saturating_sub(rank(&canon.h_eq, 1e-10));
        let m = canon.h.nrows();
        let mut out: Vec<Vector> = Vec::new();
        for combo in Combinations::new(m, need) {
            let mut a = Mat::zeros(need + n_eq, n);
            let mut rhs = Vector::zeros(need + n_eq);
            for (r, &i) in combo.iter().enumerate() {
                a.set_row(r, &canon.h.row(i));
                rhs[r] = canon.b[i];
            }
            for i in 0..n_eq {
                a.set_row(need + i, &canon.h_eq.row(i));
                rhs[need + i] = canon.b_eq[i];
            }
            if rank(&a, 1e-10) < n {
                continue;
            }
            let x = match a.clone().svd(true, true).solve(&rhs, 1e-12) {
                Ok(x) => x,
                Err(_) => continue,
            };
            if (&a * &x - &rhs).amax() > 1e-8 || canon.max_violation(&x) > 1e-9 {
                continue;
            }
            if !out.iter().any(|v| (v - &x).amax() <= 1e-8) {
                out.push(x);
            }
        }
        out.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.partial_cmp(y).unwrap())
                .find(|o| *o != std::cmp::Ordering::Equal)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(out)
    }

    /// Axis-aligned bounding box `(lo, hi)`; `None` if unbounded or empty.
    pub fn bounding_box(&self) -> Option<(Vector, Vector)> {
        let mut lo = Vector::zeros(self.dim);
        let mut hi = Vector::zeros(self.dim);
        for i in 0..self.dim {
            let mut c = Vector::zeros(self.dim);
            c[i] = 1.0;
            hi[i] = self.maximize(&c).optimal()?.1;
            c[i] = -1.0;
            lo[i] = -self.maximize(&c).optimal()?.1;
        }
        Some((lo, hi))
    }
}

fn clean(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Lexicographic k-subsets of `0..n`.
pub struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;
    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(rename = "H_eq", default, skip_serializing_if = "Vec::is_empty")]
    h_eq: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b_eq: Vec<f64>,
}

impl Serialize for Polyhedron {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyRepr {
            h: mat_to_rows(&self.h),
            b: self.b.iter().cloned().collect(),
            dim: Some(self.dim),
            h_eq: mat_to_rows(&self.h_eq),
            b_eq: self.b_eq.iter().cloned().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polyhedron {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = PolyRepr::deserialize(d)?;
        let dim = match (r.dim, r.h.first(), r.h_eq.first()) {
            (Some(d), _, _) => d,
            (None, Some(row), _) => row.len(),
            (None, None, Some(row)) => row.len(),
            (None, None, None) => {
                return Err(D::Error::custom("polyhedron without rows needs an explicit \"dim\""))
            }
        };
        let h = mat_from_rows(&r.h, dim).map_err(D::Error::custom)?;
        let h_eq = mat_from_rows(&r.h_eq, dim).map_err(D::Error::custom)?;
        Polyhedron::new(h, Vector::from_vec(r.b))
            .and_then(|p| p.with_equalities(h_eq, Vector::from_vec(r.b_eq)))
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Polyhedron {
        Polyhedron::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn contains_interior_boundary_exterior() {
        let p = unit_box();
        assert!(p.contains(&Vector::from_vec(vec![0.0, 0.0]), 1e-9).unwrap());
        assert!(p.contains(&Vector::from_vec(vec![1.0, 1.0]), 1e-9).unwrap());
        assert!(!p.contains(&Vector::from_vec(vec![2.0, 0.0]), 1e-9).unwrap());
        assert!(p.contains(&Vector::from_vec(vec![0.0]), 1e-9).is_err());
    }

    #[test]
    fn dominated_half_space_removed() {
        let p = Polyhedron::new(
            Mat::from_row_slice(3, 1, &[1.0, 1.0, -1.0]),
            Vector::from_vec(vec![1.0, 2.0, 5.0]),
        )
        .unwrap();
        let r = p.remove_redundant().unwrap();
        assert_eq!(r.n_ineq(), 2);
        assert!(r.contains(&Vector::from_vec(vec![1.0]), 1e-12).unwrap());
        assert!(!r.contains(&Vector::from_vec(vec![1.5]), 1e-12).unwrap());
    }

    #[test]
    fn duplicate_box_collapses() {
        let b = unit_box();
        let twice = b.intersect(&b.scaled(1.0)).unwrap();
        assert_eq!(twice.remove_redundant().unwrap().n_ineq(), 4);
    }

    #[test]
    fn empty_polyhedron_rejected() {
        let p = Polyhedron::new(
            Mat::from_row_slice(2, 1, &[1.0, -1.0]),
            Vector::from_vec(vec![0.0, -1.0]),
        )
        .unwrap();
        assert!(p.is_empty());
        assert!(p.remove_redundant().is_err());
    }

    #[test]
    fn box_and_simplex_vertices() {
        let v = unit_box().vertices().unwrap();
        assert_eq!(v.len(), 4);
        for x in &v {
            assert!((x[0].abs() - 1.0).abs() < 1e-12 && (x[1].abs() - 1.0).abs() < 1e-12);
        }
        let simplex = Polyhedron::new(
            Mat::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            Vector::from_vec(vec![0.0, 0.0, 1.0]),
        )
        .unwrap();
        let v = simplex.vertices().unwrap();
        assert_eq!(v.len(), 3);
        let expect = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        for (x, e) in v.iter().zip(expect.iter()) {
            assert!((x[0] - e[0]).abs() < 1e-12 && (x[1] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn unbounded_vertices_error() {
        let p = Polyhedron::new(Mat::from_row_slice(1, 2, &[1.0, 0.0]), Vector::from_vec(vec![1.0]))
            .unwrap();
        assert!(matches!(p.vertices(), Err(Error::Unbounded(_))));
        let big = Polyhedron::from_box(&[-1.0; 7], &[1.0; 7]).unwrap();
        assert!(big.vertices().is_err());
    }

    #[test]
    fn chebyshev_of_box() {
        let (c, r) = unit_box().chebyshev(10.0).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
        assert!(c.amax() < 1e-9);
    }

    #[test]
    fn json_shape() {
        let p = unit_box();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"H\""));
        let q: Polyhedron = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let free: Polyhedron = serde_json::from_str(r#"{"H": [], "b": [], "dim": 3}"#).unwrap();
        assert_eq!(free.dim(), 3);
    }

    #[test]
    fn combinations_enumerate_all() {
        let c: Vec<_> = Combinations::new(4, 2).collect();
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![0, 1]);
        assert_eq!(c[5], vec![2, 3]);
        assert_eq!(Combinations::new(3, 0).count(), 1);
    }
}
