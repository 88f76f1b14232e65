//! Multi-parametric QPs: active-set enumeration of critical regions,
//! piecewise-affine solution maps, and search trees for point location.
//!
//! Parametric form: minimize ½ξᵀHξ + (Fθ)ᵀξ subject to Gξ ≤ w + Sθ and
//! A_eq ξ = b_eq + S_eq θ.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{
    is_positive_definite, rank, select_entries, select_rows, serde_mat, serde_vec, vstack, Mat,
    Vector,
};
use crate::lp::{LinearProgram, LpOutcome};
use crate::polytope::Polyhedron;
use crate::qp::DenseQp;

/// Regions with a smaller Chebyshev radius are discarded.
pub const REGION_RADIUS_TOL: f64 = 1e-9;
/// Default cap on evaluated candidate active sets.
pub const DEFAULT_BUDGET: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricQp {
    #[serde(with = "serde_mat")]
    pub h: Mat,
    #[serde(with = "serde_mat")]
    pub f: Mat,
    #[serde(with = "serde_mat")]
    pub g: Mat,
    #[serde(with = "serde_vec")]
    pub w: Vector,
    #[serde(with = "serde_mat")]
    pub s: Mat,
    #[serde(with = "serde_mat")]
    pub a_eq: Mat,
    #[serde(with = "serde_vec")]
    pub b_eq: Vector,
    #[serde(with = "serde_mat")]
    pub s_eq: Mat,
}

impl ParametricQp {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn n_ineq(&self) -> usize {
        self.g.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let (n, p) = (self.dim(), self.param_dim());
        dim_check(self.h.shape() == (n, n) && self.f.nrows() == n, || {
            "parametric QP: H/F shapes".into()
        })?;
        dim_check(
            self.g.ncols() == n && self.w.len() == self.g.nrows() && self.s.shape() == (self.g.nrows(), p),
            || "parametric QP: inequality block shapes".into(),
        )?;
        dim_check(
            self.a_eq.ncols() == n
                && self.b_eq.len() == self.a_eq.nrows()
                && self.s_eq.shape() == (self.a_eq.nrows(), p),
            || "parametric QP: equality block shapes".into(),
        )?;
        if !is_positive_definite(&self.h, 1e-10) {
            return Err(Error::InvalidInput("parametric QP Hessian is not positive definite".into()));
        }
        Ok(())
    }

    /// The QP at a fixed parameter.
    pub fn instantiate(&self, theta: &Vector) -> DenseQp {
        DenseQp::new(self.h.clone(), &self.f * theta)
            .with_eq(self.a_eq.clone(), &self.b_eq + &self.s_eq * theta)
            .with_ineq(self.g.clone(), &self.w + &self.s * theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRegion {
    pub region: Polyhedron,
    #[serde(with = "serde_mat")]
    pub gain: Mat,
    #[serde(with = "serde_vec")]
    pub offset: Vector,
    pub active_set: Vec<usize>,
}

impl CriticalRegion {
    pub fn law(&self, theta: &Vector) -> Vector {
        &self.gain * theta + &self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwaSolutionMap {
    pub param_dim: usize,
    pub dim: usize,
    pub regions: Vec<CriticalRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<SearchTree>,
}

/// Statistics of one enumeration run.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EnumerationStats {
    pub candidates: usize,
    pub infeasible: usize,
    pub degenerate: usize,
    pub thin: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EnumerationOptions {
    pub budget: usize,
    pub radius_tol: f64,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            budget: DEFAULT_BUDGET,
            radius_tol: REGION_RADIUS_TOL,
        }
    }
}

enum Candidate {
    Pruned { degenerate: bool },
    Alive(Option<CriticalRegion>),
}

pub fn enumerate_critical_regions(pqp: &ParametricQp) -> Result<PwaSolutionMap> {
    enumerate_with(pqp, &EnumerationOptions::default()).map(|(m, _)| m)
}

/// Breadth-first enumeration by active-set size. Supersets of primal
/// infeasible or rank-deficient sets are never generated.
pub fn enumerate_with(
    pqp: &ParametricQp,
    opts: &EnumerationOptions,
) -> Result<(PwaSolutionMap, EnumerationStats)> {
    pqp.check()?;
    let n = pqp.dim();
    let me = pqp.a_eq.nrows();
    if rank(&pqp.a_eq, 1e-10) < me {
        return Err(Error::InvalidInput("equality rows are linearly dependent".into()));
    }
    let m = pqp.n_ineq();
    let max_size = n.saturating_sub(me).min(m);
    let mut stats = EnumerationStats::default();
    let mut regions: Vec<CriticalRegion> = Vec::new();
    let mut alive_prev: HashSet<Vec<usize>> = HashSet::new();
    let mut level: Vec<Vec<usize>> = vec![Vec::new()];
    for size in 0..=max_size {
        if level.is_empty() {
            break;
        }
        stats.candidates += level.len();
        if stats.candidates > opts.budget {
            return Err(Error::Budget(format!(
                "more than {} candidate active sets",
                opts.budget
            )));
        }
        let results: Vec<Candidate> = level
            .par_iter()
            .map(|set| evaluate_candidate(pqp, set, opts.radius_tol))
            .collect::<Result<Vec<_>>>()?;
        let mut alive: HashSet<Vec<usize>> = HashSet::new();
        let mut alive_sorted: Vec<Vec<usize>> = Vec::new();
        for (set, res) in level.iter().zip(results) {
            match res {
                Candidate::Pruned { degenerate } => {
                    if degenerate {
                        stats.degenerate += 1;
                    } else {
                        stats.infeasible += 1;
                    }
                }
                Candidate::Alive(region) => {
                    alive.insert(set.clone());
                    alive_sorted.push(set.clone());
                    match region {
                        Some(r) => regions.push(r),
                        None => stats.thin += 1,
                    }
                }
            }
        }
        if size == 0 && alive.is_empty() {
            return Err(Error::Infeasible("parametric QP is infeasible for every parameter".into()));
        }
        // Next level: extend each alive set by a larger index, keeping only
        // sets whose every facet subset is alive.
        let mut next = Vec::new();
        for set in &alive_sorted {
            let start = set.last().map_or(0, |&l| l + 1);
            for j in start..m {
                let mut cand = set.clone();
                cand.push(j);
                let ok = (0..cand.len().saturating_sub(1)).all(|drop| {
                    let mut sub = cand.clone();
                    sub.remove(drop);
                    alive.contains(&sub)
                });
                if ok {
                    next.push(cand);
                }
            }
        }
        alive_prev = alive;
        level = next;
    }
    drop(alive_prev);
    let regions = dedup_regions(regions);
    Ok((
        PwaSolutionMap {
            param_dim: pqp.param_dim(),
            dim: n,
            regions,
            tree: None,
        },
        stats,
    ))
}

fn evaluate_candidate(pqp: &ParametricQp, set: &[usize], radius_tol: f64) -> Result<Candidate> {
    let n = pqp.dim();
    let p = pqp.param_dim();
    let me = pqp.a_eq.nrows();
    let k = set.len();
    let ga = select_rows(&pqp.g, set);
    let act = vstack(&ga, &pqp.a_eq);
    if k > 0 && rank(&act, 1e-9) < k + me {
        return Ok(Candidate::Pruned { degenerate: true });
    }
    // Primal feasibility of the active set in (ξ, θ).
    if k > 0 {
        let nv = n + p;
        let gs = hcat(&pqp.g, &(-&pqp.s));
        let eq_rows = vstack(
            &hcat(&ga, &(-select_rows(&pqp.s, set))),
            &hcat(&pqp.a_eq, &(-&pqp.s_eq)),
        );
        let eq_rhs = crate::linalg::vcat(&select_entries(&pqp.w, set), &pqp.b_eq);
        let lp = LinearProgram::new(Vector::zeros(nv), gs, pqp.w.clone()).with_equalities(eq_rows, eq_rhs);
        if matches!(lp.solve(), LpOutcome::Infeasible) {
            return Ok(Candidate::Pruned { degenerate: false });
        }
    }
    // KKT system in the parameter: [H Aᵀ; A 0][ξ; ν] = R0 + R1 θ.
    let na = k + me;
    let dim = n + na;
    let mut kkt = Mat::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&pqp.h);
    kkt.view_mut((n, 0), (na, n)).copy_from(&act);
    kkt.view_mut((0, n), (n, na)).copy_from(&act.transpose());
    let mut rhs = Mat::zeros(dim, p + 1);
    rhs.view_mut((0, 1), (n, p)).copy_from(&(-&pqp.f));
    for (r, &i) in set.iter().enumerate() {
        rhs[(n + r, 0)] = pqp.w[i];
        for j in 0..p {
            rhs[(n + r, 1 + j)] = pqp.s[(i, j)];
        }
    }
    for r in 0..me {
        rhs[(n + k + r, 0)] = pqp.b_eq[r];
        for j in 0..p {
            rhs[(n + k + r, 1 + j)] = pqp.s_eq[(r, j)];
        }
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular KKT matrix for an independent active set".into()))?;
    let offset = sol.view((0, 0), (n, 1)).column(0).into_owned();
    let gain = sol.view((0, 1), (n, p)).into_owned();
    let dual_off = sol.view((n, 0), (k, 1)).column(0).into_owned();
    let dual_gain = sol.view((n, 1), (k, p)).into_owned();

    // Region: inactive rows satisfied and active multipliers nonnegative.
    let inactive: Vec<usize> = (0..pqp.n_ineq()).filter(|i| !set.contains(i)).collect();
    let gi = select_rows(&pqp.g, &inactive);
    let si = select_rows(&pqp.s, &inactive);
    let wi = select_entries(&pqp.w, &inactive);
    let h_in = &gi * &gain - si;
    let b_in = wi - &gi * &offset;
    let h = vstack(&h_in, &(-dual_gain));
    let b = crate::linalg::vcat(&b_in, &dual_off);
    let poly = Polyhedron::new(h, b)?;
    let region = match poly.chebyshev(1.0) {
        Some((_, r)) if r > radius_tol => Some(CriticalRegion {
            region: poly.remove_redundant()?,
            gain: clean_mat(gain),
            offset: clean_vec(offset),
            active_set: set.to_vec(),
        }),
        _ => None,
    };
    Ok(Candidate::Alive(region))
}

fn hcat(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

/// Rounds tiny magnitudes to exact zero so stores are byte-stable.
fn clean_mat(mut m: Mat) -> Mat {
    let scale = m.amax().max(1.0);
    m.apply(|v| {
        if v.abs() < 1e-14 * scale {
            *v = 0.0
        }
    });
    m
}

fn clean_vec(mut v: Vector) -> Vector {
    let scale = v.amax().max(1.0);
    v.apply(|x| {
        if x.abs() < 1e-14 * scale {
            *x = 0.0
        }
    });
    v
}

/// Removes regions that repeat an earlier region and law (weakly active
/// constraints produce the same region from several active sets).
fn dedup_regions(regions: Vec<CriticalRegion>) -> Vec<CriticalRegion> {
    let mut out: Vec<CriticalRegion> = Vec::with_capacity(regions.len());
    for r in regions {
        let dup = out.iter().any(|o| {
            o.region.h().shape() == r.region.h().shape()
                && (o.region.h() - r.region.h()).amax() < 1e-9
                && (o.region.b() - r.region.b()).amax() < 1e-9
                && (&o.gain - &r.gain).amax() < 1e-9
                && (&o.offset - &r.offset).amax() < 1e-9
        });
        if !dup {
            out.push(r);
        }
    }
    out
}

/// Containment tolerance used for point location.
pub fn locate_tol(theta: &Vector) -> f64 {
    1e-9 * (1.0 + theta.amax())
}

/// Violation up to which the nearest region is accepted when no region
/// contains the parameter.
pub fn nearest_tol(theta: &Vector) -> f64 {
    1e-6 * (1.0 + theta.amax())
}

impl PwaSolutionMap {
    /// First region (in index order) containing `θ`.
    pub fn scan(&self, theta: &Vector) -> Option<usize> {
        let tol = locate_tol(theta);
        self.regions
            .iter()
            .position(|r| r.region.max_violation(theta) <= tol)
    }

    /// Region index for `θ`: tree search when attached, else a sequential
    /// scan; falls back to the nearest region for small violations.
    /// On failure returns the smallest violation found.
    pub fn locate(&self, theta: &Vector) -> std::result::Result<usize, f64> {
        let found = match &self.tree {
            Some(t) => t.locate(self, theta),
            None => self.scan(theta),
        };
        if let Some(i) = found {
            return Ok(i);
        }
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, r) in self.regions.iter().enumerate() {
            let v = r.region.max_violation(theta);
            if v < best.1 {
                best = (i, v);
            }
        }
        if best.1 <= nearest_tol(theta) {
            Ok(best.0)
        } else {
            Err(best.1)
        }
    }

    /// `ξ*(θ)`; a miss is reported as stage 0, callers relabel it.
    pub fn evaluate(&self, theta: &Vector) -> Result<Vector> {
        dim_check(theta.len() == self.param_dim, || {
            format!("parameter has dimension {}, map {}", theta.len(), self.param_dim)
        })?;
        match self.locate(theta) {
            Ok(i) => Ok(self.regions[i].law(theta)),
            Err(v) => Err(Error::MapMiss {
                stage: 0,
                violation: v,
            }),
        }
    }

    /// Number of stored floating point values.
    pub fn storage_floats(&self) -> usize {
        self.regions
            .iter()
            .map(|r| r.region.h().len() + r.region.b().len() + r.gain.len() + r.offset.len())
            .sum()
    }

    pub fn with_tree(mut self) -> Self {
        self.tree = Some(build_search_tree(&self));
        self
    }
}

/// Binary tree over region facet hyperplanes. A node sends `θ` left when
/// `aᵀθ ≤ c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        regions: Vec<usize>,
    },
    Split {
        normal: Vec<f64>,
        offset: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub root: TreeNode,
    pub depth: usize,
}

/// Caps the hyperplanes scored at one node.
const MAX_SPLIT_CANDIDATES: usize = 24;
const MAX_LEAF_REGIONS: usize = 8;
/// Caps the regions used to score candidates at one node.
const MAX_SCORE_REGIONS: usize = 32;
const SIDE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Left,
    Right,
    Both,
}

pub fn build_search_tree(map: &PwaSolutionMap) -> SearchTree {
    // Distinct facet hyperplanes, in order of first appearance.
    let mut planes: Vec<(Vector, f64)> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut region_planes: Vec<Vec<usize>> = Vec::with_capacity(map.regions.len());
    for r in &map.regions {
        let mut ids = Vec::new();
        for i in 0..r.region.n_ineq() {
            let a = r.region.h().row(i).transpose();
            let c = r.region.b()[i];
            // Orient so that the first nonzero coordinate is positive.
            let s = a.iter().find(|v| v.abs() > 1e-12).map_or(1.0, |v| v.signum());
            let (a, c) = (a * s, c * s);
            let key: Vec<u64> = a.iter().chain(std::iter::once(&c)).map(|v| quantize(*v)).collect();
            let id = *index.entry(key).or_insert_with(|| {
                planes.push((a.clone(), c));
                planes.len() - 1
            });
            ids.push(id);
        }
        region_planes.push(ids);
    }
    let boxes = map.regions.par_iter().map(|r| bounding_box(&r.region)).collect();
    let mut builder = TreeBuilder {
        map,
        planes,
        region_planes,
        boxes,
        cache: HashMap::new(),
    };
    let all: Vec<usize> = (0..map.regions.len()).collect();
    let (root, depth) = builder.node(all);
    SearchTree { root, depth }
}

fn quantize(v: f64) -> u64 {
    let r = (v * 1e9).round();
    if r == 0.0 {
        0
    } else {
        r.to_bits()
    }
}

struct TreeBuilder<'a> {
    map: &'a PwaSolutionMap,
    planes: Vec<(Vector, f64)>,
    region_planes: Vec<Vec<usize>>,
    boxes: Vec<Vec<(f64, f64)>>,
    cache: HashMap<(usize, usize), Side>,
}

/// Coordinate bounds of a region, infinite where unbounded.
fn bounding_box(poly: &Polyhedron) -> Vec<(f64, f64)> {
    let n = poly.dim();
    (0..n)
        .map(|i| {
            let e = Vector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 });
            let hi = match poly.maximize(&e) {
                LpOutcome::Optimal { value, .. } => value,
                _ => f64::INFINITY,
            };
            let lo = match poly.maximize(&(-e)) {
                LpOutcome::Optimal { value, .. } => -value,
                _ => f64::NEG_INFINITY,
            };
            (lo, hi)
        })
        .collect()
}

impl TreeBuilder<'_> {
    fn node(&mut self, regions: Vec<usize>) -> (TreeNode, usize) {
        if regions.len() <= MAX_LEAF_REGIONS {
            return (TreeNode::Leaf { regions }, 0);
        }
        let mut cands: Vec<usize> = regions
            .iter()
            .flat_map(|&r| self.region_planes[r].iter().cloned())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        cands.sort_unstable();
        if cands.len() > MAX_SPLIT_CANDIDATES {
            let step = cands.len() as f64 / MAX_SPLIT_CANDIDATES as f64;
            cands = (0..MAX_SPLIT_CANDIDATES)
                .map(|i| cands[(i as f64 * step) as usize])
                .collect();
        }
        // Score candidates on a strided sample of the regions.
        let stride = regions.len().div_ceil(MAX_SCORE_REGIONS);
        let sample: Vec<usize> = regions.iter().step_by(stride).cloned().collect();
        self.classify_all(cands.iter().flat_map(|&p| sample.iter().map(move |&r| (r, p))));
        let mut best: Option<(usize, usize)> = None;
        for &p in &cands {
            let (mut l, mut rr) = (0, 0);
            for &r in &sample {
                match self.cache[&(r, p)] {
                    Side::Left => l += 1,
                    Side::Right => rr += 1,
                    Side::Both => {
                        l += 1;
                        rr += 1
                    }
                }
            }
            // Straddling regions are copied to both sides, so duplication
            // costs twice as much as imbalance.
            let n = sample.len();
            let score = 2 * (l + rr - n) + l.abs_diff(rr);
            if 20 * l.max(rr) <= 17 * n && best.map_or(true, |(s, _)| score < s) {
                best = Some((score, p));
            }
        }
        let Some((_, p)) = best else {
            return (TreeNode::Leaf { regions }, 0);
        };
        self.classify_all(regions.iter().map(|&r| (r, p)));
        let left: Vec<usize> = regions
            .iter()
            .cloned()
            .filter(|&r| self.cache[&(r, p)] != Side::Right)
            .collect();
        let right: Vec<usize> = regions
            .iter()
            .cloned()
            .filter(|&r| self.cache[&(r, p)] != Side::Left)
            .collect();
        if left.len() == regions.len() || right.len() == regions.len() {
            return (TreeNode::Leaf { regions }, 0);
        }
        let (ln, ld) = self.node(left);
        let (rn, rd) = self.node(right);
        let (a, c) = &self.planes[p];
        (
            TreeNode::Split {
                normal: a.iter().cloned().collect(),
                offset: *c,
                left: Box::new(ln),
                right: Box::new(rn),
            },
            1 + ld.max(rd),
        )
    }

    fn classify_all(&mut self, pairs: impl Iterator<Item = (usize, usize)>) {
        let todo: Vec<(usize, usize)> = pairs.filter(|k| !self.cache.contains_key(k)).collect();
        let computed: Vec<((usize, usize), Side)> = todo
            .par_iter()
            .map(|&(r, p)| ((r, p), self.classify(r, p)))
            .collect();
        self.cache.extend(computed);
    }

    fn classify(&self, r: usize, p: usize) -> Side {
        let (a, c) = &self.planes[p];
        // Interval of aᵀθ over the bounding box settles most pairs.
        let (mut lo, mut hi) = (0.0, 0.0);
        for (ai, &(l, h)) in a.iter().zip(&self.boxes[r]) {
            if *ai > 0.0 {
                lo += ai * l;
                hi += ai * h;
            } else if *ai < 0.0 {
                lo += ai * h;
                hi += ai * l;
            }
        }
        if lo >= c + SIDE_TOL {
            return Side::Right;
        }
        if hi <= c - SIDE_TOL {
            return Side::Left;
        }
        let poly = &self.map.regions[r].region;
        let lower = match poly.maximize(&(-a)) {
            LpOutcome::Optimal { value, .. } => -value,
            _ => f64::NEG_INFINITY,
        };
        if lower >= c - SIDE_TOL {
            return Side::Right;
        }
        let upper = match poly.maximize(a) {
            LpOutcome::Optimal { value, .. } => value,
            _ => f64::INFINITY,
        };
        if upper <= c + SIDE_TOL {
            Side::Left
        } else {
            Side::Both
        }
    }
}

impl SearchTree {
    /// Lowest-index region containing `θ` among the leaves reached. Near a
    /// split hyperplane both children are searched.
    pub fn locate(&self, map: &PwaSolutionMap, theta: &Vector) -> Option<usize> {
        let tol = locate_tol(theta);
        let band = nearest_tol(theta);
        let mut best: Option<usize> = None;
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf { regions } => {
                    for &r in regions {
                        if best.map_or(false, |b| r >= b) {
                            break;
                        }
                        if map.regions[r].region.max_violation(theta) <= tol {
                            best = Some(r);
                            break;
                        }
                    }
                }
                TreeNode::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let v: f64 = normal.iter().zip(theta.iter()).map(|(a, t)| a * t).sum::<f64>() - offset;
                    if v <= band {
                        stack.push(left);
                    }
                    if v > -band {
                        stack.push(right);
                    }
                }
            }
        }
        best.or_else(|| map.scan(theta))
    }
}
