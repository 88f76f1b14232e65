//! Stage solution maps for the stacked problem and their on-disk store.
//!
//! Each stage QP is split into independent components (variables linked by
//! the Hessian or by a shared constraint row). Components with identical
//! parametric QPs share one enumerated map, so a chain of identical
//! subsystems stores each template once.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupled::CoupledFactorization;
use crate::error::{Error, Result};
use crate::linalg::{select_cols, select_entries, select_rows, Mat, Vector};
use crate::mpqp::{enumerate_with, EnumerationOptions, ParametricQp, PwaSolutionMap};
use crate::qp::{solve_qp_dense, DenseQp};
use crate::stacked::{StackedProblem, StageKind, StageSet};

pub const STORE_VERSION: u32 = 1;

/// One independent block of a stage QP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Stage variables (and `θ` coordinates) owned by the component.
    pub vars: Vec<usize>,
    /// Coordinates of `e = (A x_0, D x_0)` entering its constraints.
    pub e_idx: Vec<usize>,
    pub template: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLayout {
    pub dim: usize,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub hash: String,
    pub qp: ParametricQp,
    pub map: PwaSolutionMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMaps {
    pub templates: Vec<Template>,
    pub initial: StageLayout,
    pub interior: StageLayout,
    pub terminal: StageLayout,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub enumeration: EnumerationOptions,
    pub search_trees: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            enumeration: EnumerationOptions::default(),
            search_trees: true,
        }
    }
}

/// Union-find over variable indices.
fn components_of(sigma: &Mat, set: &StageSet) -> Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let n = set.dim();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut j = i;
        while p[j] != r {
            let nx = p[j];
            p[j] = r;
            j = nx;
        }
        r
    }
    let union = |p: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(p, a), find(p, b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            p[hi] = lo;
        }
    };
    for i in 0..n {
        for j in 0..n {
            if i != j && sigma[(i, j)] != 0.0 {
                union(&mut parent, i, j);
            }
        }
    }
    for m in [&set.ineq, &set.eq] {
        for r in 0..m.nrows() {
            let support: Vec<usize> = (0..n).filter(|&j| m[(r, j)] != 0.0).collect();
            for w in support.windows(2) {
                union(&mut parent, w[0], w[1]);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let row_owner = |m: &Mat, r: usize, p: &mut Vec<usize>| -> Option<usize> {
        (0..n).find(|&j| m[(r, j)] != 0.0).map(|j| find(p, j))
    };
    let mut out = Vec::new();
    for (root, vars) in groups {
        let ineq: Vec<usize> = (0..set.ineq.nrows())
            .filter(|&r| row_owner(&set.ineq, r, &mut parent) == Some(root))
            .collect();
        let eq: Vec<usize> = (0..set.eq.nrows())
            .filter(|&r| row_owner(&set.eq, r, &mut parent) == Some(root))
            .collect();
        out.push((vars, ineq, eq));
    }
    out
}

/// Parametric QP of one component: parameter `(θ_c, e_c)`.
fn component_qp(
    sigma: &Mat,
    set: &StageSet,
    vars: &[usize],
    ineq: &[usize],
    eq: &[usize],
) -> (ParametricQp, Vec<usize>) {
    let nc = vars.len();
    let ne = set.param_dim();
    let used = |m: &Mat, rows: &[usize]| -> Vec<usize> {
        (0..ne)
            .filter(|&j| rows.iter().any(|&r| m[(r, j)] != 0.0))
            .collect()
    };
    let mut e_idx = used(&set.rhs_e, ineq);
    for j in used(&set.eq_e, eq) {
        if !e_idx.contains(&j) {
            e_idx.push(j);
        }
    }
    e_idx.sort_unstable();
    let p = nc + e_idx.len();
    let sig_c = select_cols(&select_rows(sigma, vars), vars);
    let mut f = Mat::zeros(nc, p);
    f.view_mut((0, 0), (nc, nc)).fill_with_identity();
    let g = select_cols(&select_rows(&set.ineq, ineq), vars);
    let w = select_entries(&set.rhs, ineq);
    let mut s = Mat::zeros(ineq.len(), p);
    if !e_idx.is_empty() {
        s.view_mut((0, nc), (ineq.len(), e_idx.len()))
            .copy_from(&select_cols(&select_rows(&set.rhs_e, ineq), &e_idx));
    }
    let a_eq = select_cols(&select_rows(&set.eq, eq), vars);
    let b_eq = select_entries(&set.eq_rhs, eq);
    let mut s_eq = Mat::zeros(eq.len(), p);
    if !e_idx.is_empty() {
        s_eq.view_mut((0, nc), (eq.len(), e_idx.len()))
            .copy_from(&select_cols(&select_rows(&set.eq_e, eq), &e_idx));
    }
    (
        ParametricQp {
            h: sig_c * 4.0,
            f,
            g,
            w,
            s,
            a_eq,
            b_eq,
            s_eq,
        },
        e_idx,
    )
}

fn qp_hash(qp: &ParametricQp) -> String {
    let text = serde_json::to_string(qp).expect("parametric QP serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl StageMaps {
    /// Decomposes the three stage templates and enumerates each distinct
    /// component QP once.
    pub fn build(sp: &StackedProblem, opts: &BuildOptions) -> Result<Self> {
        let mut pending: Vec<(String, ParametricQp)> = Vec::new();
        let mut layout_of = |kind: StageKind, sigma: &Mat| -> StageLayout {
            let set = sp.stage_set(kind);
            let mut comps = Vec::new();
            for (vars, ineq, eq) in components_of(sigma, set) {
                let (qp, e_idx) = component_qp(sigma, set, &vars, &ineq, &eq);
                let hash = qp_hash(&qp);
                let template = match pending.iter().position(|(h, _)| *h == hash) {
                    Some(i) => i,
                    None => {
                        pending.push((hash, qp));
                        pending.len() - 1
                    }
                };
                comps.push(Component {
                    vars,
                    e_idx,
                    template,
                });
            }
            StageLayout {
                dim: set.dim(),
                components: comps,
            }
        };
        let n = sp.horizon();
        let initial = layout_of(StageKind::Initial, sp.sigma(0));
        let interior = if n > 1 {
            layout_of(StageKind::Interior, sp.sigma(1))
        } else {
            StageLayout {
                dim: sp.stage_set(StageKind::Interior).dim(),
                components: Vec::new(),
            }
        };
        let terminal = layout_of(StageKind::Terminal, sp.sigma(n));
        let mut templates = Vec::with_capacity(pending.len());
        for (hash, qp) in pending {
            let (map, stats) = enumerate_with(&qp, &opts.enumeration)?;
            log::debug!(
                "template {}: {} regions from {} candidates",
                &hash[..12],
                map.regions.len(),
                stats.candidates
            );
            let map = if opts.search_trees { map.with_tree() } else { map };
            templates.push(Template { hash, qp, map });
        }
        Ok(StageMaps {
            templates,
            initial,
            interior,
            terminal,
        })
    }

    pub fn layout(&self, kind: StageKind) -> &StageLayout {
        match kind {
            StageKind::Initial => &self.initial,
            StageKind::Interior => &self.interior,
            StageKind::Terminal => &self.terminal,
        }
    }

    /// Component parameter `(θ_c, e_c)`.
    fn component_param(c: &Component, theta: &Vector, e: &Vector) -> Vector {
        let mut p = Vector::zeros(c.vars.len() + c.e_idx.len());
        for (i, &v) in c.vars.iter().enumerate() {
            p[i] = theta[v];
        }
        for (i, &j) in c.e_idx.iter().enumerate() {
            p[c.vars.len() + i] = e[j];
        }
        p
    }

    /// Stage solution `ξ*_k(θ_k)`; `e` is only read for the initial stage.
    pub fn evaluate(&self, stage: usize, kind: StageKind, theta: &Vector, e: &Vector) -> Result<Vector> {
        let layout = self.layout(kind);
        let mut xi = Vector::zeros(layout.dim);
        for c in &layout.components {
            let p = Self::component_param(c, theta, e);
            let sol = self.templates[c.template].map.evaluate(&p).map_err(|err| match err {
                Error::MapMiss { violation, .. } => Error::MapMiss { stage, violation },
                other => other,
            })?;
            for (i, &v) in c.vars.iter().enumerate() {
                xi[v] = sol[i];
            }
        }
        Ok(xi)
    }

    /// Active rows per component template at `θ` (for diagnostics).
    pub fn region_indices(&self, kind: StageKind, theta: &Vector, e: &Vector) -> Vec<Option<usize>> {
        self.layout(kind)
            .components
            .iter()
            .map(|c| {
                let p = Self::component_param(c, theta, e);
                self.templates[c.template].map.locate(&p).ok()
            })
            .collect()
    }

    pub fn region_count(&self) -> usize {
        self.templates.iter().map(|t| t.map.regions.len()).sum()
    }

    pub fn storage_floats(&self) -> usize {
        self.templates.iter().map(|t| t.map.storage_floats()).sum()
    }

    /// Region count and storage of the templates used by one stage kind.
    pub fn kind_stats(&self, kind: StageKind) -> (usize, usize) {
        let mut ids: Vec<usize> = self.layout(kind).components.iter().map(|c| c.template).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.iter().fold((0, 0), |(r, s), &i| {
            let m = &self.templates[i].map;
            (r + m.regions.len(), s + m.storage_floats())
        })
    }
}

/// Stage QP `min 2ξᵀΣ_kξ + θᵀξ` over `𝕐_k` as a dense QP.
pub fn stage_qp(sp: &StackedProblem, k: usize, theta: &Vector, e: &Vector) -> DenseQp {
    let set = sp.stage_set(sp.kind(k));
    let (mut rhs, mut eq_rhs) = (set.rhs.clone(), set.eq_rhs.clone());
    if k == 0 && set.param_dim() > 0 {
        rhs += &set.rhs_e * e;
        eq_rhs += &set.eq_e * e;
    }
    DenseQp::new(sp.sigma(k) * 4.0, theta.clone())
        .with_eq(set.eq.clone(), eq_rhs)
        .with_ineq(set.ineq.clone(), rhs)
}

/// Stage solution from the dense solver instead of the maps.
pub fn solve_stage_dense(sp: &StackedProblem, k: usize, theta: &Vector, e: &Vector) -> Result<Vector> {
    Ok(solve_qp_dense(&stage_qp(sp, k, theta, e))?.x)
}

/// Versioned, content-hashed bundle of maps and factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapStore {
    pub version: u32,
    pub problem_hash: String,
    pub content_hash: String,
    pub region_count: usize,
    pub maps: StageMaps,
    pub factorization: CoupledFactorization,
}

impl MapStore {
    pub fn build(sp: &StackedProblem, opts: &BuildOptions) -> Result<Self> {
        let maps = StageMaps::build(sp, opts)?;
        let factorization = CoupledFactorization::factorize(sp)?;
        let mut store = MapStore {
            version: STORE_VERSION,
            problem_hash: sp.problem.content_hash(),
            content_hash: String::new(),
            region_count: maps.region_count(),
            maps,
            factorization,
        };
        store.content_hash = store.compute_hash();
        Ok(store)
    }

    fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.version.to_le_bytes());
        h.update(self.problem_hash.as_bytes());
        h.update(serde_json::to_vec(&self.maps).expect("maps serialize"));
        h.update(serde_json::to_vec(&self.factorization).expect("factorization serializes"));
        hex::encode(h.finalize())
    }

    pub fn verify(&self) -> Result<()> {
        if self.version != STORE_VERSION {
            return Err(Error::InvalidInput(format!(
                "map store version {} is not supported",
                self.version
            )));
        }
        if self.compute_hash() != self.content_hash {
            return Err(Error::InvalidInput("map store content hash mismatch".into()));
        }
        Ok(())
    }

    pub fn matches(&self, sp: &StackedProblem) -> bool {
        self.problem_hash == sp.problem.content_hash()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let store: MapStore = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        store.verify()?;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};

    #[test]
    fn chain_components_are_per_subsystem() {
        let p = build_spring_damper_benchmark(&InterconnectedSpec::chain(3), &Weights::default(), 3)
            .unwrap();
        let sp = StackedProblem::new(&p).unwrap();
        let set = sp.stage_set(StageKind::Interior);
        let comps = components_of(sp.sigma(1), set);
        // Unactuated trolleys split into (x, z) and a free input.
        assert_eq!(comps.len(), 5);
        // With x fixed, every algebraic coordinate separates except the
        // one sharing a row with the actuated input.
        let init = components_of(sp.sigma(0), sp.stage_set(StageKind::Initial));
        assert_eq!(init.len(), 8);
    }
}
