//! Offline certification: terminal ingredients, invariance checks and the
//! constants `σ, γ, κ, η, τ` behind the iteration bound `m̄` and the
//! suboptimality factor `α`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, IterateState};
use crate::error::{Error, Result};
use crate::linalg::{
    block_diag, generalized_max_eig, null_space, select_rows, spd_inverse, symmetrize,
    vstack, Mat, Vector,
};
use crate::lp::{LinearProgram, LpOutcome};
use crate::polytope::{Polyhedron, MAX_VERTEX_DIM};
use crate::problem::{terminal_dare, MpcProblem};
use crate::qp::{solve_stacked_exact, ExactSolution};
use crate::riccati::DareSolution;
use crate::stacked::StackedProblem;

pub const GAMMA_SAFETY: f64 = 1.2;
pub const KAPPA_SAFETY: f64 = 1.1;
pub const ETA_TAU_SAFETY: f64 = 1.2;

/// DARE of the algebraically eliminated system.
pub fn solve_dare(p: &MpcProblem) -> Result<DareSolution> {
    terminal_dare(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResult {
    /// `None` when undecided (vertex enumeration out of reach).
    pub invariant: Option<bool>,
    pub witness: Option<Vec<f64>>,
    pub method: String,
    pub checked: usize,
}

/// LP: is there `(u, z)` with `u ∈ U`, `z ∈ Z`, `Dx + Ez = 0`,
/// `Ax + Bu + Cz ∈ target`?
fn admissible_successor(p: &MpcProblem, x: &Vector, target: &Polyhedron) -> bool {
    let (nu, nz) = (p.nu(), p.nz());
    let n = nu + nz;
    let mut a_ub = Mat::zeros(0, n);
    let mut b_ub = Vector::zeros(0);
    let mut push = |rows: Mat, rhs: Vector| {
        a_ub = vstack(&a_ub, &rows);
        b_ub = crate::linalg::vcat(&b_ub, &rhs);
    };
    let mut hu = Mat::zeros(p.u_set.n_ineq(), n);
    hu.view_mut((0, 0), (p.u_set.n_ineq(), nu)).copy_from(p.u_set.h());
    push(hu, p.u_set.b().clone());
    let mut hz = Mat::zeros(p.z_set.n_ineq(), n);
    hz.view_mut((0, nu), (p.z_set.n_ineq(), nz)).copy_from(p.z_set.h());
    push(hz, p.z_set.b().clone());
    let mut bc = Mat::zeros(p.nx(), n);
    bc.view_mut((0, 0), (p.nx(), nu)).copy_from(&p.b);
    bc.view_mut((0, nu), (p.nx(), nz)).copy_from(&p.c);
    push(target.h() * &bc, target.b() - target.h() * (&p.a * x));
    let mut a_eq = Mat::zeros(p.nz(), n);
    a_eq.view_mut((0, nu), (nz, nz)).copy_from(&p.e);
    let mut b_eq = -(&p.d * x);
    let mut eqs = a_eq;
    for (set, off, dim) in [(&p.u_set, 0, nu), (&p.z_set, nu, nz)] {
        if set.h_eq().nrows() > 0 {
            let mut r = Mat::zeros(set.h_eq().nrows(), n);
            r.view_mut((0, off), (set.h_eq().nrows(), dim)).copy_from(set.h_eq());
            eqs = vstack(&eqs, &r);
            b_eq = crate::linalg::vcat(&b_eq, set.b_eq());
        }
    }
    if target.h_eq().nrows() > 0 {
        eqs = vstack(&eqs, &(target.h_eq() * &bc));
        b_eq = crate::linalg::vcat(&b_eq, &(target.b_eq() - target.h_eq() * (&p.a * x)));
    }
    let lp = LinearProgram::new(Vector::zeros(n), a_ub, b_ub).with_equalities(eqs, b_eq);
    matches!(lp.solve(), LpOutcome::Optimal { .. })
}

/// Vertex test of control invariance of `set` (one LP per vertex). Sets
/// beyond the vertex-enumeration limit are probed at `samples` random points.
pub fn check_control_invariance(
    p: &MpcProblem,
    set: &Polyhedron,
    samples: usize,
    seed: u64,
) -> Result<InvarianceResult> {
    if set.dim() <= MAX_VERTEX_DIM {
        let verts = set.vertices()?;
        for v in &verts {
            if !admissible_successor(p, v, set) {
                return Ok(InvarianceResult {
                    invariant: Some(false),
                    witness: Some(v.iter().copied().collect()),
                    method: "vertex-enumeration".into(),
                    checked: verts.len(),
                });
            }
        }
        return Ok(InvarianceResult {
            invariant: Some(true),
            witness: None,
            method: "vertex-enumeration".into(),
            checked: verts.len(),
        });
    }
    let pts = sample_states(set, samples, seed);
    for v in &pts {
        if !admissible_successor(p, v, set) {
            return Ok(InvarianceResult {
                invariant: Some(false),
                witness: Some(v.iter().copied().collect()),
                method: "sampled".into(),
                checked: pts.len(),
            });
        }
    }
    Ok(InvarianceResult {
        invariant: None,
        witness: None,
        method: "sampled".into(),
        checked: pts.len(),
    })
}

/// Largest `s ∈ [lo, 1]` (bisection) for which `s·set` passes the vertex test.
pub fn invariance_scaling(p: &MpcProblem, set: &Polyhedron, iterations: usize) -> Result<Option<f64>> {
    let ok = |s: f64| -> Result<bool> {
        Ok(check_control_invariance(p, &set.scaled(s), 0, 0)?.invariant == Some(true))
    };
    if ok(1.0)? {
        return Ok(Some(1.0));
    }
    let (mut lo, mut hi) = (1e-3, 1.0);
    if !ok(lo)? {
        return Ok(None);
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// Closed-loop matrix `A + BK + CM` with `M = −E⁻¹D`.
pub fn closed_loop_matrix(p: &MpcProblem, k: &Mat) -> Result<Mat> {
    Ok(&p.a + &p.b * k + &p.c * p.elimination_matrix()?)
}

/// Maximal positively invariant subset of `X` under `u = Kx`, including
/// the input and algebraic constraints.
pub fn maximal_invariant_set(p: &MpcProblem, k: &Mat, max_steps: usize) -> Result<Polyhedron> {
    let acl = closed_loop_matrix(p, k)?;
    let m = p.elimination_matrix()?;
    let h0 = vstack(&vstack(p.x_set.h(), &(p.u_set.h() * k)), &(p.z_set.h() * &m));
    let b0 = crate::linalg::vcat(
        &crate::linalg::vcat(p.x_set.b(), p.u_set.b()),
        p.z_set.b(),
    );
    let mut set = Polyhedron::new(h0.clone(), b0.clone())?;
    let mut power = acl.clone();
    for _ in 0..max_steps {
        let rows = &h0 * &power;
        let mut redundant = true;
        for i in 0..rows.nrows() {
            match set.maximize(&rows.row(i).transpose()) {
                LpOutcome::Optimal { value, .. } if value <= b0[i] + 1e-9 => {}
                _ => {
                    redundant = false;
                    break;
                }
            }
        }
        if redundant {
            return set.remove_redundant();
        }
        set = Polyhedron::new(vstack(set.h(), &rows), crate::linalg::vcat(set.b(), &b0))?;
        power = &acl * power;
    }
    Err(Error::NotConverged(format!(
        "invariant set recursion did not terminate in {max_steps} steps"
    )))
}

/// Replaces `X` and `X_N` by the maximal LQR-invariant subset of `X`.
pub fn with_invariant_state_set(p: &MpcProblem) -> Result<MpcProblem> {
    let dare = solve_dare(p)?;
    let set = maximal_invariant_set(p, &dare.k, 500)?;
    p.clone().with_sets(set.clone(), set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalCheck {
    /// Smallest eigenvalue of `P − ℓ_K − A_Kᵀ P A_K`.
    pub margin: f64,
    /// `Kx ∈ U` at every vertex of `X_N` (`None` when not enumerable).
    pub input_feasible: Option<bool>,
    pub worst_vertex: Option<Vec<f64>>,
}

/// Decrease of the terminal cost under `u = Kx` (with `z` eliminated).
pub fn verify_terminal_decrease(p: &MpcProblem, pm: &Mat, k: &Mat) -> Result<TerminalCheck> {
    let m = p.elimination_matrix()?;
    let acl = closed_loop_matrix(p, k)?;
    let ell = &p.q + k.transpose() * &p.r * k + m.transpose() * &p.s * &m;
    let form = symmetrize(&(pm - ell - acl.transpose() * pm * &acl));
    let margin = crate::linalg::eig_range(&form).0;
    let (mut input_feasible, mut worst_vertex) = (None, None);
    if p.xn_set.dim() <= MAX_VERTEX_DIM && p.xn_set.is_bounded() {
        let verts = p.xn_set.vertices()?;
        let mut worst = (f64::NEG_INFINITY, None);
        for v in &verts {
            let viol = p.u_set.max_violation(&(k * v));
            if viol > worst.0 {
                worst = (viol, Some(v.iter().copied().collect()));
            }
        }
        input_feasible = Some(worst.0 <= 1e-9);
        worst_vertex = worst.1;
    }
    Ok(TerminalCheck {
        margin,
        input_feasible,
        worst_vertex,
    })
}

/// Smallest `σ` with `[B C]ᵀ Q [B C] ⪯ σ·blkdiag(R, S)`.
pub fn compute_sigma(p: &MpcProblem) -> Result<f64> {
    let mut bc = Mat::zeros(p.nx(), p.nu() + p.nz());
    bc.view_mut((0, 0), (p.nx(), p.nu())).copy_from(&p.b);
    bc.view_mut((0, p.nu()), (p.nx(), p.nz())).copy_from(&p.c);
    let lhs = bc.transpose() * &p.q * &bc;
    generalized_max_eig(&lhs, &block_diag(&[&p.r, &p.s]))
}

/// Uniform rejection samples from a bounded polyhedron.
pub fn sample_states(set: &Polyhedron, count: usize, seed: u64) -> Vec<Vector> {
    let Some((lo, hi)) = set.bounding_box() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count && tries < count.saturating_mul(1000).max(1000) {
        tries += 1;
        let x = Vector::from_fn(set.dim(), |i, _| {
            if hi[i] > lo[i] {
                rng.gen_range(lo[i]..hi[i])
            } else {
                lo[i]
            }
        });
        if set.contains(&x, 0.0).unwrap_or(false) {
            out.push(x);
        }
    }
    out
}

/// Exact solutions at the probes, skipping infeasible ones.
fn solve_probes(sp: &StackedProblem, probes: &[Vector]) -> Vec<(Vector, ExactSolution)> {
    probes
        .par_iter()
        .filter_map(|x| solve_stacked_exact(sp, x).ok().map(|s| (x.clone(), s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub max_ratio: f64,
    pub max_ratio_vertices: Option<f64>,
    pub probes: usize,
    pub method: String,
}

/// `γ² ≥ (F(y*) + F*(λ*)) / x_0ᵀQx_0` over vertex and sampled probes,
/// with a safety factor on `γ`.
pub fn estimate_gamma(sp: &StackedProblem, samples: usize, seed: u64) -> Result<GammaEstimate> {
    let x_set = &sp.problem.x_set;
    let verts = if x_set.dim() <= MAX_VERTEX_DIM {
        x_set.vertices()?
    } else {
        Vec::new()
    };
    let ratio = |sols: &[(Vector, ExactSolution)]| {
        sols.iter()
            .filter_map(|(x, s)| {
                let qx = x.dot(&(&sp.problem.q * x));
                (qx > 1e-12).then(|| (sp.f(&s.y) + sp.f_conj(&s.lambda)) / qx)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let v_sols = solve_probes(sp, &verts);
    let mut probes = verts;
    probes.extend(sample_states(x_set, samples, seed));
    let sols = solve_probes(sp, &probes);
    if sols.is_empty() {
        return Err(Error::Infeasible("no feasible probe state for the gamma estimate".into()));
    }
    let max_ratio = ratio(&sols);
    let rv = ratio(&v_sols);
    Ok(GammaEstimate {
        gamma: GAMMA_SAFETY * max_ratio.max(0.0).sqrt(),
        max_ratio,
        max_ratio_vertices: rv.is_finite().then_some(rv),
        probes: sols.len(),
        method: "sampled".into(),
    })
}

/// Active rows (and stage equalities) per stage, as a hashable key.
type ActiveCombo = Vec<Vec<usize>>;

fn active_combo(sp: &StackedProblem, xi: &Vector, x0: &Vector, tol: f64) -> ActiveCombo {
    let e = sp.e_of(x0);
    (0..=sp.horizon())
        .map(|k| {
            let s = sp.slacks(k, &sp.block(xi, k).into_owned(), &e);
            (0..s.len()).filter(|&i| s[i] <= tol).collect()
        })
        .collect()
}

/// Linear part of one inner iteration when each stage keeps the given
/// active rows, acting on `(Δy, Δλ)`.
pub fn iteration_matrix(sp: &StackedProblem, combo: &ActiveCombo) -> Result<Mat> {
    let (ny, nl) = (sp.primal_dim(), sp.dual_dim());
    let a = sp.a_dense();
    let sig = sp.sigma_dense();
    let sig_inv = spd_inverse(&sig)?;
    let m_inv = spd_inverse(&(&a * &sig_inv * a.transpose()))?;
    let mut kmat = Mat::zeros(ny, ny);
    for k in 0..=sp.horizon() {
        let set = sp.stage_set(sp.kind(k));
        let rows = vstack(&select_rows(&set.ineq, &combo[k]), &set.eq);
        let h = sp.sigma(k) * 4.0;
        let nb = null_space(&rows, 1e-10);
        let kk = if nb.ncols() == 0 {
            Mat::zeros(set.dim(), set.dim())
        } else {
            let red = symmetrize(&(nb.transpose() * &h * &nb));
            -(&nb * spd_inverse(&red)? * nb.transpose())
        };
        let off = sp.y_offset(k);
        kmat.view_mut((off, off), (set.dim(), set.dim())).copy_from(&kk);
    }
    // Δr = R1 Δy + R2 Δλ.
    let r1 = &kmat * (&sig * -4.0) - Mat::identity(ny, ny);
    let r2 = &kmat * a.transpose() * 2.0;
    let p_r = Mat::identity(ny, ny) - &sig_inv * a.transpose() * &m_inv * &a;
    let d = &m_inv * &a * 2.0;
    let mut t = Mat::zeros(ny + nl, ny + nl);
    t.view_mut((0, 0), (ny, ny)).copy_from(&(&p_r * &r1));
    t.view_mut((0, ny), (ny, nl)).copy_from(&(&p_r * &r2));
    t.view_mut((ny, 0), (nl, ny)).copy_from(&(&d * &r1));
    t.view_mut((ny, ny), (nl, nl))
        .copy_from(&(Mat::identity(nl, nl) + &d * &r2));
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMatrixBounds {
    /// `max ‖Tv‖²_W / ‖v‖²_W` over `v ∈ null(𝒜) × ℝ^{n_λ}`.
    pub one_step: f64,
    /// Same maximum restricted to the range of `T`.
    pub on_range: f64,
    /// Squared spectral radius of `T`.
    pub spectral: f64,
}

/// Bounds of the iteration matrix in the metric `F(Δy) + F*(Δλ)`, taken on
/// the quotient by the neutral dual directions.
pub fn iteration_matrix_bounds(sp: &StackedProblem, t: &Mat) -> Result<IterationMatrixBounds> {
    let (ny, nl) = (sp.primal_dim(), sp.dual_dim());
    let a = sp.a_dense();
    let sig = sp.sigma_dense();
    let mm = &a * spd_inverse(&sig)? * a.transpose();
    let w = block_diag(&[&sig, &(&mm * 0.25)]);
    let na = null_space(&a, 1e-10);
    let idx = sp.neutral_duals();
    let (lam_basis, proj) = if idx.is_empty() {
        (Mat::identity(nl, nl), Mat::identity(ny + nl, ny + nl))
    } else {
        // λ directions W-orthogonal to the neutral ones, and the W-orthogonal
        // projection that removes neutral components.
        let nb = Mat::from_fn(ny + nl, idx.len(), |i, j| if i == ny + idx[j] { 1.0 } else { 0.0 });
        let gram = symmetrize(&(nb.transpose() * &w * &nb));
        let p = Mat::identity(ny + nl, ny + nl) - &nb * spd_inverse(&gram)? * nb.transpose() * &w;
        (null_space(&select_rows(&mm, &idx), 1e-10), p)
    };
    let t = &proj * t;
    let v = block_diag(&[&na, &lam_basis]);
    let ratio = |basis: &Mat| -> Result<f64> {
        let tb = &t * basis;
        generalized_max_eig(
            &(tb.transpose() * &w * &tb),
            &symmetrize(&(basis.transpose() * &w * basis)),
        )
    };
    let one_step = ratio(&v)?;
    let tv = &t * &v;
    let svd = tv.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let smax = svd.singular_values.amax().max(1e-300);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax)
        .collect();
    let on_range = if keep.is_empty() {
        0.0
    } else {
        let basis = Mat::from_fn(ny + nl, keep.len(), |i, j| u[(i, keep[j])]);
        ratio(&basis)?
    };
    // Coordinates of T on span(V): C = (VᵀWV)⁻¹ VᵀW T V.
    let gram = symmetrize(&(v.transpose() * &w * &v));
    let c = spd_inverse(&gram)? * v.transpose() * &w * &tv;
    let rho = spectral_radius(&c);
    Ok(IterationMatrixBounds {
        one_step,
        on_range,
        spectral: rho * rho,
    })
}

/// Spectral radius from a capped Schur iteration, or from Gelfand's formula
/// `‖C^k‖^{1/k}` with `k = 2^40` by repeated squaring if it does not converge.
fn spectral_radius(c: &Mat) -> f64 {
    if let Some(schur) = nalgebra::Schur::try_new(c.clone(), f64::EPSILON, 10_000) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }
    let mut m = c.clone();
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..40 {
        let n = m.norm();
        if n == 0.0 {
            return 0.0;
        }
        m /= n;
        log_scale = 2.0 * (log_scale + n.ln());
        m = &m * &m;
        k *= 2.0;
    }
    ((log_scale + m.norm().ln()) / k).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub method: String,
    /// Largest observed `V_{m+1}/V_m`, `m ≥ 2`, before the safety factor.
    pub empirical_max_ratio: f64,
    pub empirical: f64,
    pub combos: usize,
    pub matrix_one_step: Option<f64>,
    pub matrix_on_range: Option<f64>,
    pub matrix_spectral: Option<f64>,
    pub runs: usize,
}

/// `V_m = F(y^m − y*) + F*(λ^m − λ*)` along a trace.
pub fn lyapunov_values(sp: &StackedProblem, trace: &[IterateState], exact: &ExactSolution) -> Vec<f64> {
    trace
        .iter()
        .map(|s| sp.f(&(&s.y - &exact.y)) + sp.f_conj_reduced(&(&s.lambda - &exact.lambda)))
        .collect()
}

/// Ratio floor: values below this fraction of the largest `V` are treated
/// as converged and excluded.
const KAPPA_FLOOR: f64 = 1e-16;

/// Smallest reported `κ`. Rates below this are roundoff in the ratio and
/// eigenvalue estimates.
pub const KAPPA_RESOLUTION: f64 = 1e-10;

/// Empirical and iteration-matrix contraction estimates from `runs` starts
/// of `iterations` inner iterations each. Odd runs start from a random
/// point with `F(y¹) + F*(λ¹) = γ²‖x_0‖²_Q`, the largest initialization the
/// rescaling step lets through; even runs start from zero.
pub fn estimate_kappa(
    controller: &Controller,
    gamma: f64,
    runs: usize,
    iterations: usize,
    seed: u64,
    max_combos: usize,
) -> Result<KappaEstimate> {
    let sp = &controller.sp;
    let probes = sample_states(&sp.problem.x_set, runs, seed);
    let results: Vec<Result<Option<(f64, BTreeSet<ActiveCombo>)>>> = probes
        .par_iter()
        .enumerate()
        .map(|(j, x0)| {
            let Ok(exact) = solve_stacked_exact(sp, x0) else {
                return Ok(None);
            };
            let mut init = IterateState::zeros(sp);
            if j % 2 == 1 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x9e37_79b9));
                init.y = Vector::from_fn(sp.primal_dim(), |_, _| rng.gen_range(-1.0..1.0));
                init.lambda = Vector::from_fn(sp.dual_dim(), |_, _| rng.gen_range(-1.0..1.0));
                let f1 = sp.f(&init.y) + sp.f_conj(&init.lambda);
                let target = gamma * gamma * x0.dot(&(&sp.problem.q * x0));
                let s = if f1 > 0.0 { (target / f1).sqrt() } else { 0.0 };
                init.y *= s;
                init.lambda *= s;
            }
            let mut c = controller.clone();
            let (_, trace) = c.iterate(x0, init, iterations)?;
            let v = lyapunov_values(sp, &trace, &exact);
            let vmax = v.iter().cloned().fold(0.0, f64::max);
            let mut worst: f64 = 0.0;
            // Trace index i holds iterate m = i + 1.
            for i in 1..v.len() - 1 {
                if v[i] > KAPPA_FLOOR * vmax && v[i] > 1e-24 {
                    worst = worst.max(v[i + 1] / v[i]);
                }
            }
            let combos = trace[1..trace.len() - 1]
                .iter()
                .map(|s| active_combo(sp, &s.xi, x0, 1e-9))
                .collect();
            Ok(Some((worst, combos)))
        })
        .collect();
    let mut max_ratio: f64 = 0.0;
    let mut combos = BTreeSet::new();
    let mut used = 0;
    for r in results {
        if let Some((w, c)) = r? {
            used += 1;
            max_ratio = max_ratio.max(w);
            combos.extend(c);
        }
    }
    if used == 0 {
        return Err(Error::Infeasible("no feasible start for the kappa estimate".into()));
    }
    // The margin shrinks the observed gap to one rather than scaling the
    // rate, which keeps rates near one below one.
    let empirical = if max_ratio < 1.0 {
        1.0 - (1.0 - max_ratio) / KAPPA_SAFETY
    } else {
        max_ratio
    };
    let (mut one, mut range, mut spec) = (None, None, None);
    if combos.len() <= max_combos {
        let list: Vec<&ActiveCombo> = combos.iter().collect();
        let bounds: Vec<IterationMatrixBounds> = list
            .par_iter()
            .map(|c| iteration_matrix_bounds(sp, &iteration_matrix(sp, c)?))
            .collect::<Result<_>>()?;
        let mx = |f: fn(&IterationMatrixBounds) -> f64| bounds.iter().map(f).fold(0.0, f64::max);
        one = Some(mx(|b| b.one_step));
        range = Some(mx(|b| b.on_range));
        spec = Some(mx(|b| b.spectral));
    }
    // The one-step bound contracts every step while the active set stays
    // fixed; it counts only when below one.
    let (kappa, method) = match one {
        Some(o) if o < 1.0 && o > empirical => (o, "iteration-matrix".to_string()),
        _ => (empirical, "sampled".to_string()),
    };
    let (kappa, method) = if kappa < KAPPA_RESOLUTION {
        (KAPPA_RESOLUTION, format!("{method}, resolution floor"))
    } else {
        (kappa, method)
    };
    Ok(KappaEstimate {
        kappa,
        method,
        empirical_max_ratio: max_ratio,
        empirical,
        combos: combos.len(),
        matrix_one_step: one,
        matrix_on_range: range,
        matrix_spectral: spec,
        runs: used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaTauEstimate {
    pub eta: f64,
    pub tau: f64,
    pub pairs: usize,
    pub holdout_pairs: usize,
    /// Largest relative violation on the holdout pairs (≤ 0 means none).
    pub holdout_violation: f64,
    pub method: String,
}

/// Pairs `(a, b)`: sampled states with small and large perturbations.
fn value_pairs(sp: &StackedProblem, count: usize, seed: u64) -> Vec<(f64, f64)> {
    let set = &sp.problem.x_set;
    let anchors = sample_states(set, count, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let partners: Vec<Vector> = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let scale = [1e-3, 1e-2, 1e-1, 1.0][i % 4];
            let d = Vector::from_fn(a.len(), |_, _| rng.gen_range(-1.0..1.0) * scale);
            a + d
        })
        .collect();
    let q = &sp.problem.q;
    anchors
        .par_iter()
        .zip(partners.par_iter())
        .filter_map(|(a, b)| {
            if !set.contains(b, 0.0).ok()? {
                return None;
            }
            let ja = solve_stacked_exact(sp, a).ok()?.value;
            let jb = solve_stacked_exact(sp, b).ok()?.value;
            let d = a - b;
            Some((d.dot(&(q * &d)).sqrt(), (ja - jb).abs()))
        })
        .collect()
}

/// Fits `|J(a) − J(b)| ≤ η‖a−b‖_Q + (τ/2)‖a−b‖²_Q` by the LP
/// `min η + τ`, then applies the safety factor and checks fresh pairs.
pub fn estimate_eta_tau(sp: &StackedProblem, pairs: usize, seed: u64) -> Result<EtaTauEstimate> {
    let fit = value_pairs(sp, pairs, seed);
    if fit.is_empty() {
        return Err(Error::Infeasible("no feasible state pairs for eta/tau".into()));
    }
    let rows: Vec<&(f64, f64)> = fit.iter().filter(|(d, _)| *d > 0.0).collect();
    let mut a_ub = Mat::zeros(rows.len() + 2, 2);
    let mut b_ub = Vector::zeros(rows.len() + 2);
    for (i, (d, dj)) in rows.iter().enumerate() {
        a_ub[(i, 0)] = -d;
        a_ub[(i, 1)] = -0.5 * d * d;
        b_ub[i] = -dj;
    }
    a_ub[(rows.len(), 0)] = -1.0;
    a_ub[(rows.len() + 1, 1)] = -1.0;
    let lp = LinearProgram::new(Vector::from_vec(vec![1.0, 1.0]), a_ub, b_ub);
    let (x, _) = lp
        .solve()
        .optimal()
        .map(|(x, v)| (x.clone(), v))
        .ok_or_else(|| Error::Numerical("eta/tau fit LP failed".into()))?;
    let (eta, tau) = (x[0].max(0.0) * ETA_TAU_SAFETY, x[1].max(0.0) * ETA_TAU_SAFETY);
    let holdout = value_pairs(sp, pairs, seed.wrapping_add(1));
    let holdout_violation = holdout
        .iter()
        .map(|(d, dj)| (dj - (eta * d + 0.5 * tau * d * d)) / dj.max(1e-12))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(EtaTauEstimate {
        eta,
        tau,
        pairs: fit.len(),
        holdout_pairs: holdout.len(),
        holdout_violation,
        method: "sampled".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationBound {
    /// Bracket `ηγ√σ(1+√κ) + τσγ²(1+√κ)²/2`.
    pub bracket: f64,
    /// `2·log(bracket)/log(1/κ)`.
    pub mbar_real: f64,
    /// `⌈mbar_real⌉`; any `m̄` strictly above `mbar_real` certifies.
    pub mbar_bound: i64,
    pub mbar: usize,
    pub alpha: f64,
    pub valid: bool,
}

/// Iteration bound and suboptimality factor for the requested `m̄`.
pub fn certify(sigma: f64, gamma: f64, kappa: f64, eta: f64, tau: f64, mbar: usize) -> Result<IterationBound> {
    if !(kappa < 1.0) || kappa < 0.0 {
        return Err(Error::Certificate(format!(
            "contraction rate kappa = {kappa} is not below 1"
        )));
    }
    for (name, v) in [("sigma", sigma), ("gamma", gamma), ("eta", eta), ("tau", tau)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be finite and nonnegative")));
        }
    }
    let sk = 1.0 + kappa.sqrt();
    let bracket = eta * gamma * sigma.sqrt() * sk + 0.5 * tau * sigma * gamma * gamma * sk * sk;
    let mbar_real = if kappa == 0.0 {
        f64::NEG_INFINITY
    } else {
        2.0 * bracket.ln() / (1.0 / kappa).ln()
    };
    let mbar_bound = if mbar_real.is_finite() {
        mbar_real.ceil() as i64
    } else {
        i64::MIN
    };
    let alpha = 1.0 - bracket * kappa.powf(mbar as f64 / 2.0);
    Ok(IterationBound {
        bracket,
        mbar_real,
        mbar_bound,
        mbar,
        alpha,
        valid: (mbar as f64) > mbar_real && alpha > 0.0,
    })
}

/// Smallest `m̄ ≥ 1` that certifies.
pub fn certified_mbar(b: &IterationBound) -> usize {
    if b.mbar_real < 1.0 {
        1
    } else {
        (b.mbar_real.floor() as usize) + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyOptions {
    pub gamma_samples: usize,
    pub kappa_runs: usize,
    pub kappa_iterations: usize,
    pub kappa_max_combos: usize,
    pub eta_tau_pairs: usize,
    pub invariance_samples: usize,
    pub seed: u64,
    /// Requested `m̄`; defaults to the smallest certifying value.
    pub mbar: Option<usize>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            gamma_samples: 200,
            kappa_runs: 40,
            kappa_iterations: 120,
            kappa_max_combos: 200,
            eta_tau_pairs: 400,
            invariance_samples: 500,
            seed: 7,
            mbar: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub problem_hash: String,
    pub sigma: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub eta: f64,
    pub tau: f64,
    pub bracket: f64,
    pub mbar_real: f64,
    pub mbar_bound: i64,
    pub mbar: usize,
    pub alpha: f64,
    pub valid: bool,
    pub terminal: TerminalCheck,
    pub invariance: InvarianceResult,
    pub gamma_detail: GammaEstimate,
    pub kappa_detail: KappaEstimate,
    pub eta_tau_detail: EtaTauEstimate,
    pub methods: std::collections::BTreeMap<String, String>,
    pub safety_factors: std::collections::BTreeMap<String, f64>,
    pub messages: Vec<String>,
}

impl CertificateReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn bound(&self) -> IterationBound {
        IterationBound {
            bracket: self.bracket,
            mbar_real: self.mbar_real,
            mbar_bound: self.mbar_bound,
            mbar: self.mbar,
            alpha: self.alpha,
            valid: self.valid,
        }
    }

    /// `α` for another `m̄` with the same constants.
    pub fn alpha_for(&self, mbar: usize) -> f64 {
        1.0 - self.bracket * self.kappa.powf(mbar as f64 / 2.0)
    }

    /// Row table for terminals.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let rows: Vec<(&str, String, &str)> = vec![
            ("sigma", format!("{:.6e}", self.sigma), "exact"),
            ("gamma", format!("{:.6e}", self.gamma), &self.gamma_detail.method),
            ("kappa", format!("{:.6e}", self.kappa), &self.kappa_detail.method),
            ("eta", format!("{:.6e}", self.eta), &self.eta_tau_detail.method),
            ("tau", format!("{:.6e}", self.tau), &self.eta_tau_detail.method),
            ("mbar_bound", self.mbar_bound.to_string(), "derived"),
            ("mbar", self.mbar.to_string(), "requested"),
            ("alpha", format!("{:.6e}", self.alpha), "derived"),
        ];
        for (k, v, m) in rows {
            s.push_str(&format!("{k:<12}{v:>16}  {m}\n"));
        }
        s.push_str(&format!(
            "certificate: {}\n",
            if self.valid { "valid" } else { "invalid" }
        ));
        s
    }
}

/// Full pipeline on the controller's problem.
pub fn certify_problem(controller: &Controller, opts: &CertifyOptions) -> Result<CertificateReport> {
    let sp = &controller.sp;
    let p = &sp.problem;
    let mut messages = Vec::new();
    let dare = solve_dare(p)?;
    let terminal = verify_terminal_decrease(p, &p.p, &dare.k)?;
    if terminal.margin < -1e-6 * p.p.amax() {
        messages.push(format!("terminal decrease fails with margin {:.3e}", terminal.margin));
    }
    if terminal.input_feasible == Some(false) {
        messages.push("terminal feedback violates input bounds on X_N".into());
    }
    let invariance = check_control_invariance(p, &p.xn_set, opts.invariance_samples, opts.seed)?;
    if invariance.invariant == Some(false) {
        messages.push("terminal set is not control invariant".into());
    }
    let sigma = compute_sigma(p)?;
    let g = estimate_gamma(sp, opts.gamma_samples, opts.seed)?;
    let k = estimate_kappa(
        controller,
        g.gamma,
        opts.kappa_runs,
        opts.kappa_iterations,
        opts.seed,
        opts.kappa_max_combos,
    )?;
    let et = estimate_eta_tau(sp, opts.eta_tau_pairs, opts.seed)?;
    let probe = certify(sigma, g.gamma, k.kappa, et.eta, et.tau, 1)?;
    let mbar = opts.mbar.unwrap_or_else(|| certified_mbar(&probe));
    let b = certify(sigma, g.gamma, k.kappa, et.eta, et.tau, mbar)?;
    let methods = [
        ("sigma", "exact"),
        ("gamma", g.method.as_str()),
        ("kappa", k.method.as_str()),
        ("eta", et.method.as_str()),
        ("tau", et.method.as_str()),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    let safety_factors = [
        ("gamma", GAMMA_SAFETY),
        ("kappa", KAPPA_SAFETY),
        ("eta", ETA_TAU_SAFETY),
        ("tau", ETA_TAU_SAFETY),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b))
    .collect();
    Ok(CertificateReport {
        problem_hash: p.content_hash(),
        sigma,
        gamma: g.gamma,
        kappa: k.kappa,
        eta: et.eta,
        tau: et.tau,
        bracket: b.bracket,
        mbar_real: b.mbar_real,
        mbar_bound: b.mbar_bound,
        mbar,
        alpha: b.alpha,
        valid: b.valid && messages.is_empty(),
        terminal,
        invariance,
        gamma_detail: g,
        kappa_detail: k,
        eta_tau_detail: et,
        methods,
        safety_factors,
        messages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::Polyhedron;
    use crate::problem::BlockStructure;

    fn scalar_problem(a: f64, b: f64, x: (f64, f64), u: (f64, f64)) -> MpcProblem {
        let m = |v: f64| Mat::from_element(1, 1, v);
        let xs = Polyhedron::from_box(&[x.0], &[x.1]).unwrap();
        MpcProblem {
            a: m(a),
            b: m(b),
            c: m(0.0),
            d: m(0.0),
            e: m(1.0),
            q: m(1.0),
            r: m(1.0),
            s: m(1.0),
            p: m(1.0),
            horizon: 2,
            x_set: xs.clone(),
            u_set: Polyhedron::from_box(&[u.0], &[u.1]).unwrap(),
            z_set: Polyhedron::whole_space(1),
            xn_set: xs,
            blocks: None::<BlockStructure>,
        }
    }

    #[test]
    fn zero_dynamics_box_is_invariant() {
        let p = scalar_problem(0.0, 1.0, (-1.0, 1.0), (-0.5, 0.5));
        let r = check_control_invariance(&p, &p.x_set, 0, 0).unwrap();
        assert_eq!(r.invariant, Some(true));
    }

    #[test]
    fn unstable_scalar_has_witness_at_one() {
        let p = scalar_problem(2.0, 1.0, (-1.0, 1.0), (-0.5, 0.5));
        let r = check_control_invariance(&p, &p.x_set, 0, 0).unwrap();
        assert_eq!(r.invariant, Some(false));
        let w = r.witness.unwrap()[0];
        assert!((w.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_finds_invariant_scaling() {
        // x⁺ = 2x + u with |u| ≤ 0.5 keeps [−s, s] iff 2s − 0.5 ≤ s.
        let p = scalar_problem(2.0, 1.0, (-1.0, 1.0), (-0.5, 0.5));
        let s = invariance_scaling(&p, &p.x_set, 40).unwrap().unwrap();
        assert!((s - 0.5).abs() < 1e-6);
    }

    #[test]
    fn sigma_of_identity_blocks() {
        let mut p = scalar_problem(1.0, 1.0, (-1.0, 1.0), (-1.0, 1.0));
        p.c = Mat::identity(1, 1);
        assert!((compute_sigma(&p).unwrap() - 2.0).abs() < 1e-12);
        p.q *= 4.0;
        assert!((compute_sigma(&p).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn dare_pair_has_zero_margin_and_halving_breaks_it() {
        let p = scalar_problem(1.2, 1.0, (-1.0, 1.0), (-1.0, 1.0));
        let d = solve_dare(&p).unwrap();
        assert!(verify_terminal_decrease(&p, &d.p, &d.k).unwrap().margin >= -1e-9);
        assert!(verify_terminal_decrease(&p, &(&d.p * 0.5), &d.k).unwrap().margin < 0.0);
    }

    #[test]
    fn bound_arithmetic() {
        // Bracket c = 4 with κ = 1/4: choose σ = 1, τ = 0, γ = 1 and η(1+√κ) = 4.
        let b = certify(1.0, 1.0, 0.25, 4.0 / 1.5, 0.0, 3).unwrap();
        assert!((b.bracket - 4.0).abs() < 1e-12);
        assert_eq!(b.mbar_bound, 2);
        assert!((b.alpha - 0.5).abs() < 1e-12);
        assert!(b.valid);
        let small = certify(1.0, 0.1, 0.25, 0.1, 0.0, 1).unwrap();
        assert!(small.mbar_bound <= 0 && small.valid);
        assert!(certify(1.0, 1.0, 1.0, 1.0, 1.0, 3).is_err());
    }
}
