//! Online real-time iteration: rescaled warm start, `m̄` rounds of parallel
//! stage-map evaluation plus one coupled tracking solve, control extraction
//! and shift.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupled::{CoupledFactorization, TrackingWorkspace};
use crate::error::{Error, Result};
use crate::linalg::{serde_vec, Vector};
use crate::stacked::StackedProblem;
use crate::store::{solve_stage_dense, MapStore, StageMaps};

pub const ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub mbar: usize,
    pub gamma: f64,
    pub parallel: bool,
    /// Solve a stage QP densely when its parameter misses every region.
    pub oracle_fallback: bool,
    pub record_iterates: bool,
    pub active_tol: f64,
    /// Shift `(y^{m̄+1}, λ^{m̄+1})` instead of `(y^{m̄}, λ^{m̄})`.
    pub shift_latest: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            mbar: 10,
            gamma: 10.0,
            parallel: true,
            oracle_fallback: false,
            record_iterates: false,
            active_tol: ACTIVE_TOL,
            shift_latest: false,
        }
    }
}

impl ControllerConfig {
    pub fn check(&self) -> Result<()> {
        if self.mbar == 0 {
            return Err(Error::InvalidInput("mbar must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Primal blocks `y^m`, coupling duals `λ^m` and the stage solutions `ξ`
/// computed from them (empty before the first stage solve).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    #[serde(with = "serde_vec")]
    pub y: Vector,
    #[serde(with = "serde_vec")]
    pub lambda: Vector,
    #[serde(with = "serde_vec")]
    pub xi: Vector,
    pub m: usize,
}

impl IterateState {
    pub fn zeros(sp: &StackedProblem) -> Self {
        IterateState {
            y: Vector::zeros(sp.primal_dim()),
            lambda: Vector::zeros(sp.dual_dim()),
            xi: Vector::zeros(0),
            m: 1,
        }
    }

    pub fn new(y: Vector, lambda: Vector) -> Self {
        IterateState {
            y,
            lambda,
            xi: Vector::zeros(0),
            m: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub x0: Vec<f64>,
    pub f1: f64,
    pub rescaled: bool,
    pub scale: f64,
    /// `‖𝒜y − b(x_0)‖∞` after each coupled solve.
    pub residuals: Vec<f64>,
    /// Active inequality rows per stage at `ξ^{m̄}`.
    pub active: Vec<usize>,
    pub n_active: usize,
    pub u0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub fallbacks: usize,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub iterates: Vec<IterateState>,
}

/// How the stage QPs are solved.
#[derive(Debug, Clone, Copy)]
pub enum StageSolver<'a> {
    Maps { maps: &'a StageMaps, fallback: bool },
    Dense,
}

/// `F*(λ)`.
pub fn conjugate_value(sp: &StackedProblem, lambda: &Vector) -> f64 {
    sp.f_conj(lambda)
}

/// Warm-start rescaling. Returns `f¹` and the applied factor, if any.
pub fn rescale_initialization(
    sp: &StackedProblem,
    state: &mut IterateState,
    x0: &Vector,
    gamma: f64,
) -> (f64, Option<f64>) {
    let f1 = sp.f(&state.y) + sp.f_conj(&state.lambda);
    let target = gamma * gamma * x0.dot(&(&sp.problem.q * x0));
    if f1 > 0.0 && f1 >= target {
        let s = (target / f1).sqrt();
        state.y *= s;
        state.lambda *= s;
        (f1, Some(s))
    } else {
        (f1, None)
    }
}

/// Stage-QP parameters `θ_0, …, θ_N`.
pub fn compute_subproblem_parameters(sp: &StackedProblem, state: &IterateState) -> Vec<Vector> {
    let theta = sp.stage_parameters(&state.y, &state.lambda);
    (0..=sp.horizon())
        .map(|k| sp.block(&theta, k).into_owned())
        .collect()
}

fn solve_stage(
    sp: &StackedProblem,
    solver: StageSolver<'_>,
    k: usize,
    theta: &Vector,
    e: &Vector,
) -> Result<(Vector, bool)> {
    match solver {
        StageSolver::Dense => Ok((solve_stage_dense(sp, k, theta, e)?, false)),
        StageSolver::Maps { maps, fallback } => match maps.evaluate(k, sp.kind(k), theta, e) {
            Ok(xi) => Ok((xi, false)),
            Err(Error::MapMiss { stage, violation }) if fallback => {
                log::warn!("stage {stage} map miss ({violation:.2e}); using dense solve");
                Ok((solve_stage_dense(sp, k, theta, e)?, true))
            }
            Err(err) => Err(err),
        },
    }
}

/// Stage QPs for all stages; `ξ` stacked.
pub fn stage_solutions(
    sp: &StackedProblem,
    solver: StageSolver<'_>,
    state: &IterateState,
    x0: &Vector,
    parallel: bool,
) -> Result<(Vector, usize)> {
    let thetas = compute_subproblem_parameters(sp, state);
    let e = sp.e_of(x0);
    let run = |k: usize| solve_stage(sp, solver, k, &thetas[k], &e);
    let parts: Vec<Result<(Vector, bool)>> = if parallel {
        (0..thetas.len()).into_par_iter().map(run).collect()
    } else {
        (0..thetas.len()).map(run).collect()
    };
    let mut xi = Vector::zeros(sp.primal_dim());
    let mut fallbacks = 0;
    for (k, part) in parts.into_iter().enumerate() {
        let (xk, fb) = part?;
        xi.rows_mut(sp.y_offset(k), sp.y_dim(k)).copy_from(&xk);
        fallbacks += fb as usize;
    }
    Ok((xi, fallbacks))
}

/// One full `m`-step (2a' then 2b). Returns the coupling residual and the
/// number of dense fallbacks.
#[allow(clippy::too_many_arguments)]
pub fn inner_iteration(
    sp: &StackedProblem,
    solver: StageSolver<'_>,
    fact: &CoupledFactorization,
    state: &mut IterateState,
    x0: &Vector,
    ws: &mut TrackingWorkspace,
    parallel: bool,
) -> Result<(f64, usize)> {
    let (xi, fallbacks) = stage_solutions(sp, solver, state, x0, parallel)?;
    let r = &xi * 2.0 - &state.y;
    let sol = fact.solve_tracking(sp, &r, x0, ws)?;
    state.lambda += &sol.delta;
    state.y = sol.y;
    state.xi = xi;
    state.m += 1;
    let residual = (sp.a_mul(&state.y) - sp.b_of(x0)).amax();
    Ok((residual, fallbacks))
}

/// Shifted warm start from the given iterate.
pub fn shift(sp: &StackedProblem, y: &Vector, lambda: &Vector) -> IterateState {
    let n = sp.horizon();
    let (nx, nu) = (sp.nx(), sp.nu());
    let mut out = IterateState::zeros(sp);
    if n >= 2 {
        // y_0 ← (u, z) of y_1; y_k ← y_{k+1}; y_{N−1} ← (x_N, 0, 0).
        let y1 = sp.block(y, 1);
        out.y
            .rows_mut(0, sp.y_dim(0))
            .copy_from(&y1.rows(nx, sp.y_dim(0)));
        for k in 1..n - 1 {
            out.y
                .rows_mut(sp.y_offset(k), sp.y_dim(k))
                .copy_from(&sp.block(y, k + 1));
        }
        out.y
            .rows_mut(sp.y_offset(n - 1), nx)
            .copy_from(&sp.block(y, n));
        // λ_0 ← state rows of λ_1; λ_k ← λ_{k+1}.
        let l0 = sp.l_dim(0);
        out.lambda
            .rows_mut(0, l0)
            .copy_from(&sp.dual_block(lambda, 1).rows(0, l0));
        for k in 1..n - 1 {
            out.lambda
                .rows_mut(sp.l_offset(k), sp.l_dim(k))
                .copy_from(&sp.dual_block(lambda, k + 1));
        }
    }
    debug_assert!(nu <= sp.y_dim(0));
    out
}

/// Real-time controller with owned maps and factorization.
#[derive(Debug, Clone)]
pub struct Controller {
    pub sp: StackedProblem,
    pub maps: Option<StageMaps>,
    pub fact: CoupledFactorization,
    pub config: ControllerConfig,
    pub state: IterateState,
    ws: TrackingWorkspace,
}

impl Controller {
    pub fn new(sp: StackedProblem, store: MapStore, config: ControllerConfig) -> Result<Self> {
        config.check()?;
        if !store.matches(&sp) {
            return Err(Error::InvalidInput(
                "map store was built for a different problem".into(),
            ));
        }
        let state = IterateState::zeros(&sp);
        let ws = TrackingWorkspace::new(&sp);
        Ok(Controller {
            maps: Some(store.maps),
            fact: store.factorization,
            sp,
            config,
            state,
            ws,
        })
    }

    /// Controller whose stage QPs are solved online by the dense solver.
    pub fn with_dense_stages(sp: StackedProblem, config: ControllerConfig) -> Result<Self> {
        config.check()?;
        let fact = CoupledFactorization::factorize(&sp)?;
        let state = IterateState::zeros(&sp);
        let ws = TrackingWorkspace::new(&sp);
        Ok(Controller {
            sp,
            maps: None,
            fact,
            config,
            state,
            ws,
        })
    }

    pub fn solver(&self) -> StageSolver<'_> {
        match &self.maps {
            Some(maps) => StageSolver::Maps {
                maps,
                fallback: self.config.oracle_fallback,
            },
            None => StageSolver::Dense,
        }
    }

    pub fn reset(&mut self) {
        self.state = IterateState::zeros(&self.sp);
    }

    /// Runs `count` inner iterations from `state` without rescaling or
    /// shifting. The returned trace holds `(y^m, λ^m, ξ^m)` for each `m`
    /// followed by the final `(y, λ)`.
    pub fn iterate(
        &mut self,
        x0: &Vector,
        mut state: IterateState,
        count: usize,
    ) -> Result<(IterateState, Vec<IterateState>)> {
        self.sp.check_state(x0)?;
        let mut trace = Vec::with_capacity(count + 1);
        let solver = match &self.maps {
            Some(maps) => StageSolver::Maps {
                maps,
                fallback: self.config.oracle_fallback,
            },
            None => StageSolver::Dense,
        };
        for _ in 0..count {
            let before = state.clone();
            inner_iteration(
                &self.sp,
                solver,
                &self.fact,
                &mut state,
                x0,
                &mut self.ws,
                self.config.parallel,
            )?;
            trace.push(IterateState {
                xi: state.xi.clone(),
                ..before
            });
        }
        trace.push(state.clone());
        Ok((state, trace))
    }

    /// Steps 1 to 4 for the measured state `x0`; returns `u_0`.
    pub fn control_step(&mut self, x0: &Vector) -> Result<(Vector, StepDiagnostics)> {
        let start = Instant::now();
        self.sp.check_state(x0)?;
        if !self.sp.problem.x_set.contains(x0, 1e-9)? {
            return Err(Error::Infeasible("measured state lies outside the state set".into()));
        }
        let cfg = self.config;
        let mut state = std::mem::replace(&mut self.state, IterateState::zeros(&self.sp));
        state.m = 1;
        let (f1, scale) = rescale_initialization(&self.sp, &mut state, x0, cfg.gamma);
        let solver = match &self.maps {
            Some(maps) => StageSolver::Maps {
                maps,
                fallback: cfg.oracle_fallback,
            },
            None => StageSolver::Dense,
        };
        let mut diag = StepDiagnostics {
            x0: x0.iter().copied().collect(),
            f1,
            rescaled: scale.is_some(),
            scale: scale.unwrap_or(1.0),
            ..Default::default()
        };
        let mut prev = (state.y.clone(), state.lambda.clone());
        for _ in 0..cfg.mbar {
            prev = (state.y.clone(), state.lambda.clone());
            let before = cfg.record_iterates.then(|| state.clone());
            let (res, fb) = inner_iteration(
                &self.sp,
                solver,
                &self.fact,
                &mut state,
                x0,
                &mut self.ws,
                cfg.parallel,
            )?;
            diag.residuals.push(res);
            diag.fallbacks += fb;
            if let Some(b) = before {
                diag.iterates.push(IterateState {
                    xi: state.xi.clone(),
                    ..b
                });
            }
        }
        if cfg.record_iterates {
            diag.iterates.push(state.clone());
        }
        let xi0 = self.sp.block(&state.xi, 0).into_owned();
        let u0 = xi0.rows(0, self.sp.nu()).into_owned();
        let e = self.sp.e_of(x0);
        diag.active = (0..=self.sp.horizon())
            .map(|k| {
                let s = self
                    .sp
                    .slacks(k, &self.sp.block(&state.xi, k).into_owned(), &e);
                s.iter().filter(|&&v| v <= cfg.active_tol).count()
            })
            .collect();
        diag.n_active = diag.active.iter().sum();
        diag.u0 = u0.iter().copied().collect();
        diag.xi0 = xi0.iter().copied().collect();
        self.state = if cfg.shift_latest {
            shift(&self.sp, &state.y, &state.lambda)
        } else {
            shift(&self.sp, &prev.0, &prev.1)
        };
        diag.wall_time_s = start.elapsed().as_secs_f64();
        Ok((u0, diag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};

    fn sp(i: usize, n: usize) -> StackedProblem {
        let p = build_spring_damper_benchmark(&InterconnectedSpec::chain(i), &Weights::default(), n)
            .unwrap();
        StackedProblem::new(&p).unwrap()
    }

    #[test]
    fn conjugate_vanishes_at_zero() {
        let s = sp(1, 3);
        assert_eq!(conjugate_value(&s, &Vector::zeros(s.dual_dim())), 0.0);
    }

    #[test]
    fn zero_state_rescales_to_zero() {
        let s = sp(1, 3);
        let mut st = IterateState::new(
            Vector::from_element(s.primal_dim(), 0.3),
            Vector::from_element(s.dual_dim(), -0.2),
        );
        let (_, f) = rescale_initialization(&s, &mut st, &Vector::zeros(2), 5.0);
        assert_eq!(f, Some(0.0));
        assert_eq!(st.y.amax(), 0.0);
        assert_eq!(st.lambda.amax(), 0.0);
    }

    #[test]
    fn quarter_ratio_halves() {
        let s = sp(1, 2);
        let x0 = Vector::from_vec(vec![0.2, -0.1]);
        let y = Vector::from_element(s.primal_dim(), 0.1);
        let lambda = Vector::from_element(s.dual_dim(), 0.05);
        let f1 = s.f(&y) + s.f_conj(&lambda);
        let qx = x0.dot(&(&s.problem.q * &x0));
        let gamma = (f1 / (4.0 * qx)).sqrt();
        let mut st = IterateState::new(y.clone(), lambda.clone());
        rescale_initialization(&s, &mut st, &x0, gamma);
        assert!((&st.y - &y * 0.5).amax() < 1e-14);
        assert!((&st.lambda - &lambda * 0.5).amax() < 1e-14);
    }

    #[test]
    fn small_f1_is_untouched() {
        let s = sp(1, 2);
        let y = Vector::from_element(s.primal_dim(), 0.01);
        let mut st = IterateState::new(y.clone(), Vector::zeros(s.dual_dim()));
        let (_, f) = rescale_initialization(&s, &mut st, &Vector::from_vec(vec![1.0, 0.0]), 10.0);
        assert!(f.is_none());
        assert_eq!(st.y, y);
    }

    #[test]
    fn parameter_count_and_zero() {
        let s = sp(2, 4);
        let th = compute_subproblem_parameters(&s, &IterateState::zeros(&s));
        assert_eq!(th.len(), 5);
        assert!(th.iter().all(|t| t.amax() == 0.0));
    }

    #[test]
    fn origin_gives_zero_input() {
        let s = sp(1, 3);
        let mut c = Controller::with_dense_stages(s, ControllerConfig::default()).unwrap();
        let (u, d) = c.control_step(&Vector::zeros(2)).unwrap();
        assert_eq!(u.amax(), 0.0);
        assert_eq!(d.residuals.len(), 10);
    }

    #[test]
    fn horizon_one_shift_is_zero() {
        let s = sp(1, 1);
        let st = shift(
            &s,
            &Vector::from_element(s.primal_dim(), 1.0),
            &Vector::from_element(s.dual_dim(), 1.0),
        );
        assert_eq!(st.y.amax(), 0.0);
        assert_eq!(st.lambda.amax(), 0.0);
    }
}
