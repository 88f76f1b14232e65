//! Quick invariant suites on a small benchmark instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{lyapunov_values, sample_states, with_invariant_state_set};
use crate::controller::{Controller, ControllerConfig, IterateState};
use crate::error::Result;
use crate::linalg::{Mat, Vector};
use crate::mpqp::{enumerate_critical_regions, ParametricQp};
use crate::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};
use crate::qp::{solve_qp_dense, solve_stacked_exact, DenseQp};
use crate::stacked::StackedProblem;
use crate::store::{solve_stage_dense, BuildOptions, MapStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

fn suite(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteResult {
        name: name.into(),
        passed,
        detail,
    }
}

/// Scalar map `min 2ξ² + θξ, −2 ≤ ξ ≤ 0.5`.
fn scalar_suite() -> Result<(bool, String)> {
    let pqp = ParametricQp {
        h: Mat::from_element(1, 1, 4.0),
        f: Mat::from_element(1, 1, 1.0),
        g: Mat::from_column_slice(2, 1, &[1.0, -1.0]),
        w: Vector::from_vec(vec![0.5, 2.0]),
        s: Mat::zeros(2, 1),
        a_eq: Mat::zeros(0, 1),
        b_eq: Vector::zeros(0),
        s_eq: Mat::zeros(0, 1),
    };
    let map = enumerate_critical_regions(&pqp)?;
    let mut worst: f64 = 0.0;
    for t in [-10.0, -2.5, -1.0, 0.0, 3.0, 7.9, 8.1, 20.0] {
        let th = Vector::from_element(1, t);
        let exact = (-t / 4.0).clamp(-2.0, 0.5);
        worst = worst.max((map.evaluate(&th)?[0] - exact).abs());
    }
    Ok((
        map.regions.len() == 3 && worst < 1e-12,
        format!("{} regions, max error {worst:.2e}", map.regions.len()),
    ))
}

pub fn run_selftest(seed: u64) -> Result<SelftestReport> {
    let base = build_spring_damper_benchmark(&InterconnectedSpec::chain(1), &Weights::default(), 3)?;
    let p = with_invariant_state_set(&base)?;
    let sp = StackedProblem::new(&p)?;
    let store = MapStore::build(&sp, &BuildOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = sample_states(&p.x_set, 10, seed);
    let mut suites = vec![suite("scalar-mpqp", scalar_suite)];

    suites.push(suite("stage-maps-vs-dense", || {
        let mut worst: f64 = 0.0;
        for x0 in &probes {
            let e = sp.e_of(x0);
            for k in 0..=sp.horizon() {
                let th = Vector::from_fn(sp.y_dim(k), |_, _| rng.gen_range(-20.0..20.0));
                let a = store.maps.evaluate(k, sp.kind(k), &th, &e)?;
                let b = solve_stage_dense(&sp, k, &th, &e)?;
                worst = worst.max((a - b).amax());
            }
        }
        Ok((worst <= 1e-7, format!("max deviation {worst:.2e}")))
    }));

    suites.push(suite("coupled-vs-dense-kkt", || {
        let a = sp.a_dense();
        let h = sp.sigma_dense() * 2.0;
        let y_ref = Vector::from_fn(sp.primal_dim(), |_, _| rng.gen_range(-1.0..1.0));
        let x0 = &probes[0];
        let qp = DenseQp::new(h.clone(), -(&h * &y_ref)).with_eq(a, sp.b_of(x0));
        let dense = solve_qp_dense(&qp)?;
        let mut ws = crate::coupled::TrackingWorkspace::new(&sp);
        let sol = store.factorization.solve_tracking(&sp, &y_ref, x0, &mut ws)?;
        let err = (&sol.y - &dense.x).amax();
        Ok((err <= 1e-9, format!("primal deviation {err:.2e}")))
    }));

    suites.push(suite("conjugate", || {
        let l = Vector::from_fn(sp.dual_dim(), |_, _| rng.gen_range(-1.0..1.0));
        let w = sp.at_mul(&l);
        let y = sp.sigma_inv_mul(&w) * 0.5;
        let direct = w.dot(&y) - sp.f(&y);
        let err = (direct - sp.f_conj(&l)).abs();
        Ok((
            err <= 1e-8 * direct.abs().max(1.0) && sp.f_conj(&Vector::zeros(sp.dual_dim())) == 0.0,
            format!("deviation {err:.2e}"),
        ))
    }));

    suites.push(suite("contraction", || {
        let mut c = Controller::new(sp.clone(), store.clone(), ControllerConfig::default())?;
        let mut worst: f64 = 0.0;
        for x0 in &probes {
            let ex = solve_stacked_exact(&sp, x0)?;
            let (_, trace) = c.iterate(x0, IterateState::zeros(&sp), 15)?;
            let v = lyapunov_values(&sp, &trace, &ex);
            for i in 1..v.len() - 1 {
                if v[i] > 1e-20 {
                    worst = worst.max(v[i + 1] / v[i]);
                }
            }
        }
        Ok((worst < 1.0, format!("max ratio {worst:.4}")))
    }));

    suites.push(suite("fixed-point", || {
        let mut c = Controller::new(sp.clone(), store.clone(), ControllerConfig::default())?;
        let x0 = &probes[1];
        let ex = solve_stacked_exact(&sp, x0)?;
        let (out, _) = c.iterate(x0, IterateState::new(ex.y.clone(), ex.lambda.clone()), 1)?;
        let err = (&out.y - &ex.y).amax().max((&out.lambda - &ex.lambda).amax());
        Ok((err <= 1e-7, format!("drift {err:.2e}")))
    }));

    Ok(SelftestReport { suites })
}
