use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pempc::certify::{lyapunov_values, sample_states};
use pempc::controller::compute_subproblem_parameters;
use pempc::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};
use pempc::qp::{solve_qp_dense, solve_stacked_exact, stacked_qp, ExactSolution};
use pempc::store::{solve_stage_dense, BuildOptions};
use pempc::{
    Controller, ControllerConfig, CoupledFactorization, DenseQp, IterateState, MapStore, Mat, StackedProblem,
    TrackingWorkspace, Vector,
};

/// Ī = 1, N = 5 controller with maps, built once.
fn controller() -> &'static Controller {
    static CELL: OnceLock<Controller> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = build_spring_damper_benchmark(&InterconnectedSpec::chain(1), &Weights::default(), 5).unwrap();
        let sp = StackedProblem::new(&p).unwrap();
        let store = MapStore::build(&sp, &BuildOptions::default()).unwrap();
        Controller::new(sp, store, ControllerConfig::default()).unwrap()
    })
}

fn feasible(sp: &StackedProblem, count: usize, seed: u64) -> Vec<(Vector, ExactSolution)> {
    sample_states(&sp.problem.x_set, count * 10, seed)
        .into_iter()
        .filter_map(|x| solve_stacked_exact(sp, &x).ok().map(|e| (x, e)))
        .take(count)
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

#[test]
fn tracking_solve_matches_dense_kkt() {
    let sp = &controller().sp;
    let fact = CoupledFactorization::factorize(sp).unwrap();
    let mut ws = TrackingWorkspace::new(sp);
    let (ny, nl) = (sp.primal_dim(), sp.dual_dim());
    let a = sp.a_dense();
    let two_sigma = sp.sigma_dense() * 2.0;
    let mut kkt = Mat::zeros(ny + nl, ny + nl);
    kkt.view_mut((0, 0), (ny, ny)).copy_from(&two_sigma);
    kkt.view_mut((0, ny), (ny, nl)).copy_from(&a.transpose());
    kkt.view_mut((ny, 0), (nl, ny)).copy_from(&a);
    let lu = kkt.lu();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let r = random_vec(&mut rng, ny, 2.0);
        let x0 = random_vec(&mut rng, sp.nx(), 1.0);
        let sol = fact.solve_tracking(sp, &r, &x0, &mut ws).unwrap();
        let mut rhs = Vector::zeros(ny + nl);
        rhs.rows_mut(0, ny).copy_from(&(&two_sigma * &r));
        rhs.rows_mut(ny, nl).copy_from(&sp.b_of(&x0));
        let dense = lu.solve(&rhs).unwrap();
        let tol = |v: &Vector| 1e-9 * v.amax().max(1.0);
        assert!((&sol.y - dense.rows(0, ny)).amax() <= tol(&sol.y));
        assert!((&sol.delta - dense.rows(ny, nl)).amax() <= tol(&sol.delta));
        // Any two references give solutions on the same affine subspace.
        let other = fact.solve_tracking(sp, &random_vec(&mut rng, ny, 2.0), &x0, &mut ws).unwrap();
        assert!(sp.a_mul(&(&sol.y - &other.y)).amax() <= 1e-10);
        // A feasible reference is its own projection.
        let again = fact.solve_tracking(sp, &sol.y, &x0, &mut ws).unwrap();
        assert!((&again.y - &sol.y).amax() <= 1e-10 && again.delta.amax() <= tol(&sol.delta));
    }
}

#[test]
fn split_stage_qps_solve_the_joint_step() {
    let sp = &controller().sp;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = Vector::from_vec(vec![0.4, -0.2]);
    let joint = stacked_qp(sp, &x0).unwrap();
    let e = sp.e_of(&x0);
    for _ in 0..50 {
        let y = random_vec(&mut rng, sp.primal_dim(), 1.0);
        let lambda = random_vec(&mut rng, sp.dual_dim(), 5.0);
        // Linear term G_kᵀλ_{k−1} − H_kᵀλ_k assembled block by block.
        let mut c = Vector::zeros(sp.primal_dim());
        for k in 0..=sp.horizon() {
            let mut ck = Vector::zeros(sp.y_dim(k));
            if k > 0 {
                ck += sp.g_block(k).transpose() * sp.dual_block(&lambda, k - 1);
            }
            if k < sp.horizon() {
                ck -= sp.h_block(k).transpose() * sp.dual_block(&lambda, k);
            }
            c.rows_mut(sp.y_offset(k), sp.y_dim(k)).copy_from(&ck);
        }
        // F(ξ) + cᵀξ + F(ξ − y) over 𝕐, without the coupling rows.
        let sigma = sp.sigma_dense();
        let nl = sp.dual_dim();
        let n_stage_eq = joint.a_eq.nrows() - nl;
        let qp = DenseQp::new(&sigma * 4.0, c - &sigma * &y * 2.0)
            .with_eq(
                joint.a_eq.rows(nl, n_stage_eq).into_owned(),
                joint.b_eq.rows(nl, n_stage_eq).into_owned(),
            )
            .with_ineq(joint.a_in.clone(), joint.b_in.clone());
        let direct = solve_qp_dense(&qp).unwrap().x;
        let state = IterateState::new(y, lambda);
        let thetas = compute_subproblem_parameters(sp, &state);
        assert_eq!(thetas.len(), sp.horizon() + 1);
        for (k, theta) in thetas.iter().enumerate() {
            let xi = solve_stage_dense(sp, k, theta, &e).unwrap();
            assert!((xi - sp.block(&direct, k)).amax() <= 1e-8, "stage {k}");
        }
    }
}

#[test]
fn exact_primal_dual_pair_is_a_fixed_point() {
    let c = controller();
    for (x0, ex) in feasible(&c.sp, 20, 3) {
        let mut cc = c.clone();
        let start = IterateState::new(ex.y.clone(), ex.lambda.clone());
        let (end, trace) = cc.iterate(&x0, start, 1).unwrap();
        assert!((&trace[0].xi - &ex.y).amax() <= 1e-7);
        assert!((&end.y - &ex.y).amax() <= 1e-7);
        assert!((&end.lambda - &ex.lambda).amax() <= 1e-7);
    }
}

#[test]
fn origin_stays_at_origin() {
    let mut c = controller().clone();
    let x0 = Vector::zeros(2);
    let (end, _) = c.iterate(&x0, IterateState::zeros(&c.sp), 5).unwrap();
    assert_eq!(end.y.amax(), 0.0);
    assert_eq!(end.lambda.amax(), 0.0);
    let (u0, _) = c.control_step(&x0).unwrap();
    assert_eq!(u0.amax(), 0.0);
}

#[test]
fn lyapunov_decrease_and_descent_inequality() {
    let c = controller();
    let sp = &c.sp;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (j, (x0, ex)) in feasible(sp, 20, 5).into_iter().enumerate() {
        let init = if j % 2 == 0 {
            IterateState::zeros(sp)
        } else {
            IterateState::new(random_vec(&mut rng, sp.primal_dim(), 1.0), random_vec(&mut rng, sp.dual_dim(), 1.0))
        };
        let mut cc = c.clone();
        let (_, trace) = cc.iterate(&x0, init, 15).unwrap();
        let v = lyapunov_values(sp, &trace, &ex);
        let scale = v[1].max(1.0);
        for m in 1..15 {
            assert!(v[m + 1] <= v[m] + 1e-12 * scale, "V increased at m = {}", m + 1);
            // −2F(ξ^m − y*) ≥ ½ΔF + ½ΔF* with ΔF + ΔF* = V_{m+1} − V_m.
            let lhs = -2.0 * sp.f(&(&trace[m].xi - &ex.y));
            assert!(lhs >= 0.5 * (v[m + 1] - v[m]) - 1e-10 * scale);
        }
    }
}

#[test]
fn stage_order_does_not_change_the_input() {
    let c = controller();
    for (x0, _) in feasible(&c.sp, 10, 6) {
        let mut par = c.clone();
        let mut seq = c.clone();
        seq.config.parallel = false;
        for _ in 0..3 {
            let (a, _) = par.control_step(&x0).unwrap();
            let (b, _) = seq.control_step(&x0).unwrap();
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }
}

fn input_error(c: &Controller, x0: &Vector, ex: &ExactSolution, mbar: usize) -> f64 {
    let mut cc = c.clone();
    cc.config.mbar = mbar;
    cc.reset();
    let (u0, d) = cc.control_step(x0).unwrap();
    let xi0 = Vector::from_vec(d.xi0.clone());
    assert!(c.sp.problem.u_set.contains(&u0, 1e-9).unwrap());
    assert!(c.sp.stage_polyhedron(0, x0).unwrap().contains(&xi0, 1e-9).unwrap());
    (u0 - ex.y.rows(0, c.sp.nu())).amax()
}

#[test]
fn fifty_iterations_reach_the_exact_input_without_active_constraints() {
    let c = controller();
    let x0 = Vector::from_vec(vec![0.5, 0.0]);
    let ex = solve_stacked_exact(&c.sp, &x0).unwrap();
    assert!(input_error(c, &x0, &ex, 50) <= 1e-6);
    let mut checked = 0;
    for (x0, ex) in feasible(&c.sp, 40, 7) {
        if ex.active_per_stage.iter().sum::<usize>() == 0 {
            assert!(input_error(c, &x0, &ex, 50) <= 1e-6);
            checked += 1;
        }
    }
    assert!(checked >= 5, "{checked} unconstrained starts");
}

#[test]
fn long_runs_reach_the_exact_input() {
    // With several active rows the contraction can be slow; 6000 cycles cover
    // the slowest sampled start.
    let c = controller();
    for (x0, ex) in feasible(&c.sp, 20, 7) {
        let err = input_error(c, &x0, &ex, 6000);
        assert!(err <= 1e-6, "|u0 - u0*| = {err:.2e} with {:?} active", ex.active_per_stage);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_step_keeps_the_first_stage_feasible(
        x in prop::collection::vec(-0.5f64..1.0, 2),
        mbar in 1usize..6,
    ) {
        let c = controller();
        let x0 = Vector::from_vec(x);
        prop_assume!(solve_stacked_exact(&c.sp, &x0).is_ok());
        let mut cc = c.clone();
        cc.config.mbar = mbar;
        cc.reset();
        let (u0, d) = cc.control_step(&x0).unwrap();
        prop_assert!(c.sp.problem.u_set.contains(&u0, 1e-9).unwrap());
        let xi0 = Vector::from_vec(d.xi0);
        prop_assert!(c.sp.stage_polyhedron(0, &x0).unwrap().contains(&xi0, 1e-9).unwrap());
    }
}
