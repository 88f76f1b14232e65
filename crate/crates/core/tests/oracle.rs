use proptest::prelude::*;

use pempc::certify::sample_states;
use pempc::problem::{build_spring_damper_benchmark, InterconnectedSpec, MpcProblem, Weights};
use pempc::qp::{solve_qp_dense, solve_qp_enumerate, solve_stacked_exact, stacked_qp};
use pempc::{DenseQp, Error, Mat, StackedProblem, Vector};

fn chain(i_bar: usize, n: usize) -> MpcProblem {
    build_spring_damper_benchmark(&InterconnectedSpec::chain(i_bar), &Weights::default(), n).unwrap()
}

fn feasible(sp: &StackedProblem, count: usize, seed: u64) -> Vec<Vector> {
    sample_states(&sp.problem.x_set, count * 10, seed)
        .into_iter()
        .filter(|x| solve_stacked_exact(sp, x).is_ok())
        .take(count)
        .collect()
}

#[test]
fn kkt_conditions_hold_at_random_feasible_states() {
    let sp = StackedProblem::new(&chain(1, 5)).unwrap();
    let states = feasible(&sp, 200, 3);
    assert_eq!(states.len(), 200);
    for x0 in &states {
        let qp = stacked_qp(&sp, x0).unwrap();
        let sol = solve_qp_dense(&qp).unwrap();
        let r = qp.kkt_residuals(&sol.x, &sol.eq_duals, &sol.ineq_duals);
        assert!(r.stationarity <= 1e-8 && r.primal <= 1e-8, "{r:?}");
        assert!(r.dual <= 1e-9 && r.complementarity <= 1e-8, "{r:?}");
        let ex = solve_stacked_exact(&sp, x0).unwrap();
        assert!(ex.value >= x0.dot(&(&sp.problem.q * x0)) - 1e-12);
    }
}

#[test]
fn origin_is_the_unconstrained_optimum() {
    let sp = StackedProblem::new(&chain(2, 4)).unwrap();
    let ex = solve_stacked_exact(&sp, &Vector::zeros(4)).unwrap();
    assert!(ex.y.amax() <= 1e-12 && ex.lambda.amax() <= 1e-12 && ex.value.abs() <= 1e-12);
}

#[test]
fn pinned_value_function() {
    let sp = StackedProblem::new(&chain(1, 5)).unwrap();
    let j = solve_stacked_exact(&sp, &Vector::from_vec(vec![0.5, 0.0])).unwrap().value;
    assert!((j - 30.735824407784122).abs() <= 1e-9 * j, "J = {j:.17e}");
    // The spring pulls the velocity below its bound within five steps.
    let far = solve_stacked_exact(&sp, &Vector::from_vec(vec![1.0, 0.0]));
    assert!(matches!(far, Err(Error::Infeasible(_))));
}

#[test]
fn value_function_is_continuous_along_segments() {
    let sp = StackedProblem::new(&chain(1, 5)).unwrap();
    let states = feasible(&sp, 20, 5);
    for pair in states.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let steps = 64;
        let mut prev = solve_stacked_exact(&sp, a).unwrap().value;
        let mut worst: f64 = 0.0;
        for i in 1..=steps {
            let x = a + (b - a) * (i as f64 / steps as f64);
            let j = solve_stacked_exact(&sp, &x).unwrap().value;
            worst = worst.max((j - prev).abs());
            prev = j;
        }
        // A jump would survive refinement; a continuous J shrinks with the step.
        let d = (b - a).norm();
        assert!(worst <= 400.0 * d / steps as f64 + 1e-9, "jump {worst} over length {d}");
    }
}

#[test]
fn optimizer_is_affine_within_one_active_set() {
    let sp = StackedProblem::new(&chain(1, 5)).unwrap();
    let states = feasible(&sp, 200, 9);
    let mut checked = 0;
    for a in &states {
        let ea = solve_stacked_exact(&sp, a).unwrap();
        let b = a + Vector::from_vec(vec![1e-3, -1e-3]);
        let Ok(eb) = solve_stacked_exact(&sp, &b) else { continue };
        let mid = (a + &b) / 2.0;
        let em = solve_stacked_exact(&sp, &mid).unwrap();
        let same = |x: &Vector, y: &Vector| {
            let qa = solve_qp_dense(&stacked_qp(&sp, x).unwrap()).unwrap().active_set;
            let qb = solve_qp_dense(&stacked_qp(&sp, y).unwrap()).unwrap().active_set;
            qa == qb
        };
        if same(a, &b) && same(a, &mid) {
            let avg = (&ea.y + &eb.y) / 2.0;
            assert!((em.y - avg).amax() <= 1e-8);
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} segments stayed in one region");
}

fn small_qp() -> impl Strategy<Value = DenseQp> {
    (2usize..5, 1usize..6, any::<u64>()).prop_map(|(n, m, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let l = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &l * l.transpose() + Mat::identity(n, n);
        let g = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let a = Mat::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = Vector::from_fn(m, |_, _| rng.gen_range(0.1..1.0));
        DenseQp::new(h, g).with_ineq(a, b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn active_set_solver_matches_enumeration(qp in small_qp()) {
        let fast = solve_qp_dense(&qp).unwrap();
        let brute = solve_qp_enumerate(&qp).unwrap();
        prop_assert!((fast.x - brute.x).amax() <= 1e-8);
    }
}
