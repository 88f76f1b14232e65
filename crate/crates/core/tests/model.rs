use approx::assert_relative_eq;
use proptest::prelude::*;

use pempc::problem::{build_spring_damper_benchmark, InterconnectedSpec, MpcProblem, Weights};
use pempc::simulate::step_plant;
use pempc::{Mat, StackedProblem, Vector};

fn chain(i_bar: usize, n: usize) -> MpcProblem {
    build_spring_damper_benchmark(&InterconnectedSpec::chain(i_bar), &Weights::default(), n).unwrap()
}

fn vec_strategy(len: usize, scale: f64) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-scale..scale, len).prop_map(Vector::from_vec)
}

#[test]
fn chain_sparsity_pattern() {
    let p = chain(3, 5);
    let nb = 2;
    for bi in 0..3 {
        for bj in 0..3 {
            let block = |m: &Mat, cols: usize| m.view((bi * nb, bj * cols), (nb, cols)).amax();
            if bi != bj {
                assert_eq!(block(&p.a, nb), 0.0, "A block ({bi},{bj})");
                assert_eq!(p.b.view((bi * nb, bj), (nb, 1)).amax(), 0.0);
            }
            if bi.abs_diff(bj) != 1 {
                assert_eq!(block(&p.d, nb), 0.0, "D block ({bi},{bj})");
            }
        }
    }
    assert_eq!(p.e, -Mat::identity(6, 6));
    assert!(p.d.amax() > 0.0);
}

#[test]
fn horizon_ten_dimension() {
    let sp = StackedProblem::new(&chain(1, 10)).unwrap();
    // (nu + nz) + (N - 1)(nx + nu + nz) + nx
    assert_eq!(sp.primal_dim(), 3 + 9 * 5 + 2);
}

#[test]
fn stacked_cost_matches_dense_quadratic_form() {
    let sp = StackedProblem::new(&chain(2, 4)).unwrap();
    let sigma = sp.sigma_dense();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    runner
        .run(&vec_strategy(sp.primal_dim(), 3.0), |y| {
            let dense = y.dot(&(&sigma * &y));
            prop_assert!((sp.f(&y) - dense).abs() <= 1e-12 * dense.max(1.0));
            Ok(())
        })
        .unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn eliminated_dynamics_match_algebraic_recursion(
        x in vec_strategy(4, 2.0),
        u in vec_strategy(2, 2.0),
    ) {
        let p = chain(2, 3);
        let z = p.algebraic_state(&x).unwrap();
        prop_assert!((&p.d * &x + &p.e * &z).amax() <= 1e-12);
        let xi0 = pempc::linalg::vcat(&u, &z);
        let direct = step_plant(&p, &x, &xi0).unwrap();
        let (a_el, _) = p.eliminated().unwrap();
        let reduced = &a_el * &x + &p.b * &u;
        prop_assert!((direct - reduced).amax() <= 1e-14);
    }

    #[test]
    fn json_round_trip_preserves_problem(i_bar in 1usize..4, n in 1usize..8) {
        let p = chain(i_bar, n);
        let q = MpcProblem::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(p.content_hash(), q.content_hash());
        prop_assert_eq!(p, q);
    }

    #[test]
    fn coupling_residual_vanishes_on_simulated_trajectories(
        x0 in vec_strategy(2, 1.0),
        us in prop::collection::vec(-2.0f64..0.5, 5),
    ) {
        let p = chain(1, 5);
        let sp = StackedProblem::new(&p).unwrap();
        let mut y = Vector::zeros(sp.primal_dim());
        let mut x = x0.clone();
        for (k, &uk) in us.iter().enumerate() {
            let u = Vector::from_element(1, uk);
            let z = p.algebraic_state(&x).unwrap();
            let block = if k == 0 {
                pempc::linalg::vcat(&u, &z)
            } else {
                pempc::linalg::vcat(&pempc::linalg::vcat(&x, &u), &z)
            };
            y.rows_mut(sp.y_offset(k), sp.y_dim(k)).copy_from(&block);
            x = step_plant(&p, &x, &pempc::linalg::vcat(&u, &z)).unwrap();
        }
        y.rows_mut(sp.y_offset(5), 2).copy_from(&x);
        let r = sp.a_mul(&y) - sp.b_of(&x0);
        prop_assert!(r.amax() <= 1e-12, "residual {}", r.amax());
    }
}

#[test]
fn conjugate_is_quadratically_homogeneous() {
    let sp = StackedProblem::new(&chain(1, 5)).unwrap();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    runner
        .run(&vec_strategy(sp.dual_dim(), 5.0), |l| {
            let one = sp.f_conj(&l);
            let two = sp.f_conj(&(&l * 2.0));
            prop_assert!((two - 4.0 * one).abs() <= 1e-10 * one.abs().max(1.0));
            Ok(())
        })
        .unwrap();
    assert_relative_eq!(sp.f_conj(&Vector::zeros(sp.dual_dim())), 0.0);
}
