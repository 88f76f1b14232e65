use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pempc::lp::{LinearProgram, LpOutcome};
use pempc::{Mat, Polyhedron, Vector};

/// Bounded polytope: a box in `dim` dimensions cut by `extra` random half-spaces
/// that keep the origin strictly inside.
fn random_polytope(dim: usize, extra: usize, seed: u64) -> Polyhedron {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 2 * dim + extra;
    let mut h = Mat::zeros(rows, dim);
    let mut b = Vector::zeros(rows);
    for i in 0..dim {
        h[(2 * i, i)] = 1.0;
        h[(2 * i + 1, i)] = -1.0;
        b[2 * i] = rng.gen_range(0.5..2.0);
        b[2 * i + 1] = rng.gen_range(0.5..2.0);
    }
    for r in 2 * dim..rows {
        for j in 0..dim {
            h[(r, j)] = rng.gen_range(-1.0..1.0);
        }
        b[r] = rng.gen_range(0.2..1.5);
    }
    Polyhedron::new(h, b).unwrap()
}

/// Rows of `p` that touch at least `dim` affinely independent points, i.e.
/// facets, found from the vertex list (2D: a facet holds two vertices).
fn facet_count_2d(p: &Polyhedron) -> usize {
    let verts = p.vertices().unwrap();
    let mut facets: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..p.h().nrows() {
        let row = p.h().row(i).transpose();
        let n = row.norm();
        let on: Vec<&Vector> = verts.iter().filter(|v| (row.dot(v) - p.b()[i]).abs() <= 1e-9 * n.max(1.0)).collect();
        if on.len() >= 2 {
            let key = (row[0] / n, row[1] / n, p.b()[i] / n);
            let dup = facets
                .iter()
                .any(|f| (f.0 - key.0).abs() < 1e-9 && (f.1 - key.1).abs() < 1e-9 && (f.2 - key.2).abs() < 1e-9);
            if !dup {
                facets.push(key);
            }
        }
    }
    facets.len()
}

/// Convex-combination LP: is `c` in the hull of `verts`?
fn in_hull(verts: &[Vector], c: &Vector) -> bool {
    let k = verts.len();
    let d = c.len();
    let mut a_eq = Mat::zeros(d + 1, k);
    let mut b_eq = Vector::zeros(d + 1);
    for (j, v) in verts.iter().enumerate() {
        a_eq.view_mut((0, j), (d, 1)).copy_from(v);
        a_eq[(d, j)] = 1.0;
    }
    b_eq.rows_mut(0, d).copy_from(c);
    b_eq[d] = 1.0;
    let lp = LinearProgram::new(Vector::zeros(k), -Mat::identity(k, k), Vector::zeros(k)).with_equalities(a_eq, b_eq);
    matches!(lp.solve(), LpOutcome::Optimal { .. })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn redundancy_removal_preserves_membership(seed in any::<u64>(), dim in 2usize..4, extra in 0usize..6) {
        let p = random_polytope(dim, extra, seed);
        let r = p.remove_redundant().unwrap();
        prop_assert!(r.n_ineq() <= p.n_ineq());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..1000 {
            let x = Vector::from_fn(dim, |_, _| rng.gen_range(-2.5..2.5));
            prop_assert_eq!(p.contains(&x, 0.0).unwrap(), r.contains(&x, 0.0).unwrap());
        }
    }

    #[test]
    fn redundancy_removal_keeps_exactly_the_facets_2d(seed in any::<u64>(), extra in 0usize..8) {
        let p = random_polytope(2, extra, seed);
        let r = p.remove_redundant().unwrap();
        prop_assert_eq!(r.n_ineq(), facet_count_2d(&p));
    }

    #[test]
    fn vertices_are_contained_and_span_the_center(seed in any::<u64>(), extra in 0usize..5) {
        let p = random_polytope(3, extra, seed);
        let verts = p.vertices().unwrap();
        prop_assert!(verts.len() >= 4);
        for v in &verts {
            prop_assert!(p.contains(v, 1e-9).unwrap());
            // A vertex in 3D lies on at least three linearly independent facets.
            let active: Vec<usize> = (0..p.n_ineq())
                .filter(|&i| (p.h().row(i).transpose().dot(v) - p.b()[i]).abs() <= 1e-8)
                .collect();
            let rows = Mat::from_fn(active.len(), 3, |i, j| p.h()[(active[i], j)]);
            prop_assert_eq!(rows.rank(1e-9), 3);
        }
        let (center, radius) = p.chebyshev(10.0).unwrap();
        prop_assert!(radius > 0.0);
        prop_assert!(in_hull(&verts, &center));
    }

    #[test]
    fn canonical_form_is_order_independent(seed in any::<u64>(), extra in 0usize..5) {
        let p = random_polytope(2, extra, seed);
        let m = p.n_ineq();
        let perm: Vec<usize> = (0..m).rev().collect();
        let h = Mat::from_fn(m, 2, |i, j| p.h()[(perm[i], j)]);
        let b = Vector::from_fn(m, |i, _| p.b()[perm[i]]);
        let q = Polyhedron::new(h.clone(), b.clone()).unwrap();
        prop_assert_eq!(p.canonicalize(), q.canonicalize());
        // Positive row scaling describes the same set; normalization agrees to roundoff.
        let scaled = Polyhedron::new(h * 3.0, b * 3.0).unwrap().canonicalize();
        let c = p.canonicalize();
        let ulps = |m: f64| 4.0 * f64::EPSILON * m.max(1.0);
        prop_assert!((scaled.h() - c.h()).amax() <= ulps(1.0));
        prop_assert!((scaled.b() - c.b()).amax() <= ulps(c.b().amax()));
    }
}
