mod common;

use common::*;
use geounet::pool::{fps_select, select_centers, sparse_pool_assign, sum_reduce, pool_graph, PoolKind};
use geounet::{apply_motion, knn_edges, GeometricGraph, RigidMotion};
use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(m: &RigidMotion) -> Matrix3<f64> {
    Matrix3::from_row_slice(m.rotation())
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..30 {
        let n = 5 + trial % 20;
        let g = random_graph(&mut rng, n, 0, 0, 1);
        for k in [1, 3, 6, 16] {
            let got: Vec<_> = knn_edges(g.coords(), 3, k).unwrap();
            let want: Vec<_> = brute_knn(g.coords(), k).into_iter().collect();
            assert_eq!(got, want, "n={n} k={k}");
        }
    }
}

#[test]
fn random_motions_are_orthogonal_with_requested_determinant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for proper in [true, false] {
        for _ in 0..20 {
            let m = RigidMotion::random(3, proper, 1.0, &mut rng);
            let r = matrix(&m);
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - if proper { 1.0 } else { -1.0 }).abs() < 1e-12);
        }
    }
}

#[test]
fn apply_motion_matches_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_graph(&mut rng, 10, 2, 2, 3);
    let m = RigidMotion::random(3, false, 2.0, &mut rng);
    let moved = apply_motion(&g, &m).unwrap();
    let r = matrix(&m);
    let t = nalgebra::Vector3::from_column_slice(m.translation());
    assert!(max_abs_diff(moved.coords(), &transform_points(&r, &t, g.coords())) < 1e-12);
    assert!(max_abs_diff(moved.vectors(), &rotate_vectors(&r, g.vectors())) < 1e-12);
    assert_eq!(moved.scalars(), g.scalars());
    assert_eq!(moved.edges(), g.edges());
}

#[test]
fn graph_json_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random_graph(&mut rng, 9, 3, 2, 3);
    let back = GeometricGraph::from_json(&g.to_json()).unwrap();
    assert_eq!(back, g);
}

#[test]
fn fps_matches_brute_force_and_is_motion_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [2, 7, 20, 50, 100] {
        let g = random_graph(&mut rng, n, 0, 0, 3);
        let count = (0.6 * n as f64).ceil() as usize;
        let got = select_centers(&g, 0.6).unwrap();
        assert_eq!(got, brute_fps(g.coords(), count), "n={n}");
        let (r, t) = random_motion(&mut rng, false);
        assert_eq!(select_centers(&move_graph(&g, &r, &t), 0.6).unwrap(), got);
    }
}

#[test]
fn fps_start_override_is_respected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_graph(&mut rng, 12, 0, 0, 3);
    let picks = fps_select(g.coords(), 3, 0.5, 4).unwrap();
    assert_eq!(picks[0], 4);
    assert_eq!(picks.len(), 6);
}

#[test]
fn sparse_pooling_is_right_stochastic_and_conserves_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let g = random_graph(&mut rng, 30, 3, 2, 4);
        let centers = select_centers(&g, 0.6).unwrap();
        let c = sparse_pool_assign(&g, &centers).unwrap();
        let dense = c.to_dense();
        // every node in exactly one cluster, nearest center
        for i in 0..g.num_nodes() {
            let row: Vec<f64> = (0..centers.len()).map(|j| dense.get(j, i)).collect();
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            let j = row.iter().position(|&x| x == 1.0).unwrap();
            let best = centers.iter().map(|&cc| (point(&g, i) - point(&g, cc)).norm()).fold(f64::INFINITY, f64::min);
            assert!(((point(&g, i) - point(&g, centers[j])).norm() - best).abs() < 1e-12);
        }
        let (s, v) = sum_reduce(&g, &c).unwrap();
        for col in 0..3 {
            let before: f64 = (0..g.num_nodes()).map(|i| g.scalar_row(i)[col]).sum();
            let after: f64 = (0..s.rows()).map(|j| s.get(j, col)).sum();
            assert!((before - after).abs() < 1e-12);
        }
        let total = |x: &[f64]| (0..3).map(|k| x.chunks(3).map(|c| c[k]).sum::<f64>()).collect::<Vec<_>>();
        assert!(max_abs_diff(&total(g.vectors()), &total(&v)) < 1e-12);
    }
}

#[test]
fn pooled_coordinates_are_a_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_graph(&mut rng, 40, 1, 0, 4);
    for kind in [PoolKind::Sparse, PoolKind::Point] {
        let p = match pool_graph(&g, kind, 0.6, 16) {
            Ok(p) => p,
            Err(geounet::GeoError::OrphanNodes(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        for (j, &c) in p.assignment.centers().iter().enumerate() {
            assert_eq!(p.pooled.coord(j), g.coord(c));
        }
        assert_eq!(p.pooled.num_nodes(), 24);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn motions_preserve_pairwise_distances(seed in 0u64..10_000, n in 2usize..15, proper: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 1, 1, 2);
        let m = RigidMotion::random(3, proper, 5.0, &mut rng);
        let moved = apply_motion(&g, &m).unwrap();
        let a = g.distance_matrix();
        let b = moved.distance_matrix();
        prop_assert!(max_abs_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn knn_degree_bounds(seed in 0u64..10_000, n in 2usize..30, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 0, 0, k);
        let kk = k.min(n - 1);
        for i in 0..n {
            prop_assert!(g.neighbors(i).len() >= kk);
            prop_assert!(!g.neighbors(i).contains(&i));
        }
    }
}
