mod common;

use common::*;
use geounet::chains::{make_k_chain_pair, pool_chain, ChainSpec};
use geounet::gwl::{
    check_theorem1_conditions, demonstrate_increase, distinguishable, GroupSpec, PoolInputs, ReduceKind, TestKind,
    Verdict,
};
use geounet::pool::{point_pool_assign, ClusterAssignment, select_centers, sparse_pool_assign};
use geounet::GeometricGraph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const O3: GroupSpec = GroupSpec { group: geounet::gwl::Group::Orthogonal, dim: 3 };

/// First hop radius at which the rooted-ball multisets stop agreeing.
fn oracle_first_ball_difference(g1: &GeometricGraph, g2: &GeometricGraph, max_t: usize) -> Option<usize> {
    (0..=max_t).find(|&t| !ball_multisets_agree(g1, g2, t, true))
}

#[test]
fn chain_pair_layout() {
    let (g1, g2) = make_k_chain_pair(&ChainSpec::new(4).unwrap());
    assert_eq!(g1.num_nodes(), 6);
    assert_eq!(g1.edges(), g2.edges());
    // only the right endpoint differs
    for i in 0..5 {
        assert_eq!(g1.coord(i), g2.coord(i));
    }
    assert_ne!(g1.coord(5), g2.coord(5));
    assert!(!graphs_isometric(&g1, &g2, true));
}

#[test]
fn gwl_first_iteration_matches_hop_ball_oracle() {
    for k in [4, 6] {
        let (g1, g2) = make_k_chain_pair(&ChainSpec::new(k).unwrap());
        let oracle = oracle_first_ball_difference(&g1, &g2, k + 2);
        let got = distinguishable(&g1, &g2, TestKind::Gwl, k + 2, O3).unwrap();
        assert_eq!(got.first_iteration, oracle, "k={k}");
        if k == 4 {
            assert_eq!(oracle, Some(3));
        }
    }
}

#[test]
fn igwl_blind_when_every_one_hop_ball_matches() {
    for k in [4, 6] {
        let (g1, g2) = make_k_chain_pair(&ChainSpec::new(k).unwrap());
        // identity correspondence is a local isometry at every node
        assert!((0..g1.num_nodes()).all(|i| balls_isometric(&g1, i, &g2, i, 1, true)));
        assert!(!distinguishable(&g1, &g2, TestKind::Igwl, 10, O3).unwrap().distinguishable);
    }
}

#[test]
fn pooled_chains_are_separated_quickly() {
    let (g1, g2) = make_k_chain_pair(&ChainSpec::new(4).unwrap());
    let (p1, p2) = (pool_chain(&g1, 3).unwrap(), pool_chain(&g2, 3).unwrap());
    assert_eq!(p1.num_nodes(), 3);
    assert!(!graphs_isometric(&p1, &p2, true));
    let oracle = oracle_first_ball_difference(&p1, &p2, 4).unwrap();
    assert!(oracle <= 2);
    for test in [TestKind::Gwl, TestKind::Igwl] {
        let d = distinguishable(&p1, &p2, test, 4, O3).unwrap();
        assert!(d.first_iteration.unwrap() <= 2, "{test:?}");
    }
    let inc = demonstrate_increase(4).unwrap();
    assert!(inc.increased);
    assert_eq!(inc.original_iteration, Some(3));
}

fn labelled_tetrahedron(mirror: bool) -> GeometricGraph {
    let s = if mirror { -1.0 } else { 1.0 };
    let coords = vec![
        vec![0.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![0.3, 1.1, 0.0],
        vec![0.2, 0.4, s * 0.9],
    ];
    let edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    GeometricGraph::new(coords, &edges).unwrap().with_scalars((0..4).map(|i| vec![i as f64]).collect()).unwrap()
}

#[test]
fn chiral_pair_separates_only_under_rotations() {
    let (a, b) = (labelled_tetrahedron(false), labelled_tetrahedron(true));
    let p: Vec<_> = (0..4).map(|i| point(&a, i)).collect();
    let q: Vec<_> = (0..4).map(|i| point(&b, i)).collect();
    assert!(kabsch_rmsd(&p, &q, true) < 1e-9);
    assert!(kabsch_rmsd(&p, &q, false) > 0.1);
    assert!(!distinguishable(&a, &b, TestKind::Gwl, 4, GroupSpec::orthogonal(3)).unwrap().distinguishable);
    assert!(distinguishable(&a, &b, TestKind::Gwl, 4, GroupSpec::special(3)).unwrap().distinguishable);
}

#[test]
fn moved_and_relabelled_copies_are_never_separated() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let mut g = random_graph(&mut rng, 9, 0, 0, 3);
        g = g.with_scalars((0..9).map(|i| vec![(i % 3) as f64]).collect()).unwrap();
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rng);
        let (r, t) = random_motion(&mut rng, false);
        let h = move_graph(&g.permute(&perm).unwrap(), &r, &t);
        assert!(graphs_isometric(&g, &h, true));
        for (test, group) in [(TestKind::Gwl, GroupSpec::orthogonal(3)), (TestKind::Igwl, GroupSpec::orthogonal(3))] {
            assert!(!distinguishable(&g, &h, test, 5, group).unwrap().distinguishable);
        }
    }
}

fn inputs<'a>(g: &'a GeometricGraph, c: &'a ClusterAssignment) -> PoolInputs<'a> {
    PoolInputs { scalars: g.scalars(), scalar_width: g.scalar_width(), vectors: g.vectors(), dim: 3, assignment: c }
}

#[test]
fn condition_audit_agrees_with_dense_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let a = random_graph(&mut rng, 15, 2, 1, 4);
        let b = random_graph(&mut rng, 15, 2, 1, 4);
        let ca = sparse_pool_assign(&a, &select_centers(&a, 0.6).unwrap()).unwrap();
        let cb = sparse_pool_assign(&b, &select_centers(&b, 0.6).unwrap()).unwrap();
        let rep = check_theorem1_conditions(&inputs(&a, &ca), &inputs(&b, &cb), ReduceKind::Linear);
        // oracle: every node's membership over all supernodes sums to one
        for c in [&ca, &cb] {
            let dense = c.to_dense();
            for i in 0..15 {
                assert_eq!((0..dense.rows()).map(|j| dense.get(j, i)).sum::<f64>(), 1.0);
            }
        }
        assert_eq!(rep.cond2_lambda, Some(1.0));
        assert_eq!(rep.verdict, Verdict::Maintains);
        let mlp = check_theorem1_conditions(&inputs(&a, &ca), &inputs(&b, &cb), ReduceKind::Mlp);
        assert_eq!(mlp.verdict, Verdict::CannotCertify);
    }
}

#[test]
fn overlapping_point_clusters_are_not_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random_graph(&mut rng, 12, 1, 0, 4);
    let c = point_pool_assign(&a, &select_centers(&a, 0.6).unwrap()).unwrap();
    let inputs = PoolInputs { scalars: a.scalars(), scalar_width: 1, vectors: &[], dim: 3, assignment: &c };
    let b = random_graph(&mut rng, 12, 1, 0, 4);
    let cb = point_pool_assign(&b, &select_centers(&b, 0.6).unwrap()).unwrap();
    let other = PoolInputs { scalars: b.scalars(), scalar_width: 1, vectors: &[], dim: 3, assignment: &cb };
    let rep = check_theorem1_conditions(&inputs, &other, ReduceKind::Linear);
    let sums = c.column_sums();
    assert!(sums.iter().any(|&s| s != sums[0]), "clusters happen to be uniform: {sums:?}");
    assert_eq!(rep.cond2_lambda, None);
    assert_eq!(rep.verdict, Verdict::CannotCertify);
}
