mod common;

use std::path::PathBuf;

use common::*;
use geounet::pool::PoolKind;
use geounet::protein::{build_residue_graph, coarsen_hierarchy, parse_ca_structure, read_ca_structure, RESIDUE_KNN_K};
use geounet::GeometricGraph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/helix100.pdb")
}

/// Independent column slicing of the fixture's CA lines.
fn raw_ca_coords(text: &str) -> Vec<(char, i64, [f64; 3])> {
    let mut out: Vec<(char, i64, [f64; 3])> = Vec::new();
    for line in text.lines().filter(|l| l.starts_with("ATOM") && &l[12..16] == " CA ") {
        let chain = line.as_bytes()[21] as char;
        let seq: i64 = line[22..26].trim().parse().unwrap();
        if out.iter().any(|(c, s, _)| *c == chain && *s == seq) {
            continue;
        }
        let f = |a: usize, b: usize| line[a..b].trim().parse::<f64>().unwrap();
        out.push((chain, seq, [f(30, 38), f(38, 46), f(46, 54)]));
    }
    out
}

#[test]
fn fixture_parses_to_one_record_per_residue() {
    let text = std::fs::read_to_string(fixture()).unwrap();
    let recs = read_ca_structure(&fixture()).unwrap();
    let raw = raw_ca_coords(&text);
    assert_eq!(recs.len(), 100);
    assert_eq!(recs.len(), raw.len());
    for (r, (chain, seq, xyz)) in recs.iter().zip(&raw) {
        assert_eq!((r.chain, r.index, r.ca), (*chain, *seq, *xyz));
    }
    // residue 11 carries altlocs A and B; A wins
    let r = recs.iter().find(|r| r.chain == 'A' && r.index == 11).unwrap();
    let b_line = text.lines().find(|l| l.len() > 17 && &l[12..17] == " CA B").unwrap();
    assert_ne!(r.ca[0], b_line[30..38].trim().parse::<f64>().unwrap());
}

#[test]
fn parse_build_serialize_parse_keeps_coordinates_bit_exact() {
    let recs = read_ca_structure(&fixture()).unwrap();
    let g = build_residue_graph(&recs, RESIDUE_KNN_K, true).unwrap();
    let back = GeometricGraph::from_json(&g.to_json()).unwrap();
    assert_eq!(back.coords(), g.coords());
    // chain A sorts before chain B and the coordinates are the records'
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(back.coord(i), &r.ca);
    }
    assert_eq!(back.scalar_width(), 20);
    assert!((0..100).all(|i| back.scalar_row(i).iter().sum::<f64>() == 1.0));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_ca_structure(&PathBuf::from("definitely/missing.pdb")).unwrap_err();
    assert!(matches!(err, geounet::GeoError::Io(_)));
}

#[test]
fn knn_edges_follow_brute_force() {
    let recs = read_ca_structure(&fixture()).unwrap();
    let g = build_residue_graph(&recs, 16, false).unwrap();
    let want: Vec<_> = brute_knn(g.coords(), 16).into_iter().collect();
    assert_eq!(g.edges(), want.as_slice());
}

#[test]
fn coarsening_sizes_subsets_and_mass() {
    let recs = read_ca_structure(&fixture()).unwrap();
    let g = build_residue_graph(&recs, 16, true).unwrap();
    let h = coarsen_hierarchy(&g, 3, PoolKind::Sparse, 0.6).unwrap();
    assert_eq!(h.sizes(), vec![60, 36, 22]);
    assert!(h.warnings.is_empty());
    let mut prev = &g;
    for level in &h.levels {
        for (j, &c) in level.assignment.centers().iter().enumerate() {
            assert_eq!(level.graph.coord(j), prev.coord(c));
        }
        for col in 0..20 {
            let before: f64 = (0..prev.num_nodes()).map(|i| prev.scalar_row(i)[col]).sum();
            let after: f64 = (0..level.graph.num_nodes()).map(|i| level.graph.scalar_row(i)[col]).sum();
            assert!((before - after).abs() < 1e-9);
        }
        prev = &level.graph;
    }
}

#[test]
fn coarsening_commutes_with_rigid_motion() {
    let recs = read_ca_structure(&fixture()).unwrap();
    let g = build_residue_graph(&recs, 16, true).unwrap();
    let h = coarsen_hierarchy(&g, 3, PoolKind::Sparse, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for proper in [true, false] {
        let (r, t) = random_motion(&mut rng, proper);
        let hm = coarsen_hierarchy(&move_graph(&g, &r, &t), 3, PoolKind::Sparse, 0.6).unwrap();
        for (a, b) in h.levels.iter().zip(&hm.levels) {
            assert_eq!(a.assignment, b.assignment);
            assert_eq!(a.graph.edges(), b.graph.edges());
            assert!(max_abs_diff(&transform_points(&r, &t, a.graph.coords()), b.graph.coords()) < 1e-9);
        }
    }
}

#[test]
fn hetatm_only_text_is_rejected() {
    let text = "HETATM    1  O   HOH A 201      10.000  10.000  10.000  1.00  0.00           O\n";
    assert!(parse_ca_structure(text).is_err());
}
