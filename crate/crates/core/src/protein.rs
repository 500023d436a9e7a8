//! CA-trace ingestion from fixed-column ATOM records, residue graphs and
//! structural coarsening.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeoError, Result};
use crate::geom::{knn_edges, GeometricGraph, GraphJson};
use crate::pool::{pool_graph, ClusterAssignment, PoolKind, PoolResultJson};

/// Residue codes in one-hot column order.
pub const AMINO_ACIDS: [&str; 20] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET", "PHE", "PRO", "SER",
    "THR", "TRP", "TYR", "VAL",
];
pub const RESIDUE_KNN_K: usize = 16;
pub const DEFAULT_COARSEN_RATIO: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueRecord {
    pub chain: char,
    pub index: i64,
    pub name: String,
    pub ca: [f64; 3],
}

/// 1-based inclusive column range, trimmed.
fn field(line: &str, from: usize, to: usize) -> Option<&str> {
    let end = to.min(line.len());
    if from > end {
        return Some("");
    }
    line.get(from - 1..end).map(str::trim)
}

fn column_char(line: &str, col: usize) -> char {
    line.as_bytes().get(col - 1).map(|&b| b as char).unwrap_or(' ')
}

fn parse_error(line: usize, msg: impl Into<String>) -> GeoError {
    GeoError::Parse { line, msg: msg.into() }
}

/// CA atoms of ATOM records, one per (chain, residue number), in file order.
/// Later alternate locations of an already seen residue are dropped.
pub fn parse_ca_structure(text: &str) -> Result<Vec<ResidueRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if field(line, 1, 6) != Some("ATOM") {
            continue;
        }
        if field(line, 13, 16) != Some("CA") {
            continue;
        }
        let chain = column_char(line, 22);
        let index: i64 = field(line, 23, 26)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_error(lineno, "malformed residue number in columns 23-26"))?;
        let mut ca = [0.0; 3];
        for (k, (a, b)) in [(31, 38), (39, 46), (47, 54)].into_iter().enumerate() {
            let raw = field(line, a, b).unwrap_or("");
            ca[k] = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_error(lineno, format!("malformed coordinate in columns {a}-{b}: `{raw}`")))?;
        }
        if !seen.insert((chain, index)) {
            continue;
        }
        let name = field(line, 18, 20).unwrap_or("").to_string();
        out.push(ResidueRecord { chain, index, name, ca });
    }
    if out.is_empty() {
        return Err(invalid("no CA atoms found in ATOM records"));
    }
    Ok(out)
}

pub fn read_ca_structure(path: &Path) -> Result<Vec<ResidueRecord>> {
    parse_ca_structure(&std::fs::read_to_string(path)?)
}

/// Column of a residue code in the one-hot encoding.
pub fn residue_column(name: &str) -> Option<usize> {
    AMINO_ACIDS.iter().position(|a| a.eq_ignore_ascii_case(name))
}

/// Residue graph: nodes sorted by (chain, index), CA coordinates, KNN edges,
/// 20 scalar columns (one-hot when `one_hot`, zeros otherwise) and one zero
/// vector channel.
pub fn build_residue_graph(records: &[ResidueRecord], k: usize, one_hot: bool) -> Result<GeometricGraph> {
    if records.is_empty() {
        return Err(invalid("residue graph needs at least one record"));
    }
    let mut sorted: Vec<&ResidueRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.chain, r.index));
    if sorted.windows(2).any(|w| (w[0].chain, w[0].index) == (w[1].chain, w[1].index)) {
        return Err(invalid("duplicate (chain, residue) pair"));
    }
    let n = sorted.len();
    let coords: Vec<f64> = sorted.iter().flat_map(|r| r.ca).collect();
    let width = AMINO_ACIDS.len();
    let mut scalars = vec![0.0; n * width];
    if one_hot {
        for (i, r) in sorted.iter().enumerate() {
            if let Some(c) = residue_column(&r.name) {
                scalars[i * width + c] = 1.0;
            }
        }
    }
    let edges = knn_edges(&coords, 3, k)?;
    GeometricGraph::from_parts(3, coords, &edges, width, scalars, 1, vec![0.0; n * 3])
}

/// One coarsening step in hierarchy JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelJson {
    pub level: usize,
    #[serde(flatten)]
    pub pooled: PoolResultJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyJson {
    pub pool_kind: PoolKind,
    pub ratio: f64,
    pub input: GraphJson,
    pub levels: Vec<LevelJson>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CoarseLevel {
    pub graph: GeometricGraph,
    pub assignment: ClusterAssignment,
}

#[derive(Debug, Clone)]
pub struct CoarseHierarchy {
    pub input: GeometricGraph,
    pub pool_kind: PoolKind,
    pub ratio: f64,
    pub levels: Vec<CoarseLevel>,
    pub warnings: Vec<String>,
}

impl CoarseHierarchy {
    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.graph.num_nodes()).collect()
    }

    pub fn to_json_value(&self) -> HierarchyJson {
        HierarchyJson {
            pool_kind: self.pool_kind,
            ratio: self.ratio,
            input: GraphJson::from(&self.input),
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| LevelJson {
                    level: i + 1,
                    pooled: PoolResultJson {
                        graph: GraphJson::from(&l.graph),
                        centers: l.assignment.centers().to_vec(),
                        assignment: l.assignment.triplets(),
                    },
                })
                .collect(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("hierarchy serialization cannot fail")
    }
}

/// Repeated structural pooling with linear sum reduction. Stops early, with
/// a warning, once a level has fewer than two nodes.
pub fn coarsen_hierarchy(g: &GeometricGraph, levels: usize, kind: PoolKind, ratio: f64) -> Result<CoarseHierarchy> {
    if levels == 0 {
        return Err(invalid("levels must be at least 1"));
    }
    let mut out =
        CoarseHierarchy { input: g.clone(), pool_kind: kind, ratio, levels: Vec::new(), warnings: Vec::new() };
    let mut current = g.clone();
    for level in 1..=levels {
        if current.num_nodes() < 2 {
            let msg = format!("stopped before level {level}: graph has {} node(s)", current.num_nodes());
            log::warn!("{msg}");
            out.warnings.push(msg);
            break;
        }
        let p = pool_graph(&current, kind, ratio, RESIDUE_KNN_K)?;
        current = p.pooled.clone();
        out.levels.push(CoarseLevel { graph: p.pooled, assignment: p.assignment });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(serial: usize, name: &str, alt: char, res: &str, chain: char, seq: i64, xyz: [f64; 3]) -> String {
        format!(
            "ATOM  {serial:>5} {name:<4}{alt}{res:>3} {chain}{seq:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           C",
            xyz[0], xyz[1], xyz[2]
        )
    }

    #[test]
    fn fixture_columns_line_up() {
        let l = atom(1, " CA ", ' ', "ALA", 'A', 12, [1.5, -2.25, 30.125]);
        assert_eq!(&l[12..16], " CA ");
        assert_eq!(&l[17..20], "ALA");
        assert_eq!(&l[21..22], "A");
        assert_eq!(&l[22..26], "  12");
        assert_eq!(&l[30..38], "   1.500");
    }

    #[test]
    fn keeps_ca_of_atom_records_only() {
        let text = [
            "HEADER    TEST".to_string(),
            atom(1, " N  ", ' ', "ALA", 'A', 1, [0.0, 0.0, 0.0]),
            atom(2, " CA ", ' ', "ALA", 'A', 1, [1.0, 2.0, 3.0]),
            atom(3, " CA ", ' ', "GLY", 'A', 2, [4.0, 5.0, 6.0]),
            atom(4, " CA ", ' ', "SER", 'B', 1, [7.0, 8.0, 9.5]),
            "HETATM    5  CA  HOH A 100       0.000   0.000   0.000".to_string(),
            "END".to_string(),
        ]
        .join("\n");
        let r = parse_ca_structure(&text).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0], ResidueRecord { chain: 'A', index: 1, name: "ALA".into(), ca: [1.0, 2.0, 3.0] });
        assert_eq!(r[2].ca, [7.0, 8.0, 9.5]);
        assert_eq!(r[2].chain, 'B');
    }

    #[test]
    fn hetatm_only_is_an_error() {
        let text = "HETATM    5  CA  HOH A 100       0.000   0.000   0.000\n";
        assert!(matches!(parse_ca_structure(text), Err(GeoError::InvalidInput(_))));
    }

    #[test]
    fn first_altloc_wins() {
        let text = [
            atom(1, " CA ", 'A', "ALA", 'A', 1, [1.0, 1.0, 1.0]),
            atom(2, " CA ", 'B', "ALA", 'A', 1, [2.0, 2.0, 2.0]),
        ]
        .join("\n");
        let r = parse_ca_structure(&text).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].ca, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn malformed_coordinate_reports_line() {
        let mut bad = atom(1, " CA ", ' ', "ALA", 'A', 2, [1.0, 1.0, 1.0]);
        bad.replace_range(38..46, "   x.yz ");
        let text = [atom(1, " CA ", ' ', "ALA", 'A', 1, [0.0; 3]), bad].join("\n");
        match parse_ca_structure(&text) {
            Err(GeoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let short = "ATOM      1  CA  ALA A   1       1.000   2.000";
        assert!(matches!(parse_ca_structure(short), Err(GeoError::Parse { line: 1, .. })));
    }

    fn rec(chain: char, index: i64, name: &str, ca: [f64; 3]) -> ResidueRecord {
        ResidueRecord { chain, index, name: name.into(), ca }
    }

    #[test]
    fn residue_graph_layout() {
        let recs = vec![rec('B', 1, "GLY", [5.0, 0.0, 0.0]), rec('A', 2, "XYZ", [1.0, 0.0, 0.0]), rec('A', 1, "ALA", [0.0; 3])];
        let g = build_residue_graph(&recs, RESIDUE_KNN_K, true).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.scalar_width(), 20);
        assert_eq!(g.vector_channels(), 1);
        assert!(g.vectors().iter().all(|&x| x == 0.0));
        assert_eq!(g.edges().len(), 3);
        // (A,1) ALA, (A,2) unknown, (B,1) GLY
        assert_eq!(g.coord(0), &[0.0, 0.0, 0.0]);
        assert_eq!(g.scalar_row(0)[0], 1.0);
        assert!(g.scalar_row(1).iter().all(|&x| x == 0.0));
        assert_eq!(g.scalar_row(2)[7], 1.0);
        let plain = build_residue_graph(&recs, RESIDUE_KNN_K, false).unwrap();
        assert_eq!(plain.scalar_width(), 20);
        assert!(plain.scalars().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn coarsen_warns_on_single_node() {
        let g = build_residue_graph(&[rec('A', 1, "ALA", [0.0; 3])], 16, true).unwrap();
        let h = coarsen_hierarchy(&g, 3, PoolKind::Sparse, 0.6).unwrap();
        assert!(h.levels.is_empty());
        assert_eq!(h.warnings.len(), 1);
        assert!(coarsen_hierarchy(&g, 0, PoolKind::Sparse, 0.6).is_err());
    }

    #[test]
    fn hierarchy_json_shape() {
        let recs: Vec<_> = (0..10).map(|i| rec('A', i, "ALA", [i as f64, (i * i) as f64 * 0.1, 0.0])).collect();
        let g = build_residue_graph(&recs, 16, true).unwrap();
        let h = coarsen_hierarchy(&g, 2, PoolKind::Sparse, 0.6).unwrap();
        let v: serde_json::Value = serde_json::from_str(&h.to_json()).unwrap();
        assert_eq!(v["levels"].as_array().unwrap().len(), 2);
        assert_eq!(v["levels"][0]["n"], 6);
        assert_eq!(v["levels"][1]["level"], 2);
        assert_eq!(v["levels"][0]["centers"].as_array().unwrap().len(), 6);
        assert!(v["levels"][0]["C"].is_array());
        assert_eq!(v["input"]["n"], 10);
    }
}
