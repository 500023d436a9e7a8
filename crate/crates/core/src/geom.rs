//! Geometric graph data model, rigid motions and KNN graph construction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeoError, Result};

/// Relative slack used when comparing squared distances for ties.
///
/// Distances that agree to this relative precision are treated as equal so
/// that the lower-index tie rule survives roundoff from rigid motions.
pub(crate) const TIE_TOL: f64 = 1e-9;

/// `a` is strictly smaller than `b` beyond roundoff.
#[inline]
pub(crate) fn strictly_less(a: f64, b: f64) -> bool {
    a < b - TIE_TOL * b.abs().max(1.0)
}

/// An attributed graph embedded in `d`-dimensional space.
///
/// Storage is flat and row-major: coordinates are `n × d`, scalar features
/// `n × f` and vector features `n × v × d` (node, channel, component).
/// The edge set is undirected, free of self-loops and kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricGraph {
    n: usize,
    d: usize,
    f: usize,
    v: usize,
    coords: Vec<f64>,
    scalars: Vec<f64>,
    vectors: Vec<f64>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl GeometricGraph {
    /// Builds a graph from coordinate rows and an edge list, without features.
    pub fn new(coords: Vec<Vec<f64>>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(invalid("graph needs at least one node"));
        }
        let d = coords[0].len();
        let mut flat = Vec::with_capacity(n * d);
        for (i, row) in coords.iter().enumerate() {
            if row.len() != d {
                return Err(invalid(format!("coordinate row {i} has length {}, expected {d}", row.len())));
            }
            flat.extend_from_slice(row);
        }
        Self::from_parts(d, flat, edges, 0, Vec::new(), 0, Vec::new())
    }

    /// Builds a graph from flat buffers, validating every invariant.
    pub fn from_parts(
        d: usize,
        coords: Vec<f64>,
        edges: &[(usize, usize)],
        f: usize,
        scalars: Vec<f64>,
        v: usize,
        vectors: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(invalid("spatial dimension must be positive"));
        }
        if !coords.len().is_multiple_of(d) {
            return Err(invalid("coordinate buffer is not a multiple of d"));
        }
        let n = coords.len() / d;
        if n == 0 {
            return Err(invalid("graph needs at least one node"));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if scalars.len() != n * f {
            return Err(GeoError::DimensionMismatch { expected: n * f, got: scalars.len() });
        }
        if vectors.len() != n * v * d {
            return Err(GeoError::DimensionMismatch { expected: n * v * d, got: vectors.len() });
        }
        let edges = normalize_edges(n, edges)?;
        let neighbors = neighbor_lists(n, &edges);
        Ok(Self { n, d, f, v, coords, scalars, vectors, edges, neighbors })
    }

    /// Replaces the scalar features; `rows` must have one row per node.
    pub fn with_scalars(mut self, rows: Vec<Vec<f64>>) -> Result<Self> {
        let f = check_rows(self.n, &rows, "scalar")?;
        self.f = f;
        self.scalars = rows.into_iter().flatten().collect();
        Ok(self)
    }

    /// Replaces scalar features from a flat `n × f` buffer.
    pub fn with_scalars_flat(mut self, f: usize, scalars: Vec<f64>) -> Result<Self> {
        if scalars.len() != self.n * f {
            return Err(GeoError::DimensionMismatch { expected: self.n * f, got: scalars.len() });
        }
        self.f = f;
        self.scalars = scalars;
        Ok(self)
    }

    /// Replaces the vector features; `rows[i][c]` is channel `c` of node `i`.
    pub fn with_vectors(mut self, rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if rows.len() != self.n {
            return Err(GeoError::DimensionMismatch { expected: self.n, got: rows.len() });
        }
        let v = rows[0].len();
        let mut flat = Vec::with_capacity(self.n * v * self.d);
        for (i, node) in rows.iter().enumerate() {
            if node.len() != v {
                return Err(invalid(format!("node {i} has {} vector channels, expected {v}", node.len())));
            }
            for ch in node {
                if ch.len() != self.d {
                    return Err(GeoError::DimensionMismatch { expected: self.d, got: ch.len() });
                }
                flat.extend_from_slice(ch);
            }
        }
        self.v = v;
        self.vectors = flat;
        Ok(self)
    }

    /// Replaces vector features from a flat `n × v × d` buffer.
    pub fn with_vectors_flat(mut self, v: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != self.n * v * self.d {
            return Err(GeoError::DimensionMismatch { expected: self.n * v * self.d, got: vectors.len() });
        }
        self.v = v;
        self.vectors = vectors;
        Ok(self)
    }

    /// Same nodes and features, new adjacency.
    pub fn with_edges(mut self, edges: &[(usize, usize)]) -> Result<Self> {
        self.edges = normalize_edges(self.n, edges)?;
        self.neighbors = neighbor_lists(self.n, &self.edges);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn scalar_width(&self) -> usize {
        self.f
    }

    pub fn vector_channels(&self) -> usize {
        self.v
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn scalars(&self) -> &[f64] {
        &self.scalars
    }

    pub fn scalar_row(&self, i: usize) -> &[f64] {
        &self.scalars[i * self.f..(i + 1) * self.f]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    /// Channel `c` of node `i`.
    pub fn vector(&self, i: usize, c: usize) -> &[f64] {
        let start = (i * self.v + c) * self.d;
        &self.vectors[start..start + self.d]
    }

    /// Undirected edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.coord(i), self.coord(j))
    }

    /// Full `n × n` Euclidean distance matrix.
    pub fn distance_matrix(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.sq_dist(i, j).sqrt();
            }
        }
        out
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                best = best.max(self.sq_dist(i, j));
            }
        }
        best.sqrt()
    }

    /// Subgraph induced by `nodes` (in the given order).
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in nodes.iter().enumerate() {
            if i >= self.n {
                return Err(invalid(format!("node {i} out of range")));
            }
            pos[i] = k;
        }
        let mut coords = Vec::with_capacity(nodes.len() * self.d);
        let mut scalars = Vec::with_capacity(nodes.len() * self.f);
        let mut vectors = Vec::with_capacity(nodes.len() * self.v * self.d);
        for &i in nodes {
            coords.extend_from_slice(self.coord(i));
            scalars.extend_from_slice(self.scalar_row(i));
            let vs = i * self.v * self.d;
            vectors.extend_from_slice(&self.vectors[vs..vs + self.v * self.d]);
        }
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|&&(a, b)| pos[a] != usize::MAX && pos[b] != usize::MAX)
            .map(|&(a, b)| (pos[a], pos[b]))
            .collect();
        Self::from_parts(self.d, coords, &edges, self.f, scalars, self.v, vectors)
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(GeoError::DimensionMismatch { expected: self.n, got: perm.len() });
        }
        let mut inverse = vec![usize::MAX; self.n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= self.n || inverse[p] != usize::MAX {
                return Err(invalid("not a permutation"));
            }
            inverse[p] = i;
        }
        let g = self.induced_subgraph(&inverse)?;
        Ok(g)
    }
}

fn check_rows(n: usize, rows: &[Vec<f64>], what: &str) -> Result<usize> {
    if rows.len() != n {
        return Err(GeoError::DimensionMismatch { expected: n, got: rows.len() });
    }
    let w = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != w {
            return Err(invalid(format!("{what} row {i} has length {}, expected {w}", r.len())));
        }
    }
    Ok(w)
}

fn normalize_edges(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(invalid(format!("edge ({a}, {b}) references a node outside 0..{n}")));
        }
        if a == b {
            return Err(invalid(format!("self-loop on node {a}")));
        }
        out.push((a.min(b), a.max(b)));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn neighbor_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); n];
    for &(a, b) in edges {
        nb[a].push(b);
        nb[b].push(a);
    }
    for l in &mut nb {
        l.sort_unstable();
    }
    nb
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// An element of E(d): `x ↦ R·x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidMotion {
    rotation: Vec<f64>,
    translation: Vec<f64>,
    proper: bool,
}

impl RigidMotion {
    /// `rotation` is row-major `d × d` and must be orthogonal within 1e-12.
    pub fn new(rotation: Vec<f64>, translation: Vec<f64>) -> Result<Self> {
        let d = translation.len();
        if rotation.len() != d * d {
            return Err(GeoError::DimensionMismatch { expected: d * d, got: rotation.len() });
        }
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|k| rotation[k * d + i] * rotation[k * d + j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-12 {
                    return Err(invalid("rotation matrix is not orthogonal"));
                }
            }
        }
        let det = determinant(&rotation, d);
        Ok(Self { rotation, translation, proper: det > 0.0 })
    }

    pub fn identity(d: usize) -> Self {
        let mut rotation = vec![0.0; d * d];
        for i in 0..d {
            rotation[i * d + i] = 1.0;
        }
        Self { rotation, translation: vec![0.0; d], proper: true }
    }

    /// Haar-ish random orthogonal matrix via Gram-Schmidt on a Gaussian
    /// matrix, with the determinant forced to +1 (`proper`) or −1, plus a
    /// Gaussian translation scaled by `shift`.
    pub fn random<R: Rng + ?Sized>(d: usize, proper: bool, shift: f64, rng: &mut R) -> Self {
        let mut q = vec![0.0; d * d];
        // columns of q
        for c in 0..d {
            loop {
                let mut col: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                // two passes keep the columns orthogonal to rounding error
                for _ in 0..2 {
                    for p in 0..c {
                        let dot: f64 = (0..d).map(|k| col[k] * q[k * d + p]).sum();
                        for k in 0..d {
                            col[k] -= dot * q[k * d + p];
                        }
                    }
                }
                let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    for k in 0..d {
                        q[k * d + c] = col[k] / norm;
                    }
                    break;
                }
            }
        }
        let det = determinant(&q, d);
        if (det > 0.0) != proper {
            for k in 0..d {
                q[k * d] = -q[k * d];
            }
        }
        let translation = (0..d).map(|_| shift * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { rotation: q, translation, proper }
    }

    /// Reflection through the plane orthogonal to the first axis.
    pub fn mirror(d: usize) -> Self {
        let mut m = Self::identity(d);
        m.rotation[0] = -1.0;
        m.proper = false;
        m
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn rotation(&self) -> &[f64] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64] {
        &self.translation
    }

    pub fn is_proper(&self) -> bool {
        self.proper
    }

    /// `R·x`.
    pub fn rotate(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|r| (0..d).map(|c| self.rotation[r * d + c] * x[c]).sum()).collect()
    }

    /// `R·x + t`.
    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.rotate(x);
        for (yi, ti) in y.iter_mut().zip(&self.translation) {
            *yi += ti;
        }
        y
    }

    /// The motion that applies `self` first, then `next`.
    pub fn then(&self, next: &RigidMotion) -> RigidMotion {
        let d = self.dim();
        let mut rotation = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                rotation[i * d + j] = (0..d).map(|k| next.rotation[i * d + k] * self.rotation[k * d + j]).sum();
            }
        }
        let translation = next.apply_point(&self.translation);
        RigidMotion { rotation, translation, proper: self.proper == next.proper }
    }
}

fn determinant(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => {
            // Gaussian elimination with partial pivoting.
            let mut a = m.to_vec();
            let mut det = 1.0;
            for c in 0..d {
                let p = (c..d).max_by(|&x, &y| a[x * d + c].abs().total_cmp(&a[y * d + c].abs())).unwrap();
                if a[p * d + c] == 0.0 {
                    return 0.0;
                }
                if p != c {
                    for k in 0..d {
                        a.swap(p * d + k, c * d + k);
                    }
                    det = -det;
                }
                det *= a[c * d + c];
                for r in c + 1..d {
                    let factor = a[r * d + c] / a[c * d + c];
                    for k in c..d {
                        a[r * d + k] -= factor * a[c * d + k];
                    }
                }
            }
            det
        }
    }
}

/// Moves coordinates by `m`; vector channels are rotated but not translated.
pub fn apply_motion(g: &GeometricGraph, m: &RigidMotion) -> Result<GeometricGraph> {
    if m.dim() != g.d {
        return Err(GeoError::DimensionMismatch { expected: g.d, got: m.dim() });
    }
    let mut out = g.clone();
    for i in 0..g.n {
        let y = m.apply_point(g.coord(i));
        out.coords[i * g.d..(i + 1) * g.d].copy_from_slice(&y);
        for c in 0..g.v {
            let y = m.rotate(g.vector(i, c));
            let start = (i * g.v + c) * g.d;
            out.vectors[start..start + g.d].copy_from_slice(&y);
        }
    }
    Ok(out)
}

/// Symmetrized k-nearest-neighbor edge set over flat `n × d` coordinates.
///
/// Each node links to its `min(k, n-1)` nearest others; ties go to the
/// lower node index. The directed relation is symmetrized by union.
pub fn knn_edges(coords: &[f64], d: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if d == 0 || !coords.len().is_multiple_of(d) || coords.is_empty() {
        return Err(invalid("coordinate buffer must hold at least one d-dimensional point"));
    }
    if coords.iter().any(|x| !x.is_finite()) {
        return Err(invalid("coordinates must be finite"));
    }
    let n = coords.len() / d;
    let k = k.min(n - 1);
    let mut edges = Vec::with_capacity(n * k);
    let mut taken = vec![false; n];
    for i in 0..n {
        let xi = &coords[i * d..(i + 1) * d];
        let dist: Vec<f64> = (0..n).map(|j| sq_dist(xi, &coords[j * d..(j + 1) * d])).collect();
        taken.iter_mut().for_each(|t| *t = false);
        taken[i] = true;
        for _ in 0..k {
            let mut best = usize::MAX;
            for j in 0..n {
                if taken[j] {
                    continue;
                }
                if best == usize::MAX || strictly_less(dist[j], dist[best]) {
                    best = j;
                }
            }
            taken[best] = true;
            edges.push((i.min(best), i.max(best)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

/// Geometry of one directed edge: `relative_position = x_source − x_target`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGeometry {
    pub source: usize,
    pub target: usize,
    pub relative_position: Vec<f64>,
    pub distance: f64,
}

/// One record per directed edge, grouped by source node in ascending order.
pub fn edge_geometry(g: &GeometricGraph) -> Vec<EdgeGeometry> {
    let mut out = Vec::with_capacity(2 * g.edges.len());
    for i in 0..g.n {
        for &j in g.neighbors(i) {
            let rel: Vec<f64> = g.coord(i).iter().zip(g.coord(j)).map(|(a, b)| a - b).collect();
            let distance = rel.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.push(EdgeGeometry { source: i, target: j, relative_position: rel, distance });
        }
    }
    out
}

/// On-disk JSON form of a graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub d: usize,
    pub edges: Vec<[usize; 2]>,
    pub coords: Vec<Vec<f64>>,
    #[serde(default)]
    pub scalars: Vec<Vec<f64>>,
    #[serde(default)]
    pub vectors: Vec<Vec<Vec<f64>>>,
}

impl From<&GeometricGraph> for GraphJson {
    fn from(g: &GeometricGraph) -> Self {
        GraphJson {
            n: g.n,
            d: g.d,
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
            coords: (0..g.n).map(|i| g.coord(i).to_vec()).collect(),
            scalars: (0..g.n).map(|i| g.scalar_row(i).to_vec()).collect(),
            vectors: (0..g.n).map(|i| (0..g.v).map(|c| g.vector(i, c).to_vec()).collect()).collect(),
        }
    }
}

impl TryFrom<GraphJson> for GeometricGraph {
    type Error = GeoError;

    fn try_from(j: GraphJson) -> Result<Self> {
        if j.coords.len() != j.n {
            return Err(GeoError::DimensionMismatch { expected: j.n, got: j.coords.len() });
        }
        let edges: Vec<(usize, usize)> = j.edges.iter().map(|e| (e[0], e[1])).collect();
        let mut coords = Vec::with_capacity(j.n * j.d);
        for row in &j.coords {
            if row.len() != j.d {
                return Err(GeoError::DimensionMismatch { expected: j.d, got: row.len() });
            }
            coords.extend_from_slice(row);
        }
        let mut g = GeometricGraph::from_parts(j.d, coords, &edges, 0, Vec::new(), 0, Vec::new())?;
        if !j.scalars.is_empty() {
            g = g.with_scalars(j.scalars)?;
        }
        if !j.vectors.is_empty() && !j.vectors[0].is_empty() {
            g = g.with_vectors(j.vectors)?;
        }
        Ok(g)
    }
}

impl GeometricGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphJson::from(self)).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: GraphJson = serde_json::from_str(text)?;
        GeometricGraph::try_from(j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> GeometricGraph {
        let coords: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let flat: Vec<f64> = coords.iter().flatten().copied().collect();
        let edges = knn_edges(&flat, 3, 3).unwrap();
        let vectors = (0..n).map(|_| vec![(0..3).map(|_| rng.random_range(-1.0..1.0)).collect()]).collect();
        GeometricGraph::new(coords, &edges)
            .unwrap()
            .with_scalars((0..n).map(|i| vec![i as f64]).collect())
            .unwrap()
            .with_vectors(vectors)
            .unwrap()
    }

    #[test]
    fn identity_motion_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(8, &mut rng);
        let h = apply_motion(&g, &RigidMotion::identity(3)).unwrap();
        for (a, b) in g.coords().iter().zip(h.coords()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(g.vectors(), h.vectors());
        assert_eq!(g.edges(), h.edges());
    }

    #[test]
    fn composed_motion_matches_successive_motions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(8, &mut rng);
        let a = RigidMotion::random(3, true, 1.0, &mut rng);
        let b = RigidMotion::random(3, false, 1.0, &mut rng);
        let two_steps = apply_motion(&apply_motion(&g, &a).unwrap(), &b).unwrap();
        let once = apply_motion(&g, &a.then(&b)).unwrap();
        for (x, y) in two_steps.coords().iter().zip(once.coords()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(!a.then(&b).is_proper());
    }

    #[test]
    fn random_rotation_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(10, &mut rng);
        for proper in [true, false] {
            let m = RigidMotion::random(3, proper, 3.0, &mut rng);
            assert_eq!(m.is_proper(), proper);
            let h = apply_motion(&g, &m).unwrap();
            for (a, b) in g.distance_matrix().iter().zip(h.distance_matrix()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn motion_dimension_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(5, &mut rng);
        assert!(matches!(apply_motion(&g, &RigidMotion::identity(2)), Err(GeoError::DimensionMismatch { .. })));
    }

    #[test]
    fn non_orthogonal_rotation_rejected() {
        assert!(RigidMotion::new(vec![1.0, 0.1, 0.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn knn_on_a_line() {
        let coords = [0.0, 0.0, 1.0, 0.0, 5.0, 0.0];
        assert_eq!(knn_edges(&coords, 2, 1).unwrap(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn knn_large_k_is_complete() {
        let coords = [0.0, 0.0, 1.0, 0.3, 5.0, 0.0, 2.0, 2.0];
        let e = knn_edges(&coords, 2, 10).unwrap();
        assert_eq!(e, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn knn_unit_square_skips_diagonals() {
        let coords = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        // brute-force: sides have length 1, diagonals sqrt(2)
        let mut expected = Vec::new();
        for i in 0..4usize {
            for j in i + 1..4 {
                let d = sq_dist(&coords[2 * i..2 * i + 2], &coords[2 * j..2 * j + 2]);
                if d < 1.5 {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(knn_edges(&coords, 2, 2).unwrap(), expected);
    }

    #[test]
    fn knn_tie_prefers_lower_index() {
        // node 0 is equidistant from 1 and 2; 1 and 2 have closer partners
        let coords = [0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.5, 0.0, -1.5, 0.0];
        let e = knn_edges(&coords, 2, 1).unwrap();
        assert_eq!(e, vec![(0, 1), (1, 3), (2, 4)]);
    }

    #[test]
    fn knn_rejects_non_finite() {
        assert!(knn_edges(&[0.0, f64::NAN], 2, 1).is_err());
    }

    #[test]
    fn edge_geometry_basic_and_antisymmetric() {
        let g = GeometricGraph::new(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]], &[(0, 1)]).unwrap();
        let recs = edge_geometry(&g);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].source, 0);
        assert_eq!(recs[0].relative_position, vec![-1.0, 0.0, 0.0]);
        assert_eq!(recs[0].distance, 1.0);
        let back: Vec<f64> = recs[1].relative_position.iter().map(|x| -x).collect();
        assert_eq!(recs[0].relative_position, back);
    }

    #[test]
    fn edge_geometry_rotates_with_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(9, &mut rng);
        let m = RigidMotion::random(3, true, 2.0, &mut rng);
        let h = apply_motion(&g, &m).unwrap();
        for (a, b) in edge_geometry(&g).iter().zip(edge_geometry(&h)) {
            let ra = m.rotate(&a.relative_position);
            for (x, y) in ra.iter().zip(&b.relative_position) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((a.distance - b.distance).abs() < 1e-12);
        }
    }

    #[test]
    fn self_loops_rejected() {
        assert!(GeometricGraph::new(vec![vec![0.0, 0.0]], &[(0, 0)]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_graph(7, &mut rng);
        let back = GeometricGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn permute_relabels_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_graph(6, &mut rng);
        let perm = [3, 0, 5, 1, 2, 4];
        let p = g.permute(&perm).unwrap();
        for i in 0..6 {
            assert_eq!(g.coord(i), p.coord(perm[i]));
            assert_eq!(g.scalar_row(i), p.scalar_row(perm[i]));
        }
        for &(a, b) in g.edges() {
            assert!(p.has_edge(perm[a], perm[b]));
        }
    }
}
