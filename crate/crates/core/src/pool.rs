//! Select-reduce-connect pooling for geometric graphs.
//!
//! Selection runs farthest point sampling over coordinates. Point pooling
//! clusters each center with its 1-hop neighbourhood (clusters may overlap);
//! sparse pooling sends every node to its nearest center (a partition).
//! Supernodes keep the exact coordinates of their centers and are
//! reconnected with a KNN graph.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeoError, Result};
use crate::geom::{knn_edges, sq_dist, strictly_less, GeometricGraph, GraphJson};
use crate::tensor::{Mlp, ParamStore, Tape, Tensor};

/// FPS sampling ratio used at every pooling level.
pub const DEFAULT_FPS_RATIO: f64 = 0.6;
/// Neighbour count for reconnecting supernodes.
pub const DEFAULT_KNN_K: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Point,
    Sparse,
}

impl std::str::FromStr for PoolKind {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(PoolKind::Point),
            "sparse" => Ok(PoolKind::Sparse),
            other => Err(invalid(format!("unknown pool kind `{other}` (expected point|sparse)"))),
        }
    }
}

impl std::fmt::Display for PoolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolKind::Point => "point",
            PoolKind::Sparse => "sparse",
        })
    }
}

/// Binary `K × N` membership matrix, stored supernode-major as member lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    num_nodes: usize,
    centers: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    /// Validates that centers are distinct, each center belongs to its own
    /// cluster and every node belongs somewhere.
    pub fn new(num_nodes: usize, centers: Vec<usize>, mut members: Vec<Vec<usize>>) -> Result<Self> {
        if centers.len() != members.len() {
            return Err(GeoError::DimensionMismatch { expected: centers.len(), got: members.len() });
        }
        let mut seen = vec![false; num_nodes];
        for &c in &centers {
            if c >= num_nodes {
                return Err(invalid(format!("center {c} out of range")));
            }
            if seen[c] {
                return Err(invalid(format!("center {c} selected twice")));
            }
            seen[c] = true;
        }
        let mut covered = vec![false; num_nodes];
        for (j, m) in members.iter_mut().enumerate() {
            m.sort_unstable();
            m.dedup();
            if m.binary_search(&centers[j]).is_err() {
                return Err(invalid(format!("center {} missing from its own cluster", centers[j])));
            }
            for &i in m.iter() {
                if i >= num_nodes {
                    return Err(invalid(format!("member {i} out of range")));
                }
                covered[i] = true;
            }
        }
        let orphans: Vec<usize> = (0..num_nodes).filter(|&i| !covered[i]).collect();
        if !orphans.is_empty() {
            return Err(GeoError::OrphanNodes(orphans));
        }
        Ok(Self { num_nodes, centers, members })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Sorted members of supernode `j`.
    pub fn members(&self, j: usize) -> &[usize] {
        &self.members[j]
    }

    /// `C[j][i]`.
    pub fn entry(&self, j: usize, i: usize) -> f64 {
        if self.members[j].binary_search(&i).is_ok() {
            1.0
        } else {
            0.0
        }
    }

    /// Total membership of each node (column sums of `C`).
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.num_nodes];
        for m in &self.members {
            for &i in m {
                s[i] += 1.0;
            }
        }
        s
    }

    /// Dense `K × N` matrix.
    pub fn to_dense(&self) -> Tensor {
        let (k, n) = (self.num_clusters(), self.num_nodes);
        let mut t = Tensor::zeros(k, n);
        for (j, m) in self.members.iter().enumerate() {
            for &i in m {
                t.values_mut()[j * n + i] = 1.0;
            }
        }
        t
    }

    /// Non-zero entries as `(supernode, node)` pairs, supernode-major.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.members.iter().enumerate().flat_map(|(j, m)| m.iter().map(move |&i| (j, i))).collect()
    }

    /// Sparse triplets `(j, i, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.pairs().into_iter().map(|(j, i)| (j, i, 1.0)).collect()
    }
}

fn target_count(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(invalid(format!("sampling ratio must lie in (0, 1], got {ratio}")));
    }
    // the epsilon keeps e.g. 0.6 * 60 from rounding up to 37
    Ok(((ratio * n as f64) - 1e-9).ceil().max(1.0) as usize)
}

/// Greedy farthest point sampling of `ceil(ratio · n)` indices.
///
/// The first pick is `start`; each next pick maximizes the distance to the
/// already selected set, ties going to the lower index.
pub fn fps_select(coords: &[f64], d: usize, ratio: f64, start: usize) -> Result<Vec<usize>> {
    if d == 0 || coords.is_empty() || !coords.len().is_multiple_of(d) {
        return Err(invalid("need at least one d-dimensional point"));
    }
    let n = coords.len() / d;
    if start >= n {
        return Err(invalid(format!("start node {start} out of range for {n} nodes")));
    }
    let k = target_count(n, ratio)?;
    fps_select_count(coords, d, k, start)
}

/// Farthest point sampling of exactly `k` points.
pub fn fps_select_count(coords: &[f64], d: usize, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = coords.len() / d;
    if k == 0 || k > n {
        return Err(invalid(format!("cannot select {k} of {n} nodes")));
    }
    let point = |i: usize| &coords[i * d..(i + 1) * d];
    let mut selected = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = start;
    for _ in 0..k {
        selected.push(next);
        chosen[next] = true;
        for i in 0..n {
            let dd = sq_dist(point(i), point(next));
            if dd < min_dist[i] {
                min_dist[i] = dd;
            }
        }
        let mut best = usize::MAX;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            if best == usize::MAX || strictly_less(min_dist[best], min_dist[i]) {
                best = i;
            }
        }
        next = best;
    }
    Ok(selected)
}

/// Start node for pooling: the node farthest from the centroid, lowest
/// index on ties. Depends only on the point set, not on its placement in
/// space or on node order (up to exact ties).
pub fn default_fps_start(coords: &[f64], d: usize) -> usize {
    let n = coords.len() / d;
    let mut centroid = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            centroid[k] += coords[i * d + k];
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);
    let mut best = 0;
    let mut best_d = sq_dist(&coords[..d], &centroid);
    for i in 1..n {
        let dd = sq_dist(&coords[i * d..(i + 1) * d], &centroid);
        if strictly_less(best_d, dd) {
            best = i;
            best_d = dd;
        }
    }
    best
}

/// FPS with the default start rule.
pub fn select_centers(g: &GeometricGraph, ratio: f64) -> Result<Vec<usize>> {
    fps_select(g.coords(), g.dim(), ratio, default_fps_start(g.coords(), g.dim()))
}

fn check_centers(g: &GeometricGraph, centers: &[usize]) -> Result<()> {
    if centers.is_empty() {
        return Err(invalid("at least one center is required"));
    }
    if let Some(&c) = centers.iter().find(|&&c| c >= g.num_nodes()) {
        return Err(invalid(format!("center {c} out of range")));
    }
    Ok(())
}

/// Point pooling: supernode `j` holds its center and the center's 1-hop
/// neighbours. Nodes reached by no center are an error.
pub fn point_pool_assign(g: &GeometricGraph, centers: &[usize]) -> Result<ClusterAssignment> {
    check_centers(g, centers)?;
    let members = centers
        .iter()
        .map(|&c| {
            let mut m = g.neighbors(c).to_vec();
            m.push(c);
            m
        })
        .collect();
    ClusterAssignment::new(g.num_nodes(), centers.to_vec(), members)
}

/// Sparse pooling: every node joins its nearest center (lower center
/// position on ties); centers join themselves.
pub fn sparse_pool_assign(g: &GeometricGraph, centers: &[usize]) -> Result<ClusterAssignment> {
    check_centers(g, centers)?;
    let mut members = vec![Vec::new(); centers.len()];
    let mut center_slot = vec![usize::MAX; g.num_nodes()];
    for (j, &c) in centers.iter().enumerate() {
        center_slot[c] = j;
    }
    for i in 0..g.num_nodes() {
        if center_slot[i] != usize::MAX {
            members[center_slot[i]].push(i);
            continue;
        }
        let mut best = 0;
        let mut best_d = g.sq_dist(i, centers[0]);
        for (j, &c) in centers.iter().enumerate().skip(1) {
            let dd = g.sq_dist(i, c);
            if strictly_less(dd, best_d) {
                best = j;
                best_d = dd;
            }
        }
        members[best].push(i);
    }
    ClusterAssignment::new(g.num_nodes(), centers.to_vec(), members)
}

pub fn assign(kind: PoolKind, g: &GeometricGraph, centers: &[usize]) -> Result<ClusterAssignment> {
    match kind {
        PoolKind::Point => point_pool_assign(g, centers),
        PoolKind::Sparse => sparse_pool_assign(g, centers),
    }
}

fn check_assignment(g: &GeometricGraph, c: &ClusterAssignment) -> Result<()> {
    if c.num_nodes() != g.num_nodes() {
        return Err(GeoError::DimensionMismatch { expected: g.num_nodes(), got: c.num_nodes() });
    }
    Ok(())
}

/// Linear reduction `Cᵀ·S`, `Cᵀ·V`: pooled scalars `K × f` and pooled vectors
/// in graph layout `K × v × d`.
pub fn sum_reduce(g: &GeometricGraph, c: &ClusterAssignment) -> Result<(Tensor, Vec<f64>)> {
    check_assignment(g, c)?;
    let (f, v, d) = (g.scalar_width(), g.vector_channels(), g.dim());
    let k = c.num_clusters();
    let mut s = Tensor::zeros(k, f);
    let mut vecs = vec![0.0; k * v * d];
    for (j, i) in c.pairs() {
        for (o, x) in s.values_mut()[j * f..(j + 1) * f].iter_mut().zip(g.scalar_row(i)) {
            *o += x;
        }
        let src = &g.vectors()[i * v * d..(i + 1) * v * d];
        for (o, x) in vecs[j * v * d..(j + 1) * v * d].iter_mut().zip(src) {
            *o += x;
        }
    }
    Ok((s, vecs))
}

/// Sparse-pool reduction: pure sums over each cluster.
pub fn sparse_pool_reduce(g: &GeometricGraph, c: &ClusterAssignment) -> Result<(Tensor, Vec<f64>)> {
    sum_reduce(g, c)
}

/// Point-pool reduction: `MLP(Cⱼᵀ S)` for scalars, plain sums for vectors.
pub fn point_pool_reduce(
    g: &GeometricGraph,
    c: &ClusterAssignment,
    mlp: &Mlp,
    params: &ParamStore,
) -> Result<(Tensor, Vec<f64>)> {
    if mlp.in_width() != g.scalar_width() {
        return Err(GeoError::DimensionMismatch { expected: g.scalar_width(), got: mlp.in_width() });
    }
    let (summed, vecs) = sum_reduce(g, c)?;
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let x = tape.leaf(summed);
    let y = mlp.forward(&mut tape, &binding, x)?;
    Ok((tape.value(y).clone(), vecs))
}

/// Reconnects supernodes with a symmetrized KNN graph.
pub fn connect(pool_coords: &[f64], d: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    knn_edges(pool_coords, d, k)
}

/// Coordinates of the centers, copied bit for bit.
pub fn center_coords(g: &GeometricGraph, centers: &[usize]) -> Vec<f64> {
    centers.iter().flat_map(|&c| g.coord(c).iter().copied()).collect()
}

/// A pooled graph plus everything the matching unpool needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolResult {
    pub pooled: GeometricGraph,
    pub assignment: ClusterAssignment,
    /// Pre-pool scalars, `N × f`.
    pub cached_scalars: Tensor,
    /// Pre-pool vectors, graph layout `N × v × d`.
    pub cached_vectors: Vec<f64>,
    pub original_coords: Vec<f64>,
    pub original_edges: Vec<(usize, usize)>,
}

impl PoolResult {
    pub fn num_supernodes(&self) -> usize {
        self.assignment.num_clusters()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PoolResultJson::from(self)).expect("pool result serialization cannot fail")
    }
}

/// Graph JSON of the pooled graph plus centers and sparse `C`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolResultJson {
    #[serde(flatten)]
    pub graph: GraphJson,
    pub centers: Vec<usize>,
    #[serde(rename = "C")]
    pub assignment: Vec<(usize, usize, f64)>,
}

impl From<&PoolResult> for PoolResultJson {
    fn from(p: &PoolResult) -> Self {
        PoolResultJson {
            graph: GraphJson::from(&p.pooled),
            centers: p.assignment.centers().to_vec(),
            assignment: p.assignment.triplets(),
        }
    }
}

/// Structural pooling: FPS selection, the chosen assignment, linear sum
/// reduction and KNN reconnection. No learned parameters are involved.
pub fn pool_graph(g: &GeometricGraph, kind: PoolKind, ratio: f64, knn_k: usize) -> Result<PoolResult> {
    let centers = select_centers(g, ratio)?;
    pool_with_centers(g, kind, &centers, knn_k)
}

pub fn pool_with_centers(g: &GeometricGraph, kind: PoolKind, centers: &[usize], knn_k: usize) -> Result<PoolResult> {
    let assignment = assign(kind, g, centers)?;
    let (s, v) = sum_reduce(g, &assignment)?;
    let coords = center_coords(g, centers);
    let edges = connect(&coords, g.dim(), knn_k)?;
    let pooled = GeometricGraph::from_parts(
        g.dim(),
        coords,
        &edges,
        g.scalar_width(),
        s.into_values(),
        g.vector_channels(),
        v,
    )?;
    Ok(PoolResult {
        pooled,
        assignment,
        cached_scalars: Tensor::new(g.num_nodes(), g.scalar_width(), g.scalars().to_vec())?,
        cached_vectors: g.vectors().to_vec(),
        original_coords: g.coords().to_vec(),
        original_edges: g.edges().to_vec(),
    })
}

/// Restores the pre-pool node set.
///
/// Centers take their features from `current`; every other node gets the
/// shared `fill_scalars` row and zero vectors. The cached pre-pool features
/// are then concatenated on (scalars along columns, vectors along channels).
pub fn unpool(current: &GeometricGraph, cache: &PoolResult, fill_scalars: &[f64]) -> Result<GeometricGraph> {
    let centers = cache.assignment.centers();
    if current.num_nodes() != centers.len() {
        return Err(invalid(format!(
            "unpool expects {} supernodes, got {}",
            centers.len(),
            current.num_nodes()
        )));
    }
    let d = current.dim();
    for (j, &c) in centers.iter().enumerate() {
        if current.coord(j) != &cache.original_coords[c * d..(c + 1) * d] {
            return Err(invalid(format!("supernode {j} does not sit on center {c}")));
        }
    }
    let f = current.scalar_width();
    if fill_scalars.len() != f {
        return Err(GeoError::DimensionMismatch { expected: f, got: fill_scalars.len() });
    }
    let n = cache.assignment.num_nodes();
    let (fc, vc) = (cache.cached_scalars.cols(), cache.cached_vectors.len() / (n * d).max(1));
    let v = current.vector_channels();
    let mut slot = vec![usize::MAX; n];
    for (j, &c) in centers.iter().enumerate() {
        slot[c] = j;
    }
    let mut scalars = Vec::with_capacity(n * (f + fc));
    let mut vectors = Vec::with_capacity(n * (v + vc) * d);
    for i in 0..n {
        match slot[i] {
            usize::MAX => {
                scalars.extend_from_slice(fill_scalars);
                vectors.extend(std::iter::repeat_n(0.0, v * d));
            }
            j => {
                scalars.extend_from_slice(current.scalar_row(j));
                vectors.extend_from_slice(&current.vectors()[j * v * d..(j + 1) * v * d]);
            }
        }
        scalars.extend_from_slice(cache.cached_scalars.row(i));
        vectors.extend_from_slice(&cache.cached_vectors[i * vc * d..(i + 1) * vc * d]);
    }
    GeometricGraph::from_parts(d, cache.original_coords.clone(), &cache.original_edges, f + fc, scalars, v + vc, vectors)
}
