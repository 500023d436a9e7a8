//! Geometric and invariant Weisfeiler-Leman colour refinement.
//!
//! Colours are stable 64-bit content hashes. Every geometric quantity is
//! quantized to [`QUANTUM`] before it is hashed, so congruent inputs hash
//! identically unless a value sits on a rounding boundary.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, GeoError, Result};
use crate::geom::{knn_edges, GeometricGraph};
use crate::pool::{assign, center_coords, connect, select_centers, ClusterAssignment, PoolKind, DEFAULT_FPS_RATIO};

/// Quantization step for lengths, inner products and volumes.
pub const QUANTUM: f64 = 1e-6;
/// Largest payload a node may carry.
pub const PAYLOAD_CAP: usize = 4096;
/// Threshold on feature-sum differences for the first pooling condition.
pub const SUM_TOLERANCE: f64 = 1e-9;

fn q(x: f64) -> i64 {
    (x / QUANTUM).round() as i64
}

/// Byte sink producing a 64-bit digest.
struct ColorHasher(Sha256);

impl ColorHasher {
    fn new(tag: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(tag);
        ColorHasher(h)
    }

    fn u64(&mut self, x: u64) {
        self.0.update(x.to_le_bytes());
    }

    fn i64(&mut self, x: i64) {
        self.0.update(x.to_le_bytes());
    }

    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }

    fn finish(self) -> u64 {
        let out = self.0.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "SO")]
    Special,
    #[serde(rename = "O")]
    Orthogonal,
}

/// Symmetry group the geometric test is invariant to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group: Group,
    pub dim: usize,
}

impl GroupSpec {
    pub fn orthogonal(dim: usize) -> Self {
        GroupSpec { group: Group::Orthogonal, dim }
    }

    pub fn special(dim: usize) -> Self {
        GroupSpec { group: Group::Special, dim }
    }

    fn validate(&self, g: &GeometricGraph) -> Result<()> {
        if !(2..=3).contains(&self.dim) {
            return Err(invalid(format!("group dimension must be 2 or 3, got {}", self.dim)));
        }
        if self.dim != g.dim() {
            return Err(GeoError::DimensionMismatch { expected: self.dim, got: g.dim() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Gwl,
    Igwl,
}

impl std::str::FromStr for TestKind {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gwl" => Ok(TestKind::Gwl),
            "igwl" => Ok(TestKind::Igwl),
            other => Err(invalid(format!("unknown test `{other}` (expected gwl|igwl)"))),
        }
    }
}

/// Sorted node colours of one graph at one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColorMultiset(Vec<u64>);

impl ColorMultiset {
    pub fn new(colors: &[u64]) -> Self {
        let mut c = colors.to_vec();
        c.sort_unstable();
        ColorMultiset(c)
    }

    pub fn colors(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Colours plus, for the geometric test, each node's payload: every node
/// within `iteration` hops, tagged with its colour from the previous step.
#[derive(Debug, Clone)]
pub struct ColorState {
    pub colors: Vec<u64>,
    /// Node ids reachable within `iteration` hops (sorted, including self).
    pub payload: Vec<Vec<usize>>,
    pub iteration: usize,
}

/// Colours before any refinement: a hash of each node's quantized scalars.
pub fn initial_colors(g: &GeometricGraph) -> Vec<u64> {
    (0..g.num_nodes())
        .map(|i| {
            let mut h = ColorHasher::new(b"init");
            let row = g.scalar_row(i);
            h.len(row.len());
            row.iter().for_each(|&x| h.i64(q(x)));
            h.finish()
        })
        .collect()
}

/// Stepwise refinement of one graph.
#[derive(Debug, Clone)]
pub struct Refinement<'a> {
    g: &'a GeometricGraph,
    test: TestKind,
    group: Option<GroupSpec>,
    state: ColorState,
}

impl<'a> Refinement<'a> {
    pub fn igwl(g: &'a GeometricGraph) -> Self {
        Self::start(g, TestKind::Igwl, None)
    }

    pub fn gwl(g: &'a GeometricGraph, group: GroupSpec) -> Result<Self> {
        group.validate(g)?;
        Ok(Self::start(g, TestKind::Gwl, Some(group)))
    }

    pub fn new(g: &'a GeometricGraph, test: TestKind, group: GroupSpec) -> Result<Self> {
        match test {
            TestKind::Igwl => Ok(Self::igwl(g)),
            TestKind::Gwl => Self::gwl(g, group),
        }
    }

    fn start(g: &'a GeometricGraph, test: TestKind, group: Option<GroupSpec>) -> Self {
        let state =
            ColorState { colors: initial_colors(g), payload: (0..g.num_nodes()).map(|i| vec![i]).collect(), iteration: 0 };
        Refinement { g, test, group, state }
    }

    pub fn state(&self) -> &ColorState {
        &self.state
    }

    pub fn multiset(&self) -> ColorMultiset {
        ColorMultiset::new(&self.state.colors)
    }

    /// Advances one iteration.
    pub fn step(&mut self) -> Result<()> {
        let colors = match self.test {
            TestKind::Igwl => self.igwl_colors(),
            TestKind::Gwl => self.gwl_colors()?,
        };
        self.state.colors = colors;
        self.state.iteration += 1;
        Ok(())
    }

    fn rel(&self, i: usize, j: usize) -> Vec<f64> {
        self.g.coord(j).iter().zip(self.g.coord(i)).map(|(a, b)| a - b).collect()
    }

    fn igwl_colors(&self) -> Vec<u64> {
        let g = self.g;
        let prev = &self.state.colors;
        (0..g.num_nodes())
            .map(|i| {
                let nbrs = g.neighbors(i);
                let rels: Vec<Vec<f64>> = nbrs.iter().map(|&j| self.rel(i, j)).collect();
                let mut items: Vec<(u64, i64, Vec<(u64, i64)>)> = nbrs
                    .iter()
                    .enumerate()
                    .map(|(a, &j)| {
                        let mut angles: Vec<(u64, i64)> =
                            nbrs.iter().enumerate().map(|(b, &k)| (prev[k], q(dot(&rels[a], &rels[b])))).collect();
                        angles.sort_unstable();
                        (prev[j], q(dot(&rels[a], &rels[a]).sqrt()), angles)
                    })
                    .collect();
                items.sort_unstable();
                let mut h = ColorHasher::new(b"igwl");
                h.u64(prev[i]);
                h.len(items.len());
                for (c, r, angles) in items {
                    h.u64(c);
                    h.i64(r);
                    h.len(angles.len());
                    for (ck, a) in angles {
                        h.u64(ck);
                        h.i64(a);
                    }
                }
                h.finish()
            })
            .collect()
    }

    fn gwl_colors(&mut self) -> Result<Vec<u64>> {
        let g = self.g;
        let n = g.num_nodes();
        let mut payload = Vec::with_capacity(n);
        for i in 0..n {
            let mut set: Vec<usize> = self.state.payload[i].clone();
            for &j in g.neighbors(i) {
                set.extend_from_slice(&self.state.payload[j]);
            }
            set.sort_unstable();
            set.dedup();
            if set.len() > PAYLOAD_CAP {
                return Err(GeoError::PayloadTooLarge { node: i, size: set.len(), cap: PAYLOAD_CAP });
            }
            payload.push(set);
        }
        let prev = &self.state.colors;
        let special = matches!(self.group, Some(GroupSpec { group: Group::Special, .. }));
        let colors = (0..n)
            .map(|i| {
                let pts: Vec<(u64, Vec<f64>)> = payload[i].iter().map(|&p| (prev[p], self.rel(i, p))).collect();
                let mut h = ColorHasher::new(if special { b"gwl-so" } else { b"gwl-o" });
                h.u64(prev[i]);
                canonical_payload(&pts, special, &mut h);
                h.finish()
            })
            .collect();
        self.state.payload = payload;
        Ok(colors)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn det2(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn det3(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Order-independent invariant of a labelled point set: for every point,
/// its colour, squared norm and the sorted labelled row of its Gram matrix;
/// for SO(d) also the sorted labelled signed volumes it spans.
fn canonical_payload(pts: &[(u64, Vec<f64>)], special: bool, h: &mut ColorHasher) {
    let d = pts.first().map_or(0, |p| p.1.len());
    let mut rows: Vec<(u64, i64, Vec<(u64, i64)>, Vec<(u64, u64, i64)>)> = pts
        .iter()
        .map(|(c, p)| {
            let mut gram: Vec<(u64, i64)> = pts.iter().map(|(cq, x)| (*cq, q(dot(p, x)))).collect();
            gram.sort_unstable();
            let mut vols = Vec::new();
            if special {
                for (cq, x) in pts {
                    if d == 2 {
                        vols.push((*cq, 0, q(det2(p, x))));
                    } else {
                        for (cr, y) in pts {
                            vols.push((*cq, *cr, q(det3(p, x, y))));
                        }
                    }
                }
                vols.sort_unstable();
            }
            (*c, q(dot(p, p)), gram, vols)
        })
        .collect();
    rows.sort_unstable();
    h.len(rows.len());
    for (c, n2, gram, vols) in rows {
        h.u64(c);
        h.i64(n2);
        h.len(gram.len());
        for (cq, x) in gram {
            h.u64(cq);
            h.i64(x);
        }
        h.len(vols.len());
        for (a, b, v) in vols {
            h.u64(a);
            h.u64(b);
            h.i64(v);
        }
    }
}

fn partition_key(colors: &[u64]) -> Vec<usize> {
    let mut first_seen = BTreeMap::new();
    colors
        .iter()
        .map(|c| {
            let next = first_seen.len();
            *first_seen.entry(*c).or_insert(next)
        })
        .collect()
}

fn refine(mut r: Refinement<'_>, iters: usize) -> Result<Vec<ColorMultiset>> {
    if iters == 0 {
        return Err(invalid("need at least one iteration"));
    }
    let mut out = vec![r.multiset()];
    for _ in 0..iters {
        let before = partition_key(&r.state.colors);
        r.step()?;
        out.push(r.multiset());
        if partition_key(&r.state.colors) == before {
            break;
        }
    }
    Ok(out)
}

/// IGWL colour multisets for iterations `0..=iters`, stopping early once
/// the colour partition stops changing.
pub fn igwl_refine(g: &GeometricGraph, iters: usize) -> Result<Vec<ColorMultiset>> {
    refine(Refinement::igwl(g), iters)
}

/// GWL colour multisets for iterations `0..=iters`, stopping early once
/// the colour partition stops changing.
pub fn gwl_refine(g: &GeometricGraph, iters: usize, group: GroupSpec) -> Result<Vec<ColorMultiset>> {
    refine(Refinement::gwl(g, group)?, iters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distinguishability {
    pub distinguishable: bool,
    /// Smallest iteration at which the colour multisets differ.
    pub first_iteration: Option<usize>,
}

/// Runs both graphs in lockstep for up to `k` iterations (no early stop).
pub fn distinguishable(
    g1: &GeometricGraph,
    g2: &GeometricGraph,
    test: TestKind,
    k: usize,
    group: GroupSpec,
) -> Result<Distinguishability> {
    let mut a = Refinement::new(g1, test, group)?;
    let mut b = Refinement::new(g2, test, group)?;
    for it in 0..=k {
        if it > 0 {
            a.step()?;
            b.step()?;
        }
        if a.multiset() != b.multiset() {
            return Ok(Distinguishability { distinguishable: true, first_iteration: Some(it) });
        }
    }
    Ok(Distinguishability { distinguishable: false, first_iteration: None })
}

/// Whether the colour multisets differ exactly at iteration `i`.
pub fn currently_distinguishable(
    g1: &GeometricGraph,
    g2: &GeometricGraph,
    test: TestKind,
    i: usize,
    group: GroupSpec,
) -> Result<bool> {
    let mut a = Refinement::new(g1, test, group)?;
    let mut b = Refinement::new(g2, test, group)?;
    for _ in 0..i {
        a.step()?;
        b.step()?;
    }
    Ok(a.multiset() != b.multiset())
}

/// How a pooling layer reduces features into supernodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceKind {
    /// `Cᵀ X`.
    Linear,
    /// `MLP(Cᵀ S)`.
    Mlp,
}

impl From<PoolKind> for ReduceKind {
    fn from(k: PoolKind) -> Self {
        match k {
            PoolKind::Sparse => ReduceKind::Linear,
            PoolKind::Point => ReduceKind::Mlp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Maintains,
    CannotCertify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub cond1_scalar: bool,
    pub cond1_vector: bool,
    /// Common column sum of both membership matrices, when there is one.
    pub cond2_lambda: Option<f64>,
    pub cond3_linear: bool,
    pub verdict: Verdict,
}

/// Pre-pool features of one graph together with its membership matrix.
#[derive(Debug, Clone, Copy)]
pub struct PoolInputs<'a> {
    /// `N × f`, row-major.
    pub scalars: &'a [f64],
    pub scalar_width: usize,
    /// Flattened vectors, any layout; only their sum per component matters.
    pub vectors: &'a [f64],
    pub dim: usize,
    pub assignment: &'a ClusterAssignment,
}

fn column_sum(values: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    if width > 0 {
        for row in values.chunks(width) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
    }
    out
}

fn sums_differ(a: &[f64], b: &[f64]) -> bool {
    a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x - y).abs() > SUM_TOLERANCE)
}

/// Audits the three sufficient conditions under which pooling keeps a
/// distinguishable pair distinguishable.
pub fn check_theorem1_conditions(a: &PoolInputs<'_>, b: &PoolInputs<'_>, reduce: ReduceKind) -> ConditionReport {
    let cond1_scalar = sums_differ(&column_sum(a.scalars, a.scalar_width), &column_sum(b.scalars, b.scalar_width));
    let cond1_vector = sums_differ(&column_sum(a.vectors, a.dim), &column_sum(b.vectors, b.dim));
    let common = |c: &ClusterAssignment| -> Option<f64> {
        let sums = c.column_sums();
        let first = *sums.first()?;
        sums.iter().all(|s| (s - first).abs() <= 1e-12).then_some(first)
    };
    let cond2_lambda = match (common(a.assignment), common(b.assignment)) {
        (Some(x), Some(y)) if x > 0.0 && (x - y).abs() <= 1e-12 => Some(x),
        _ => None,
    };
    let cond3_linear = reduce == ReduceKind::Linear;
    let verdict = if (cond1_scalar || cond1_vector) && cond2_lambda.is_some() && cond3_linear {
        Verdict::Maintains
    } else {
        Verdict::CannotCertify
    };
    ConditionReport { cond1_scalar, cond1_vector, cond2_lambda, cond3_linear, verdict }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    pub iteration: usize,
    pub nodes: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub pool_kind: PoolKind,
    pub seed: u64,
    pub trials: usize,
    /// Pairs that were not currently distinguishable at any tested iteration.
    pub vacuous: usize,
    /// Pairs skipped because pooling left nodes unassigned.
    pub skipped: usize,
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl EmpiricalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Iterations searched for a currently distinguishable step.
const EMPIRICAL_MAX_ITER: usize = 3;

/// Random 3-D graph with 6–12 nodes, KNN-connected, unit scalars.
fn random_small_graph<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<GeometricGraph> {
    let coords: Vec<f64> = (0..n * 3).map(|_| rng.random_range(0.0..3.0)).collect();
    let edges = knn_edges(&coords, 3, 3)?;
    GeometricGraph::from_parts(3, coords, &edges, 1, vec![1.0; n], 0, Vec::new())
}

fn trial_pair(rng: &mut ChaCha8Rng) -> Result<(GeometricGraph, GeometricGraph)> {
    let n = rng.random_range(6..=12);
    let g1 = random_small_graph(rng, n)?;
    let g2 = match rng.random_range(0..10) {
        // identical pair: never currently distinguishable
        0 => g1.clone(),
        // one node nudged: a near miss
        1..=4 => {
            let mut coords = g1.coords().to_vec();
            let i = rng.random_range(0..n);
            for k in 0..3 {
                coords[i * 3 + k] += rng.random_range(-0.3..0.3);
            }
            let edges = knn_edges(&coords, 3, 3)?;
            GeometricGraph::from_parts(3, coords, &edges, 1, vec![1.0; n], 0, Vec::new())?
        }
        _ => {
            let m = rng.random_range(6..=12);
            random_small_graph(rng, m)?
        }
    };
    Ok((g1, g2))
}

/// Pools `g` with one-hot colour features over `vocab` and a linear sum,
/// reconnecting supernodes with KNN.
fn pool_with_colors(g: &GeometricGraph, colors: &[u64], vocab: &[u64], kind: PoolKind) -> Result<GeometricGraph> {
    let centers = select_centers(g, DEFAULT_FPS_RATIO)?;
    let c = assign(kind, g, &centers)?;
    let f = vocab.len();
    let mut s = vec![0.0; c.num_clusters() * f];
    for (j, i) in c.pairs() {
        let slot = vocab.binary_search(&colors[i]).expect("vocabulary covers every colour");
        s[j * f + slot] += 1.0;
    }
    let coords = center_coords(g, &centers);
    let edges = connect(&coords, g.dim(), crate::pool::DEFAULT_KNN_K)?;
    GeometricGraph::from_parts(g.dim(), coords, &edges, f, s, 0, Vec::new())
}

fn refine_colors(g: &GeometricGraph, iters: usize) -> Vec<u64> {
    let mut r = Refinement::igwl(g);
    for _ in 0..iters {
        r.step().expect("IGWL cannot fail");
    }
    r.state.colors
}

/// Census of pooling on random pairs that IGWL currently distinguishes.
///
/// For a pair first separated at iteration `i`, node features become
/// one-hot IGWL colours at `i`; both graphs are pooled and the pooled pair
/// must again be IGWL-distinguishable. Trials run in parallel, each seeded
/// from `seed` and its own index.
pub fn empirical_maintains(kind: PoolKind, trials: usize, seed: u64) -> Result<EmpiricalReport> {
    use rayon::prelude::*;

    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    #[derive(Clone)]
    enum Outcome {
        Vacuous,
        Skipped,
        Held,
        Violated(Violation),
    }
    let outcomes: Vec<Outcome> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Outcome> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let (g1, g2) = trial_pair(&mut rng)?;
            let o3 = GroupSpec::orthogonal(3);
            let found = (0..=EMPIRICAL_MAX_ITER)
                .map(|i| currently_distinguishable(&g1, &g2, TestKind::Igwl, i, o3).map(|d| (i, d)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .find(|(_, d)| *d);
            let Some((i, _)) = found else { return Ok(Outcome::Vacuous) };
            let (c1, c2) = (refine_colors(&g1, i), refine_colors(&g2, i));
            let mut vocab: Vec<u64> = c1.iter().chain(&c2).copied().collect();
            vocab.sort_unstable();
            vocab.dedup();
            let pooled = pool_with_colors(&g1, &c1, &vocab, kind).and_then(|p1| {
                pool_with_colors(&g2, &c2, &vocab, kind).map(|p2| (p1, p2))
            });
            let (p1, p2) = match pooled {
                Ok(p) => p,
                Err(GeoError::OrphanNodes(_)) => return Ok(Outcome::Skipped),
                Err(e) => return Err(e),
            };
            let d = distinguishable(&p1, &p2, TestKind::Igwl, EMPIRICAL_MAX_ITER, o3)?;
            Ok(if d.distinguishable {
                Outcome::Held
            } else {
                Outcome::Violated(Violation { trial: t, iteration: i, nodes: (g1.num_nodes(), g2.num_nodes()) })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report =
        EmpiricalReport { pool_kind: kind, seed, trials, vacuous: 0, skipped: 0, checked: 0, violations: Vec::new() };
    for o in outcomes {
        match o {
            Outcome::Vacuous => report.vacuous += 1,
            Outcome::Skipped => report.skipped += 1,
            Outcome::Held => report.checked += 1,
            Outcome::Violated(v) => {
                report.checked += 1;
                report.violations.push(v);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncreaseReport {
    pub k: usize,
    pub pooled_nodes: usize,
    /// First GWL-distinguishing iteration of the original chains.
    pub original_iteration: Option<usize>,
    /// First GWL-distinguishing iteration of the pooled chains.
    pub pooled_iteration: Option<usize>,
    /// First IGWL-distinguishing iteration of the pooled chains.
    pub pooled_igwl_iteration: Option<usize>,
    pub increased: bool,
}

/// Shows that pooling the k-chain pair lets GWL separate it sooner.
pub fn demonstrate_increase(k: usize) -> Result<IncreaseReport> {
    use crate::chains::{make_k_chain_pair, pool_chain, ChainSpec};

    if k < 4 || !k.is_multiple_of(2) {
        return Err(invalid(format!("k must be even and at least 4, got {k}")));
    }
    let (g1, g2) = make_k_chain_pair(&ChainSpec::new(k)?);
    let o3 = GroupSpec::orthogonal(3);
    let budget = k + 2;
    let original = distinguishable(&g1, &g2, TestKind::Gwl, budget, o3)?;
    // smallest supernode count whose 1-hop clusters cover the chain
    let mut target = 3;
    let (p1, p2) = loop {
        match (pool_chain(&g1, target), pool_chain(&g2, target)) {
            (Ok(a), Ok(b)) => break (a, b),
            (Err(GeoError::OrphanNodes(_)), _) | (_, Err(GeoError::OrphanNodes(_))) if target + 1 < g1.num_nodes() => {
                target += 1
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    };
    let pooled = distinguishable(&p1, &p2, TestKind::Gwl, budget, o3)?;
    let pooled_igwl = distinguishable(&p1, &p2, TestKind::Igwl, budget, o3)?;
    let increased = match (original.first_iteration, pooled.first_iteration) {
        (Some(a), Some(b)) => b < a,
        (None, Some(_)) => true,
        _ => false,
    };
    Ok(IncreaseReport {
        k,
        pooled_nodes: p1.num_nodes(),
        original_iteration: original.first_iteration,
        pooled_iteration: pooled.first_iteration,
        pooled_igwl_iteration: pooled_igwl.first_iteration,
        increased,
    })
}
