//! Reference implementations used as test oracles. Nothing here calls the
//! code under test except for graph construction and accessors.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use geounet::GeometricGraph;
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

/// Random orthogonal matrix from a normalized Gaussian quaternion, negated
/// for improper motions, plus a Gaussian translation.
pub fn random_motion<R: Rng + ?Sized>(rng: &mut R, proper: bool) -> (Matrix3<f64>, Vector3<f64>) {
    let q = Quaternion::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    let r = if proper { r } else { -r };
    let t = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * 3.0;
    (r, t)
}

pub fn transform_points(r: &Matrix3<f64>, t: &Vector3<f64>, flat: &[f64]) -> Vec<f64> {
    flat.chunks(3).flat_map(|p| (r * Vector3::new(p[0], p[1], p[2]) + t).iter().copied().collect::<Vec<_>>()).collect()
}

pub fn rotate_vectors(r: &Matrix3<f64>, flat: &[f64]) -> Vec<f64> {
    transform_points(r, &Vector3::zeros(), flat)
}

/// Same graph with coordinates moved and vector features rotated.
pub fn move_graph(g: &GeometricGraph, r: &Matrix3<f64>, t: &Vector3<f64>) -> GeometricGraph {
    GeometricGraph::from_parts(
        3,
        transform_points(r, t, g.coords()),
        g.edges(),
        g.scalar_width(),
        g.scalars().to_vec(),
        g.vector_channels(),
        rotate_vectors(r, g.vectors()),
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Brute-force symmetrized KNN: sort every node's candidates by distance,
/// lower index first on exact ties.
pub fn brute_knn(coords: &[f64], k: usize) -> BTreeSet<(usize, usize)> {
    let n = coords.len() / 3;
    let d2 = |i: usize, j: usize| (0..3).map(|c| (coords[3 * i + c] - coords[3 * j + c]).powi(2)).sum::<f64>();
    let mut out = BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| d2(i, a).partial_cmp(&d2(i, b)).unwrap().then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            out.insert((i.min(j), i.max(j)));
        }
    }
    out
}

/// First index of the largest value; later values must win by a relative
/// margin of 1e-9.
fn first_max(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in values {
        match best {
            Some((_, b)) if x <= b + 1e-9 * b.abs().max(1.0) => {}
            _ => best = Some((i, x)),
        }
    }
    best.unwrap().0
}

/// Plain max-min sampling: start at the point farthest from the centroid,
/// then repeatedly take the point farthest from the chosen set. Lower index
/// on ties.
pub fn brute_fps(coords: &[f64], count: usize) -> Vec<usize> {
    let n = coords.len() / 3;
    let p = |i: usize| Vector3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]);
    let centroid = (0..n).map(p).sum::<Vector3<f64>>() / n as f64;
    let start = first_max((0..n).map(|i| (i, (p(i) - centroid).norm_squared())));
    let mut chosen = vec![start];
    while chosen.len() < count {
        let gap = |i: usize| chosen.iter().map(|&c| (p(i) - p(c)).norm_squared()).fold(f64::INFINITY, f64::min);
        let next = first_max((0..n).filter(|i| !chosen.contains(i)).map(|i| (i, gap(i))));
        chosen.push(next);
    }
    chosen
}

/// Smallest RMSD between `p` and `q` (rows are points) after centering and
/// the best orthogonal map, proper only unless `reflect`.
pub fn kabsch_rmsd(p: &[Vector3<f64>], q: &[Vector3<f64>], reflect: bool) -> f64 {
    assert_eq!(p.len(), q.len());
    let n = p.len() as f64;
    let cp = p.iter().sum::<Vector3<f64>>() / n;
    let cq = q.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += (a - cp) * (b - cq).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if !reflect && (vt.transpose() * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let rot = vt.transpose() * fix * u.transpose();
    let sq: f64 = p.iter().zip(q).map(|(a, b)| (rot * (a - cp) - (b - cq)).norm_squared()).sum();
    (sq / n).sqrt()
}

pub fn point(g: &GeometricGraph, i: usize) -> Vector3<f64> {
    let c = g.coord(i);
    Vector3::new(c[0], c[1], c[2])
}

/// Nodes within `t` hops of `root`, root first, then BFS order.
pub fn hop_ball(g: &GeometricGraph, root: usize, t: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    dist[root] = 0;
    let mut order = vec![root];
    let mut queue = VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        if dist[i] == t {
            continue;
        }
        for &j in g.neighbors(i) {
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                order.push(j);
                queue.push_back(j);
            }
        }
    }
    order
}

/// Whether the rooted `t`-hop balls are isometric through some bijection
/// that fixes the root and preserves adjacency and scalar features.
pub fn balls_isometric(g1: &GeometricGraph, r1: usize, g2: &GeometricGraph, r2: usize, t: usize, reflect: bool) -> bool {
    let a = hop_ball(g1, r1, t);
    let b = hop_ball(g2, r2, t);
    if a.len() != b.len() || g1.scalar_row(r1) != g2.scalar_row(r2) {
        return false;
    }
    let mut map = vec![usize::MAX; a.len()];
    map[0] = 0;
    let mut used = vec![false; b.len()];
    used[0] = true;
    search(g1, &a, g2, &b, 1, &mut map, &mut used, reflect)
}

#[allow(clippy::too_many_arguments)]
fn search(
    g1: &GeometricGraph,
    a: &[usize],
    g2: &GeometricGraph,
    b: &[usize],
    pos: usize,
    map: &mut Vec<usize>,
    used: &mut Vec<bool>,
    reflect: bool,
) -> bool {
    if pos == a.len() {
        let p: Vec<_> = a.iter().map(|&i| point(g1, i)).collect();
        let q: Vec<_> = map.iter().map(|&m| point(g2, b[m])).collect();
        return kabsch_rmsd(&p, &q, reflect) < 1e-6;
    }
    for m in 0..b.len() {
        if used[m] || g1.scalar_row(a[pos]) != g2.scalar_row(b[m]) {
            continue;
        }
        let consistent = (0..pos).all(|prev| g1.has_edge(a[pos], a[prev]) == g2.has_edge(b[m], b[map[prev]]));
        if !consistent {
            continue;
        }
        map[pos] = m;
        used[m] = true;
        if search(g1, a, g2, b, pos + 1, map, used, reflect) {
            return true;
        }
        used[m] = false;
    }
    map[pos] = usize::MAX;
    false
}

/// Whether the multisets of rooted `t`-hop balls of the two graphs agree up
/// to isometry (greedy matching suffices since isometry is an equivalence).
pub fn ball_multisets_agree(g1: &GeometricGraph, g2: &GeometricGraph, t: usize, reflect: bool) -> bool {
    if g1.num_nodes() != g2.num_nodes() {
        return false;
    }
    let mut taken = vec![false; g2.num_nodes()];
    for i in 0..g1.num_nodes() {
        match (0..g2.num_nodes()).find(|&j| !taken[j] && balls_isometric(g1, i, g2, j, t, reflect)) {
            Some(j) => taken[j] = true,
            None => return false,
        }
    }
    true
}

/// Whole graphs related by a structure-preserving bijection and a motion.
pub fn graphs_isometric(g1: &GeometricGraph, g2: &GeometricGraph, reflect: bool) -> bool {
    let t = g1.num_nodes();
    g1.num_nodes() == g2.num_nodes() && (0..g2.num_nodes()).any(|j| balls_isometric(g1, 0, g2, j, t, reflect))
}

/// Random graph in `[-2, 2]³` with KNN edges and random features.
pub fn random_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, f: usize, v: usize, k: usize) -> GeometricGraph {
    let coords: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let edges: Vec<(usize, usize)> = brute_knn(&coords, k).into_iter().collect();
    let scalars = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let vectors = (0..n * v * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    GeometricGraph::from_parts(3, coords, &edges, f, scalars, v, vectors).unwrap()
}

/// Central difference `(f(x+h) − f(x−h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Five-point central stencil, truncation error `O(h⁴)`.
pub fn central_difference5(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}
