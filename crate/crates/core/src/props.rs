//! Motion invariance and equivariance checks for every building block,
//! reported rather than asserted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::{apply_motion, knn_edges, GeometricGraph, RigidMotion};
use crate::layers::{
    equivariant_pass, invariant_pass, EquivariantLayer, InvariantLayer, LayerDims, LayerKind, RadialBasis,
};
use crate::pool::{pool_graph, point_pool_reduce, sparse_pool_reduce, unpool, PoolKind, DEFAULT_KNN_K};
use crate::tensor::{Mlp, ParamStore, Tensor};
use crate::unet::{GraphClassifier, UNetConfig, UNetModel};

pub const LAYER_TOLERANCE: f64 = 1e-9;
pub const MODEL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    /// `"SO(3)"` or `"O(3)"`.
    pub group: String,
    pub motions: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub seed: u64,
    pub checks: Vec<PropertyCheck>,
    pub passed: bool,
}

impl EquivarianceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Random graph in `[-2, 2]³` with KNN edges and random features.
pub fn random_feature_graph<R: Rng + ?Sized>(n: usize, f: usize, v: usize, k: usize, rng: &mut R) -> Result<GeometricGraph> {
    let coords: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let edges = knn_edges(&coords, 3, k)?;
    let scalars = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let vectors = (0..n * v * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    GeometricGraph::from_parts(3, coords, &edges, f, scalars, v, vectors)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rotate_all(m: &RigidMotion, v: &[f64]) -> Vec<f64> {
    v.chunks(m.dim()).flat_map(|c| m.rotate(c)).collect()
}

/// Error of one motion: scalars must match, vectors must rotate.
fn features_error(m: &RigidMotion, base: &(Tensor, Vec<f64>), moved: &(Tensor, Vec<f64>)) -> f64 {
    let s = if base.0.shape() == moved.0.shape() { base.0.max_abs_diff(&moved.0) } else { f64::INFINITY };
    s.max(max_diff(&rotate_all(m, &base.1), &moved.1))
}

type Check<'a> = Box<dyn Fn(&GeometricGraph, &RigidMotion) -> Result<f64> + 'a>;

/// Runs every block on `g` and on `motions` random moved copies per group.
pub fn equivariance_suite(seed: u64, motions: usize) -> Result<EquivarianceReport> {
    if motions == 0 {
        return Err(invalid("motions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, v) = (3, 2);
    let g = random_feature_graph(24, f, v, 4, &mut rng)?;
    let mut store = ParamStore::new();
    let dims = LayerDims { in_width: f, out_width: 5, in_channels: v, out_channels: 3, hidden: 16 };
    let inv = InvariantLayer::new(&mut store, &mut rng, "inv", dims, RadialBasis::uniform(8.0, 16)?)?;
    let eqv = EquivariantLayer::new(&mut store, &mut rng, "eqv", dims)?;
    let mlp = Mlp::two_layer(&mut store, &mut rng, "point", f, 16, f)?;
    let fill: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut unets = Vec::new();
    for kind in [LayerKind::Invariant, LayerKind::Equivariant] {
        for pool in [PoolKind::Sparse, PoolKind::Point] {
            let config = UNetConfig {
                levels: 2,
                layers_per_level: 1,
                pool_kind: pool,
                layer_kind: kind,
                feature_width: 8,
                vector_channels: 2,
                readout_width: 8,
                hidden_width: 16,
                input_width: f,
                input_channels: v,
                knn_k: 6,
                rbf_cutoff: 8.0,
                ..UNetConfig::default()
            };
            let mut s = ParamStore::new();
            let m = UNetModel::new(config, &mut s, &mut rng)?;
            unets.push((format!("unet_{kind}_{pool}"), m, s));
        }
    }

    let mut checks: Vec<(String, f64, Check)> = vec![
        (
            "invariant_layer".into(),
            LAYER_TOLERANCE,
            Box::new(|g, m| {
                let a = invariant_pass(g, &inv, &store)?;
                let b = invariant_pass(&apply_motion(g, m)?, &inv, &store)?;
                Ok(features_error(m, &a, &b))
            }),
        ),
        (
            "equivariant_layer".into(),
            LAYER_TOLERANCE,
            Box::new(|g, m| {
                let a = equivariant_pass(g, &eqv, &store)?;
                let b = equivariant_pass(&apply_motion(g, m)?, &eqv, &store)?;
                Ok(features_error(m, &a, &b))
            }),
        ),
    ];
    for kind in [PoolKind::Sparse, PoolKind::Point] {
        let (store, mlp) = (&store, &mlp);
        checks.push((
            format!("{kind}_pool_reduce"),
            LAYER_TOLERANCE,
            Box::new(move |g, m| {
                let moved = apply_motion(g, m)?;
                let (pa, pb) = (pool_graph(g, kind, 0.6, DEFAULT_KNN_K)?, pool_graph(&moved, kind, 0.6, DEFAULT_KNN_K)?);
                if pa.assignment != pb.assignment {
                    return Ok(f64::INFINITY);
                }
                let (a, b) = match kind {
                    PoolKind::Sparse => (sparse_pool_reduce(g, &pa.assignment)?, sparse_pool_reduce(&moved, &pb.assignment)?),
                    PoolKind::Point => (
                        point_pool_reduce(g, &pa.assignment, mlp, store)?,
                        point_pool_reduce(&moved, &pb.assignment, mlp, store)?,
                    ),
                };
                let moved_centers: Vec<f64> = pa.pooled.coords().chunks(3).flat_map(|p| m.apply_point(p)).collect();
                let coords = max_diff(&moved_centers, pb.pooled.coords());
                Ok(features_error(m, &a, &b).max(coords))
            }),
        ));
        let fill = &fill;
        checks.push((
            format!("{kind}_unpool"),
            LAYER_TOLERANCE,
            Box::new(move |g, m| {
                let moved = apply_motion(g, m)?;
                let (pa, pb) = (pool_graph(g, kind, 0.6, DEFAULT_KNN_K)?, pool_graph(&moved, kind, 0.6, DEFAULT_KNN_K)?);
                let ua = unpool(&pa.pooled, &pa, fill)?;
                let ub = unpool(&pb.pooled, &pb, fill)?;
                let a = (Tensor::new(ua.num_nodes(), ua.scalar_width(), ua.scalars().to_vec())?, ua.vectors().to_vec());
                let b = (Tensor::new(ub.num_nodes(), ub.scalar_width(), ub.scalars().to_vec())?, ub.vectors().to_vec());
                Ok(features_error(m, &a, &b))
            }),
        ));
    }
    for (name, model, params) in &unets {
        checks.push((
            format!("{name}_logits"),
            MODEL_TOLERANCE,
            Box::new(move |g, m| {
                let a = model.predict(g, params)?;
                let b = model.predict(&apply_motion(g, m)?, params)?;
                Ok(a.max_abs_diff(&b))
            }),
        ));
        checks.push((
            format!("{name}_node_features"),
            MODEL_TOLERANCE,
            Box::new(move |g, m| {
                let (bottom, caches) = model.encode_values(g, params)?;
                let a = model.decode_values(&bottom, &caches, params)?;
                let (bottom, caches) = model.encode_values(&apply_motion(g, m)?, params)?;
                let b = model.decode_values(&bottom, &caches, params)?;
                Ok(features_error(m, &a, &b))
            }),
        ));
    }

    let mut out = Vec::new();
    for proper in [true, false] {
        let ms: Vec<RigidMotion> = (0..motions).map(|_| RigidMotion::random(3, proper, 3.0, &mut rng)).collect();
        for (name, tol, check) in &checks {
            let mut worst: f64 = 0.0;
            for m in &ms {
                let e = check(&g, m)?;
                worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
            }
            out.push(PropertyCheck {
                name: name.clone(),
                group: if proper { "SO(3)" } else { "O(3)" }.into(),
                motions,
                max_error: worst,
                tolerance: *tol,
                passed: worst < *tol,
            });
        }
    }
    let passed = out.iter().all(|c| c.passed);
    Ok(EquivarianceReport { seed, checks: out, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_covers_every_block() {
        let r = equivariance_suite(3, 2).unwrap();
        assert!(r.passed, "{}", r.to_json());
        // 2 layers, 2 × (reduce, unpool), 4 models × 2, for both groups
        assert_eq!(r.checks.len(), 2 * (2 + 4 + 8));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["passed"], true);
    }
}
