//! Hierarchical-motif classification: identical rigid motifs whose global
//! arrangement decides the class.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::{knn_edges, GeometricGraph, RigidMotion};
use crate::layers::LayerKind;
use crate::pool::PoolKind;
use crate::tensor::ParamStore;
use crate::train::{accuracy, fit, mean_std, Sample, TrainOptions};
use crate::unet::{FlatModel, UNetConfig, UNetModel};

pub const MOTIFS_PER_SAMPLE: usize = 4;
pub const MOTIF_POINTS: usize = 6;
pub const NOISE_SIGMA: f64 = 0.05;
pub const SYNTHETIC_KNN_K: usize = 6;
/// Distance between neighbouring motif centroids in every template.
pub const MOTIF_SPACING: f64 = 3.0;

/// The shared rigid motif, centred on the origin.
pub fn motif() -> [[f64; 3]; MOTIF_POINTS] {
    let raw = [[0.0, 0.0, 0.0], [0.9, 0.1, 0.0], [0.2, 0.8, 0.1], [0.1, 0.2, 0.7], [0.8, 0.7, 0.3], [-0.4, 0.5, 0.5]];
    let mut c = [0.0; 3];
    for p in &raw {
        (0..3).for_each(|k| c[k] += p[k] / MOTIF_POINTS as f64);
    }
    raw.map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
}

/// Motif centroid layouts, one per class. Every layout is a path of four
/// motifs with neighbours exactly `MOTIF_SPACING` apart and non-neighbours
/// at least `√2·MOTIF_SPACING` apart, so each motif sees the same number of
/// adjacent motifs in every class; only bend and twist angles differ.
pub fn arrangement_templates() -> Vec<(&'static str, [[f64; 3]; MOTIFS_PER_SAMPLE])> {
    let s = MOTIF_SPACING;
    let h = s * 3f64.sqrt() / 2.0;
    vec![
        ("line", [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [2.0 * s, 0.0, 0.0], [3.0 * s, 0.0, 0.0]]),
        ("ell", [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [2.0 * s, 0.0, 0.0], [2.0 * s, s, 0.0]]),
        ("zigzag", [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [1.5 * s, h, 0.0], [2.5 * s, h, 0.0]]),
        ("helix", [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [s, s, 0.0], [s, s, s]]),
        ("crank", [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [s, s, 0.0], [2.0 * s, s, 0.0]]),
        ("hook", [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [1.5 * s, h, 0.0], [s, 2.0 * h, 0.0]]),
    ]
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub graph: GeometricGraph,
    pub label: usize,
}

/// One graph: every motif copy gets its own random rotation, the whole
/// arrangement a random proper motion, every point Gaussian jitter.
pub fn make_synthetic_sample<R: Rng + ?Sized>(label: usize, rng: &mut R) -> Result<GeometricGraph> {
    let templates = arrangement_templates();
    let (_, centers) = templates.get(label).ok_or_else(|| invalid(format!("no template for class {label}")))?;
    let base = motif();
    let global = RigidMotion::random(3, true, 1.0, rng);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let mut coords = Vec::with_capacity(MOTIFS_PER_SAMPLE * MOTIF_POINTS * 3);
    for c in centers {
        let local = RigidMotion::random(3, true, 0.0, rng);
        for p in &base {
            let r = local.rotate(p);
            let placed: Vec<f64> = (0..3).map(|k| r[k] + c[k]).collect();
            for x in global.apply_point(&placed) {
                coords.push(x + noise.sample(rng));
            }
        }
    }
    let n = MOTIFS_PER_SAMPLE * MOTIF_POINTS;
    let edges = knn_edges(&coords, 3, SYNTHETIC_KNN_K)?;
    GeometricGraph::from_parts(3, coords, &edges, 1, vec![1.0; n], 0, Vec::new())
}

/// `per_class` samples of each of `classes` arrangements, shuffled.
pub fn make_synthetic_fold_dataset(classes: usize, per_class: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    let available = arrangement_templates().len();
    if classes < 2 || classes > available {
        return Err(invalid(format!("classes must lie in 2..={available}, got {classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes * per_class);
    for label in 0..classes {
        for _ in 0..per_class {
            out.push(SyntheticSample { graph: make_synthetic_sample(label, &mut rng)?, label });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub layer_kind: LayerKind,
    pub pool_kind: PoolKind,
    pub levels: usize,
    pub layers_per_level: usize,
    pub feature_width: usize,
    pub hidden_width: usize,
    pub vector_channels: usize,
    pub baseline_layers: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 4,
            train_per_class: 50,
            test_per_class: 25,
            seeds: 3,
            base_seed: 0,
            epochs: 40,
            lr: 0.003,
            batch_size: 20,
            layer_kind: LayerKind::Invariant,
            pool_kind: PoolKind::Sparse,
            levels: 3,
            layers_per_level: 1,
            feature_width: 16,
            hidden_width: 32,
            vector_channels: 1,
            baseline_layers: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Percent on the held-out split.
    pub unet_accuracy: f64,
    pub baseline_accuracy: f64,
    pub unet_train_accuracy: f64,
    pub baseline_train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticReport {
    pub config: SyntheticConfig,
    pub unet_parameters: usize,
    pub baseline_parameters: usize,
    pub baseline_feature_width: usize,
    pub seeds: Vec<SeedResult>,
    pub unet_mean: f64,
    pub unet_std: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
}

impl SyntheticReport {
    /// Mean U-Net accuracy minus mean baseline accuracy, in points.
    pub fn margin(&self) -> f64 {
        self.unet_mean - self.baseline_mean
    }

    /// CSV with one row per seed and model.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| invalid(format!("csv: {e}"));
        w.write_record(["seed", "model", "parameters", "train_accuracy", "test_accuracy"]).map_err(err)?;
        for s in &self.seeds {
            for (model, params, train, test) in [
                ("unet", self.unet_parameters, s.unet_train_accuracy, s.unet_accuracy),
                ("baseline", self.baseline_parameters, s.baseline_train_accuracy, s.baseline_accuracy),
            ] {
                w.write_record([s.seed.to_string(), model.to_string(), params.to_string(), train.to_string(), test.to_string()])
                    .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| invalid(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| invalid(format!("csv: {e}")))
    }
}

fn diameter(samples: &[SyntheticSample]) -> f64 {
    samples.iter().map(|s| s.graph.diameter()).fold(0.0, f64::max)
}

impl SyntheticConfig {
    pub fn unet_config(&self, cutoff: f64) -> UNetConfig {
        UNetConfig {
            levels: self.levels,
            layers_per_level: self.layers_per_level,
            pool_kind: self.pool_kind,
            layer_kind: self.layer_kind,
            feature_width: self.feature_width,
            vector_channels: self.vector_channels,
            readout_width: self.feature_width,
            hidden_width: self.hidden_width,
            input_width: 1,
            input_channels: 0,
            num_classes: self.classes,
            rbf_cutoff: cutoff,
            ..UNetConfig::default()
        }
    }

    /// Flat model config of feature width `w`, hidden width scaled alike.
    pub fn baseline_config(&self, cutoff: f64, w: usize) -> UNetConfig {
        let hidden = (w * self.hidden_width).div_ceil(self.feature_width).max(1);
        UNetConfig { feature_width: w, readout_width: w, hidden_width: hidden, ..self.unet_config(cutoff) }
    }

    /// Baseline width whose parameter count is closest to the U-Net's.
    pub fn matched_baseline_width(&self, cutoff: f64) -> Result<(usize, usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        UNetModel::new(self.unet_config(cutoff), &mut store, &mut rng)?;
        let target = store.num_values();
        let mut best = (usize::MAX, 0, 0);
        for w in 1..=8 * self.feature_width {
            let mut s = ParamStore::new();
            FlatModel::new(self.baseline_config(cutoff, w), self.baseline_layers, &mut s, &mut rng)?;
            let gap = s.num_values().abs_diff(target);
            if gap < best.0 {
                best = (gap, w, s.num_values());
            }
        }
        Ok((best.1, target, best.2))
    }
}

impl SyntheticConfig {
    /// Train and test sets of one seed plus the RBF cutoff covering both.
    pub fn splits(&self, seed: u64) -> Result<(Vec<SyntheticSample>, Vec<SyntheticSample>, f64)> {
        let train = make_synthetic_fold_dataset(self.classes, self.train_per_class, 2 * seed)?;
        let test = make_synthetic_fold_dataset(self.classes, self.test_per_class, 2 * seed + 1)?;
        let cutoff = diameter(&train).max(diameter(&test));
        Ok((train, test, cutoff))
    }

    fn options(&self, seed: u64) -> TrainOptions {
        TrainOptions { epochs: self.epochs, lr: self.lr, batch_size: self.batch_size, shuffle_seed: seed }
    }
}

/// Train and test accuracy (percent) of a flat model with `layers` layers at
/// the configured feature width.
pub fn run_flat_baseline(config: &SyntheticConfig, layers: usize, seed: u64) -> Result<(f64, f64)> {
    let (train, test, cutoff) = config.splits(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let flat = FlatModel::new(config.baseline_config(cutoff, config.feature_width), layers, &mut store, &mut rng)?;
    let (tr, te) = (to_samples(&flat, &train)?, to_samples(&flat, &test)?);
    fit(&flat, &mut store, &tr, &config.options(seed))?;
    Ok((100.0 * accuracy(&flat, &store, &tr, 50)?, 100.0 * accuracy(&flat, &store, &te, 50)?))
}

fn to_samples<M: crate::unet::GraphClassifier>(model: &M, data: &[SyntheticSample]) -> Result<Vec<Sample>> {
    data.iter().map(|s| Sample::new(model, s.graph.clone(), s.label)).collect()
}

/// Trains the U-Net and the parameter-matched flat baseline on the same
/// splits for every seed.
pub fn run_synthetic(config: &SyntheticConfig) -> Result<SyntheticReport> {
    if config.seeds == 0 || config.train_per_class == 0 || config.test_per_class == 0 {
        return Err(invalid("seeds and split sizes must be positive"));
    }
    let mut seeds = Vec::new();
    let mut widths = None;
    for i in 0..config.seeds as u64 {
        let seed = config.base_seed + i;
        let (train, test, cutoff) = config.splits(seed)?;
        let (w, unet_params, base_params) = config.matched_baseline_width(cutoff)?;
        widths.get_or_insert((w, unet_params, base_params));
        let opts = config.options(seed);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let unet = UNetModel::new(config.unet_config(cutoff), &mut store, &mut rng)?;
        let (tr, te) = (to_samples(&unet, &train)?, to_samples(&unet, &test)?);
        let log = fit(&unet, &mut store, &tr, &opts)?;
        if let Some(msg) = log.diverged {
            log::warn!("seed {seed}, U-Net: {msg}");
        }
        let unet_train = 100.0 * accuracy(&unet, &store, &tr, 50)?;
        let unet_test = 100.0 * accuracy(&unet, &store, &te, 50)?;

        let mut store = ParamStore::new();
        let flat = FlatModel::new(config.baseline_config(cutoff, w), config.baseline_layers, &mut store, &mut rng)?;
        let (tr, te) = (to_samples(&flat, &train)?, to_samples(&flat, &test)?);
        let log = fit(&flat, &mut store, &tr, &opts)?;
        if let Some(msg) = log.diverged {
            log::warn!("seed {seed}, baseline: {msg}");
        }
        seeds.push(SeedResult {
            seed,
            unet_accuracy: unet_test,
            baseline_accuracy: 100.0 * accuracy(&flat, &store, &te, 50)?,
            unet_train_accuracy: unet_train,
            baseline_train_accuracy: 100.0 * accuracy(&flat, &store, &tr, 50)?,
        });
    }
    let (w, unet_parameters, baseline_parameters) = widths.expect("at least one seed");
    let (unet_mean, unet_std) = mean_std(&seeds.iter().map(|s| s.unet_accuracy).collect::<Vec<_>>());
    let (baseline_mean, baseline_std) = mean_std(&seeds.iter().map(|s| s.baseline_accuracy).collect::<Vec<_>>());
    Ok(SyntheticReport {
        config: config.clone(),
        unet_parameters,
        baseline_parameters,
        baseline_feature_width: w,
        seeds,
        unet_mean,
        unet_std,
        baseline_mean,
        baseline_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_have_expected_shape_and_labels() {
        let data = make_synthetic_fold_dataset(4, 3, 1).unwrap();
        assert_eq!(data.len(), 12);
        for s in &data {
            assert_eq!(s.graph.num_nodes(), 24);
            assert!(s.label < 4);
            assert_eq!(s.graph.scalar_width(), 1);
        }
        let mut counts = [0; 4];
        data.iter().for_each(|s| counts[s.label] += 1);
        assert_eq!(counts, [3; 4]);
        assert!(make_synthetic_fold_dataset(1, 3, 1).is_err());
    }

    #[test]
    fn same_class_samples_differ_but_share_motif_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = make_synthetic_sample(1, &mut rng).unwrap();
        let b = make_synthetic_sample(1, &mut rng).unwrap();
        assert!(a.coords() != b.coords());
        // intra-motif distances survive up to noise
        for i in 0..MOTIF_POINTS {
            for j in 0..MOTIF_POINTS {
                let da = a.sq_dist(i, j).sqrt();
                let db = b.sq_dist(i, j).sqrt();
                assert!((da - db).abs() < 0.6, "{da} vs {db}");
            }
        }
    }

    #[test]
    fn templates_are_distinct_paths_with_shared_spacing() {
        let dist = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
        let mut signatures: Vec<Vec<i64>> = Vec::new();
        for (name, c) in arrangement_templates() {
            let mut far = Vec::new();
            for i in 0..MOTIFS_PER_SAMPLE {
                for j in i + 1..MOTIFS_PER_SAMPLE {
                    let d = dist(&c[i], &c[j]);
                    if j == i + 1 {
                        assert!((d - MOTIF_SPACING).abs() < 1e-9, "{name}");
                    } else {
                        assert!(d >= 2f64.sqrt() * MOTIF_SPACING - 1e-9, "{name}: {i}-{j} at {d}");
                        far.push((d * 1e6).round() as i64);
                    }
                }
            }
            far.sort_unstable();
            assert!(!signatures.contains(&far), "{name} duplicates another template");
            signatures.push(far);
        }
    }

    #[test]
    fn baseline_width_matches_parameter_count() {
        let c = SyntheticConfig::default();
        let (w, unet, flat) = c.matched_baseline_width(12.0).unwrap();
        assert!(w > 0);
        assert!((unet as f64 - flat as f64).abs() / (unet as f64) < 0.1, "{unet} vs {flat}");
    }
}
