//! The k-chain pair, its pooled variants and the discrimination benchmark.
//!
//! Both graphs share a straight interior and a bent left end; the right end
//! bends the same way (cis) in `g1` and the opposite way (trans) in `g2`.
//! Every local neighbourhood matches, so only a model that relates the two
//! ends can tell them apart.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeoError, Result};
use crate::geom::GeometricGraph;
use crate::layers::LayerKind;
use crate::pool::{center_coords, default_fps_start, fps_select_count, point_pool_assign, sum_reduce};
use crate::tensor::{ParamStore, HIDDEN_WIDTH};
use crate::train::{accuracy, fit, mean_std, Sample, TrainOptions};
use crate::unet::{FlatModel, UNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub k: usize,
    pub dim: usize,
}

impl ChainSpec {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 || !k.is_multiple_of(2) {
            return Err(invalid(format!("k must be even and at least 2, got {k}")));
        }
        Ok(ChainSpec { k, dim: 3 })
    }
}

/// `(g1, g2)` with `k + 2` nodes each: node 0 is the left end at
/// `(−1, 1, 0)`, nodes `1..=k` sit at `(j, 0, 0)` for `j = 0..k`, node
/// `k + 1` is the right end at `(k, ±1, 0)`. Unit scalars, one zero vector
/// channel.
pub fn make_k_chain_pair(spec: &ChainSpec) -> (GeometricGraph, GeometricGraph) {
    let k = spec.k;
    let build = |right_y: f64| {
        let mut coords = vec![-1.0, 1.0, 0.0];
        for j in 0..k {
            coords.extend_from_slice(&[j as f64, 0.0, 0.0]);
        }
        coords.extend_from_slice(&[k as f64, right_y, 0.0]);
        let edges: Vec<(usize, usize)> = (0..=k).map(|i| (i, i + 1)).collect();
        let n = k + 2;
        GeometricGraph::from_parts(3, coords, &edges, 1, vec![1.0; n], 1, vec![0.0; n * 3]).expect("valid chain")
    };
    (build(1.0), build(-1.0))
}

/// Pools a chain to `target` supernodes: FPS centers, 1-hop clusters,
/// summed features. Supernodes sit on their centers, ordered along the
/// chain, and are joined to their first and second successors.
pub fn pool_chain(g: &GeometricGraph, target: usize) -> Result<GeometricGraph> {
    let n = g.num_nodes();
    if target == 0 || target >= n {
        return Err(invalid(format!("pool target {target} must lie in 1..{n}")));
    }
    let mut centers = fps_select_count(g.coords(), g.dim(), target, default_fps_start(g.coords(), g.dim()))?;
    // node ids follow the chain, so sorting orders supernodes along it
    centers.sort_unstable();
    let c = point_pool_assign(g, &centers)?;
    let (s, v) = sum_reduce(g, &c)?;
    let mut edges = Vec::new();
    for j in 0..target {
        for step in 1..=2 {
            if j + step < target {
                edges.push((j, j + step));
            }
        }
    }
    GeometricGraph::from_parts(
        g.dim(),
        center_coords(g, &centers),
        &edges,
        g.scalar_width(),
        s.into_values(),
        g.vector_channels(),
        v,
    )
}

fn pool_none() -> Option<usize> {
    None
}

/// One row of the benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k: usize,
    pub layer_kind: LayerKind,
    pub num_layers: usize,
    /// Supernode count after pooling; `None` trains on the raw chains.
    #[serde(default = "pool_none")]
    pub pool_target: Option<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub feature_width: usize,
    pub vector_channels: usize,
    pub hidden_width: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            k: 4,
            layer_kind: LayerKind::Equivariant,
            num_layers: 2,
            pool_target: None,
            seeds: 10,
            base_seed: 0,
            lr: 0.001,
            epochs: 200,
            feature_width: 32,
            vector_channels: 4,
            hidden_width: HIDDEN_WIDTH,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ChainSpec::new(self.k)?;
        if self.num_layers == 0 || self.seeds == 0 {
            return Err(invalid("num_layers and seeds must be at least 1"));
        }
        if let Some(t) = self.pool_target {
            if t == 0 || t >= self.k + 2 {
                return Err(invalid(format!("pool target {t} must lie in 1..{}", self.k + 2)));
            }
        }
        Ok(())
    }

    pub fn pool_label(&self) -> String {
        self.pool_target.map_or_else(|| "none".to_string(), |t| t.to_string())
    }
}

/// Outcome of one configuration over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config: ExperimentConfig,
    /// Percent.
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_seed: Vec<f64>,
    /// `‖emb(g1) − emb(g2)‖∞` after training, per seed.
    pub embedding_gaps: Vec<f64>,
    /// Seeds whose training hit a non-finite loss or gradient.
    pub diverged: Vec<usize>,
}

/// The five CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub model: String,
    pub pool: String,
    pub layers: usize,
    pub mean: f64,
    pub std: f64,
}

impl From<&ResultRow> for CsvRow {
    fn from(r: &ResultRow) -> Self {
        CsvRow {
            model: r.config.layer_kind.to_string(),
            pool: r.config.pool_label(),
            layers: r.config.num_layers,
            mean: r.mean_accuracy,
            std: r.std_accuracy,
        }
    }
}

/// The pair the configuration trains on (pooled when requested).
pub fn experiment_graphs(config: &ExperimentConfig) -> Result<(GeometricGraph, GeometricGraph)> {
    let (g1, g2) = make_k_chain_pair(&ChainSpec::new(config.k)?);
    match config.pool_target {
        None => Ok((g1, g2)),
        Some(t) => Ok((pool_chain(&g1, t)?, pool_chain(&g2, t)?)),
    }
}

fn model_config(config: &ExperimentConfig, cutoff: f64) -> UNetConfig {
    UNetConfig {
        layer_kind: config.layer_kind,
        feature_width: config.feature_width,
        vector_channels: config.vector_channels,
        readout_width: config.feature_width,
        hidden_width: config.hidden_width,
        input_width: 1,
        input_channels: 1,
        num_classes: 2,
        rbf_cutoff: cutoff,
        ..UNetConfig::default()
    }
}

struct SeedOutcome {
    accuracy: f64,
    gap: f64,
    diverged: bool,
}

fn run_seed(config: &ExperimentConfig, g1: &GeometricGraph, g2: &GeometricGraph, seed: u64) -> Result<SeedOutcome> {
    let cutoff = g1.diameter().max(g2.diameter()).max(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = FlatModel::new(model_config(config, cutoff), config.num_layers, &mut store, &mut rng)?;
    let samples = vec![Sample::new(&model, g1.clone(), 0)?, Sample::new(&model, g2.clone(), 1)?];
    let opts = TrainOptions { epochs: config.epochs, lr: config.lr, batch_size: 2, shuffle_seed: seed };
    let log = fit(&model, &mut store, &samples, &opts)?;
    if let Some(msg) = &log.diverged {
        log::warn!("seed {seed}: {msg}");
        return Ok(SeedOutcome { accuracy: 50.0, gap: f64::NAN, diverged: true });
    }
    let acc = 100.0 * accuracy(&model, &store, &samples, 2)?;
    let e1 = model.embed_graph(g1, &store)?;
    let e2 = model.embed_graph(g2, &store)?;
    Ok(SeedOutcome { accuracy: acc, gap: e1.max_abs_diff(&e2), diverged: false })
}

/// Trains one fresh model per seed (in parallel) to label `g1` as 0 and
/// `g2` as 1, and reports per-seed accuracy on the pair.
pub fn train_discriminator(config: &ExperimentConfig) -> Result<ResultRow> {
    config.validate()?;
    let (g1, g2) = experiment_graphs(config)?;
    let outcomes = (0..config.seeds as u64)
        .into_par_iter()
        .map(|s| run_seed(config, &g1, &g2, config.base_seed + s))
        .collect::<Result<Vec<_>>>()?;
    let per_seed: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
    let (mean, std) = mean_std(&per_seed);
    Ok(ResultRow {
        config: config.clone(),
        mean_accuracy: mean,
        std_accuracy: std,
        per_seed,
        embedding_gaps: outcomes.iter().map(|o| o.gap).collect(),
        diverged: outcomes.iter().enumerate().filter(|(_, o)| o.diverged).map(|(i, _)| i).collect(),
    })
}

/// Both layer families × no pooling, 3 and 4 supernodes × depths
/// `⌊k/2⌋ ..= ⌊k/2⌋ + 4`, all other fields from `base`.
pub fn table_grid(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let half = base.k / 2;
    let mut out = Vec::new();
    for kind in [LayerKind::Invariant, LayerKind::Equivariant] {
        for pool in [None, Some(3), Some(4)] {
            for layers in half..=half + 4 {
                out.push(ExperimentConfig { layer_kind: kind, pool_target: pool, num_layers: layers, ..base.clone() });
            }
        }
    }
    out
}

/// Runs every configuration and returns the rows with their CSV rendering.
pub fn run_table(configs: &[ExperimentConfig]) -> Result<(Vec<ResultRow>, String)> {
    let rows = configs.iter().map(train_discriminator).collect::<Result<Vec<_>>>()?;
    let csv = to_csv(&rows)?;
    Ok((rows, csv))
}

pub fn to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow::from(r)).map_err(|e| invalid(format!("csv: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(["model", "pool", "layers", "mean", "std"]).map_err(|e| invalid(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| invalid(format!("csv: {e}")))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| invalid(format!("csv: {e}")))?;
    if header != vec!["model", "pool", "layers", "mean", "std"] {
        return Err(GeoError::Parse { line: 1, msg: format!("unexpected header {header:?}") });
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| GeoError::Parse { line: i + 2, msg: e.to_string() }))
        .collect()
}
