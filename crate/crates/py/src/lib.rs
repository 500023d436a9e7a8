//! Python module `geounet`.
//!
//! Graphs, motions, pooling, the GWL tests and a trainable U-Net
//! classifier. Reports that are plain data come back as Python dicts.

use geounet::chains::{make_k_chain_pair, pool_chain, ChainSpec};
use geounet::gwl::{self, GroupSpec, TestKind};
use geounet::pool::{self, PoolKind};
use geounet::protein;
use geounet::synthetic::make_synthetic_fold_dataset;
use geounet::tensor::ParamStore;
use geounet::train::{fit, Sample, TrainOptions};
use geounet::unet::{GraphClassifier, UNetConfig, UNetModel};
use geounet::{apply_motion, GeoError, GeometricGraph, RigidMotion};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

create_exception!(geounet, GeometryError, PyValueError, "Invalid geometric input or configuration.");

fn err(e: GeoError) -> PyErr {
    match e {
        GeoError::Io(io) => PyOSError::new_err(io.to_string()),
        other => GeometryError::new_err(other.to_string()),
    }
}

fn pool_kind(s: &str) -> PyResult<PoolKind> {
    s.parse().map_err(err)
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn flatten(rows: &[Vec<f64>], width: usize, what: &str) -> PyResult<Vec<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(GeometryError::new_err(format!("{what} row {bad} has {} entries, expected {width}", rows[bad].len())));
    }
    Ok(rows.concat())
}

fn chunk_rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    if width == 0 {
        return Vec::new();
    }
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

/// Geometric graph in 3-D: coordinates, undirected edges, per-node scalar
/// rows and per-node lists of 3-vectors.
#[pyclass(name = "Graph", module = "geounet")]
pub struct PyGraph {
    inner: GeometricGraph,
}

impl PyGraph {
    fn build(
        coords: Vec<Vec<f64>>,
        edges: &[(usize, usize)],
        scalars: Option<Vec<Vec<f64>>>,
        vectors: Option<Vec<Vec<Vec<f64>>>>,
    ) -> PyResult<Self> {
        let n = coords.len();
        let flat = flatten(&coords, 3, "coordinate")?;
        let (f, s) = match scalars {
            Some(rows) if !rows.is_empty() => {
                let f = rows[0].len();
                (f, flatten(&rows, f, "scalar")?)
            }
            _ => (0, Vec::new()),
        };
        let (v, vecs) = match vectors {
            Some(rows) if !rows.is_empty() => {
                let v = rows[0].len();
                let mut out = Vec::with_capacity(n * v * 3);
                for (i, r) in rows.iter().enumerate() {
                    if r.len() != v {
                        return Err(GeometryError::new_err(format!("node {i} has {} vectors, expected {v}", r.len())));
                    }
                    out.extend(flatten(r, 3, "vector")?);
                }
                (v, out)
            }
            _ => (0, Vec::new()),
        };
        let inner = GeometricGraph::from_parts(3, flat, edges, f, s, v, vecs).map_err(err)?;
        Ok(PyGraph { inner })
    }
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (coords, edges, scalars=None, vectors=None))]
    fn new(
        coords: Vec<Vec<f64>>,
        edges: Vec<(usize, usize)>,
        scalars: Option<Vec<Vec<f64>>>,
        vectors: Option<Vec<Vec<Vec<f64>>>>,
    ) -> PyResult<Self> {
        Self::build(coords, &edges, scalars, vectors)
    }

    /// Graph whose edges are the symmetrized `k` nearest neighbours.
    #[staticmethod]
    #[pyo3(signature = (coords, k, scalars=None, vectors=None))]
    fn knn(
        coords: Vec<Vec<f64>>,
        k: usize,
        scalars: Option<Vec<Vec<f64>>>,
        vectors: Option<Vec<Vec<Vec<f64>>>>,
    ) -> PyResult<Self> {
        let edges = geounet::knn_edges(&flatten(&coords, 3, "coordinate")?, 3, k).map_err(err)?;
        Self::build(coords, &edges, scalars, vectors)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyGraph { inner: GeometricGraph::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn coords(&self) -> Vec<Vec<f64>> {
        chunk_rows(self.inner.coords(), self.inner.dim())
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    #[getter]
    fn scalars(&self) -> Vec<Vec<f64>> {
        chunk_rows(self.inner.scalars(), self.inner.scalar_width())
    }

    #[getter]
    fn vectors(&self) -> Vec<Vec<Vec<f64>>> {
        let v = self.inner.vector_channels();
        (0..self.inner.num_nodes()).map(|i| (0..v).map(|c| self.inner.vector(i, c).to_vec()).collect()).collect()
    }

    fn diameter(&self) -> f64 {
        self.inner.diameter()
    }

    fn __len__(&self) -> usize {
        self.inner.num_nodes()
    }

    fn __eq__(&self, other: PyRef<'_, PyGraph>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n={}, edges={}, scalars={}, vectors={})",
            self.inner.num_nodes(),
            self.inner.edges().len(),
            self.inner.scalar_width(),
            self.inner.vector_channels()
        )
    }
}

/// Orthogonal map plus translation in 3-D.
#[pyclass(name = "RigidMotion", module = "geounet")]
pub struct PyRigidMotion {
    inner: RigidMotion,
}

#[pymethods]
impl PyRigidMotion {
    #[new]
    fn new(rotation: Vec<Vec<f64>>, translation: Vec<f64>) -> PyResult<Self> {
        let r = flatten(&rotation, 3, "rotation")?;
        Ok(PyRigidMotion { inner: RigidMotion::new(r, translation).map_err(err)? })
    }

    /// Haar-random rotation (a reflection too unless `proper`) and a
    /// Gaussian translation of scale `shift`.
    #[staticmethod]
    #[pyo3(signature = (seed, proper=true, shift=1.0))]
    fn random(seed: u64, proper: bool, shift: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PyRigidMotion { inner: RigidMotion::random(3, proper, shift, &mut rng) }
    }

    #[getter]
    fn rotation(&self) -> Vec<Vec<f64>> {
        chunk_rows(self.inner.rotation(), 3)
    }

    #[getter]
    fn translation(&self) -> Vec<f64> {
        self.inner.translation().to_vec()
    }

    #[getter]
    fn is_proper(&self) -> bool {
        self.inner.is_proper()
    }

    /// Moves coordinates and rotates vector features.
    fn apply(&self, graph: PyRef<'_, PyGraph>) -> PyResult<PyGraph> {
        Ok(PyGraph { inner: apply_motion(&graph.inner, &self.inner).map_err(err)? })
    }
}

/// Graph classifier: U-Net over a pooling hierarchy with its parameters.
#[pyclass(name = "UNet", module = "geounet")]
pub struct PyUNet {
    model: UNetModel,
    store: ParamStore,
}

#[pymethods]
impl PyUNet {
    /// `config` is a JSON object of hyperparameters; missing keys take
    /// their defaults.
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let config = match config {
            Some(text) => UNetConfig::from_json(text).map_err(err)?,
            None => UNetConfig::default(),
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = UNetModel::new(config, &mut store, &mut rng).map_err(err)?;
        Ok(PyUNet { model, store })
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &serde_json::to_string(self.model.config()).expect("config serializes"))
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.store.num_values()
    }

    fn logits(&self, graph: PyRef<'_, PyGraph>) -> PyResult<Vec<f64>> {
        Ok(self.model.predict(&graph.inner, &self.store).map_err(err)?.into_values())
    }

    fn predict(&self, graph: PyRef<'_, PyGraph>) -> PyResult<usize> {
        Ok(geounet::train::argmax(&self.logits(graph)?))
    }

    /// Adam on mean cross-entropy; returns the per-epoch mean losses.
    #[pyo3(signature = (graphs, labels, epochs=20, lr=0.003, batch_size=16, seed=0))]
    fn fit(
        &mut self,
        graphs: Vec<PyRef<'_, PyGraph>>,
        labels: Vec<usize>,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        if graphs.len() != labels.len() {
            return Err(GeometryError::new_err("graphs and labels differ in length"));
        }
        let samples = graphs
            .iter()
            .zip(&labels)
            .map(|(g, &y)| Sample::new(&self.model, g.inner.clone(), y))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let opts = TrainOptions { epochs, lr, batch_size, shuffle_seed: seed };
        let log = fit(&self.model, &mut self.store, &samples, &opts).map_err(err)?;
        if let Some(msg) = log.diverged {
            return Err(GeometryError::new_err(format!("training diverged: {msg}")));
        }
        Ok(log.epoch_losses)
    }

    /// Parameters as `{name: {"shape": [r, c], "values": [...]}}` JSON.
    fn checkpoint(&self) -> String {
        self.store.to_checkpoint_json()
    }

    fn load_checkpoint(&mut self, text: &str) -> PyResult<()> {
        let loaded = ParamStore::from_checkpoint_json(text).map_err(err)?;
        let same = loaded.len() == self.store.len()
            && loaded.iter().all(|(n, t)| self.store.get(n).is_some_and(|own| own.shape() == t.shape()));
        if !same {
            return Err(GeometryError::new_err("checkpoint does not match this model's parameters"));
        }
        self.store = loaded;
        Ok(())
    }
}

#[pyfunction]
fn knn_edges(coords: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<(usize, usize)>> {
    geounet::knn_edges(&flatten(&coords, 3, "coordinate")?, 3, k).map_err(err)
}

/// Farthest-point sample of `ceil(ratio * n)` node indices.
#[pyfunction]
#[pyo3(signature = (graph, ratio=0.6))]
fn select_centers(graph: PyRef<'_, PyGraph>, ratio: f64) -> PyResult<Vec<usize>> {
    pool::select_centers(&graph.inner, ratio).map_err(err)
}

/// Structural pooling. Returns the pooled graph, the chosen centers and
/// the assignment as `(supernode, node, weight)` triplets.
#[pyfunction]
#[pyo3(signature = (graph, kind="sparse", ratio=0.6, knn=16))]
#[allow(clippy::type_complexity)]
fn pool_graph(
    graph: PyRef<'_, PyGraph>,
    kind: &str,
    ratio: f64,
    knn: usize,
) -> PyResult<(PyGraph, Vec<usize>, Vec<(usize, usize, f64)>)> {
    let p = pool::pool_graph(&graph.inner, pool_kind(kind)?, ratio, knn).map_err(err)?;
    let centers = p.assignment.centers().to_vec();
    let triplets = p.assignment.triplets();
    Ok((PyGraph { inner: p.pooled }, centers, triplets))
}

/// Repeated structural pooling as a dict (input graph plus one entry per level).
#[pyfunction]
#[pyo3(signature = (graph, levels=3, kind="sparse", ratio=0.6))]
fn coarsen(py: Python<'_>, graph: PyRef<'_, PyGraph>, levels: usize, kind: &str, ratio: f64) -> PyResult<Py<PyAny>> {
    let h = protein::coarsen_hierarchy(&graph.inner, levels, pool_kind(kind)?, ratio).map_err(err)?;
    json_to_py(py, &h.to_json())
}

/// First refinement iteration at which the colour multisets differ, or
/// `None` within `iters` iterations. `test` is "gwl" or "igwl"; `group`
/// is "O3" or "SO3".
#[pyfunction]
#[pyo3(signature = (g1, g2, test="gwl", iters=10, group="O3"))]
fn first_distinguishing_iteration(
    g1: PyRef<'_, PyGraph>,
    g2: PyRef<'_, PyGraph>,
    test: &str,
    iters: usize,
    group: &str,
) -> PyResult<Option<usize>> {
    let test = match test {
        "gwl" => TestKind::Gwl,
        "igwl" => TestKind::Igwl,
        other => return Err(GeometryError::new_err(format!("unknown test `{other}` (expected gwl|igwl)"))),
    };
    let group = match group {
        "O3" => GroupSpec::orthogonal(3),
        "SO3" => GroupSpec::special(3),
        other => return Err(GeometryError::new_err(format!("unknown group `{other}` (expected O3|SO3)"))),
    };
    Ok(gwl::distinguishable(&g1.inner, &g2.inner, test, iters, group).map_err(err)?.first_iteration)
}

/// The two k-chains that differ only in the placement of one endpoint.
#[pyfunction]
fn k_chain_pair(k: usize) -> PyResult<(PyGraph, PyGraph)> {
    let (a, b) = make_k_chain_pair(&ChainSpec::new(k).map_err(err)?);
    Ok((PyGraph { inner: a }, PyGraph { inner: b }))
}

#[pyfunction(name = "pool_chain")]
fn py_pool_chain(graph: PyRef<'_, PyGraph>, target: usize) -> PyResult<PyGraph> {
    Ok(PyGraph { inner: pool_chain(&graph.inner, target).map_err(err)? })
}

#[pyfunction]
#[pyo3(signature = (k=4))]
fn demonstrate_increase(py: Python<'_>, k: usize) -> PyResult<Py<PyAny>> {
    let r = gwl::demonstrate_increase(k).map_err(err)?;
    json_to_py(py, &serde_json::to_string(&r).expect("report serializes"))
}

#[pyfunction]
#[pyo3(signature = (kind="sparse", trials=1000, seed=0))]
fn empirical_maintains(py: Python<'_>, kind: &str, trials: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let r = gwl::empirical_maintains(pool_kind(kind)?, trials, seed).map_err(err)?;
    json_to_py(py, &r.to_json())
}

#[pyfunction]
#[pyo3(signature = (seed=0, motions=20))]
fn equivariance_suite(py: Python<'_>, seed: u64, motions: usize) -> PyResult<Py<PyAny>> {
    let r = geounet::props::equivariance_suite(seed, motions).map_err(err)?;
    json_to_py(py, &r.to_json())
}

/// CA records of fixed-column ATOM text as `(chain, index, name, (x, y, z))`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn parse_ca_structure(text: &str) -> PyResult<Vec<(char, i64, String, (f64, f64, f64))>> {
    let recs = protein::parse_ca_structure(text).map_err(err)?;
    Ok(recs.into_iter().map(|r| (r.chain, r.index, r.name, (r.ca[0], r.ca[1], r.ca[2]))).collect())
}

/// Residue KNN graph with one-hot amino-acid scalars.
#[pyfunction]
#[pyo3(signature = (text, k=16, one_hot=true))]
fn residue_graph(text: &str, k: usize, one_hot: bool) -> PyResult<PyGraph> {
    let recs = protein::parse_ca_structure(text).map_err(err)?;
    Ok(PyGraph { inner: protein::build_residue_graph(&recs, k, one_hot).map_err(err)? })
}

/// Synthetic motif-arrangement dataset as `(graph, label)` pairs.
#[pyfunction]
#[pyo3(signature = (classes=4, per_class=50, seed=0))]
fn synthetic_dataset(classes: usize, per_class: usize, seed: u64) -> PyResult<Vec<(PyGraph, usize)>> {
    let data = make_synthetic_fold_dataset(classes, per_class, seed).map_err(err)?;
    Ok(data.into_iter().map(|s| (PyGraph { inner: s.graph }, s.label)).collect())
}

#[pymodule]
#[pyo3(name = "geounet")]
fn geounet_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GeometryError", m.py().get_type::<GeometryError>())?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyRigidMotion>()?;
    m.add_class::<PyUNet>()?;
    m.add_function(wrap_pyfunction!(knn_edges, m)?)?;
    m.add_function(wrap_pyfunction!(select_centers, m)?)?;
    m.add_function(wrap_pyfunction!(pool_graph, m)?)?;
    m.add_function(wrap_pyfunction!(coarsen, m)?)?;
    m.add_function(wrap_pyfunction!(first_distinguishing_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(k_chain_pair, m)?)?;
    m.add_function(wrap_pyfunction!(py_pool_chain, m)?)?;
    m.add_function(wrap_pyfunction!(demonstrate_increase, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_maintains, m)?)?;
    m.add_function(wrap_pyfunction!(equivariance_suite, m)?)?;
    m.add_function(wrap_pyfunction!(parse_ca_structure, m)?)?;
    m.add_function(wrap_pyfunction!(residue_graph, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    Ok(())
}
