//! Invariant (SchNet-style) and equivariant (EGNN-style) message passing.
//!
//! On the tape, scalar features are `N × f` and vector features use a
//! component-major layout `(N·d) × v`: row `i·d + k` holds coordinate `k`
//! of every channel of node `i`. Rotating a node's `d × v` block from the
//! left commutes with any right-multiplication mixing channels, which is
//! what keeps the vector updates equivariant.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeoError, Result};
use crate::geom::{edge_geometry, GeometricGraph};
use crate::tensor::{Binding, Linear, Mlp, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Invariant,
    Equivariant,
}

impl std::str::FromStr for LayerKind {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariant" => Ok(LayerKind::Invariant),
            "equivariant" => Ok(LayerKind::Equivariant),
            other => Err(invalid(format!("unknown layer kind `{other}` (expected invariant|equivariant)"))),
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LayerKind::Invariant => "invariant",
            LayerKind::Equivariant => "equivariant",
        })
    }
}

/// Graph layout `N × v × d` → tape layout `(N·d) × v`.
pub fn vectors_to_tape(vectors: &[f64], n: usize, v: usize, d: usize) -> Tensor {
    let mut out = vec![0.0; n * v * d];
    for i in 0..n {
        for c in 0..v {
            for k in 0..d {
                out[(i * d + k) * v + c] = vectors[(i * v + c) * d + k];
            }
        }
    }
    Tensor::new(n * d, v, out).expect("sizes agree")
}

/// Tape layout `(N·d) × v` → graph layout `N × v × d`.
pub fn vectors_from_tape(t: &Tensor, d: usize) -> Vec<f64> {
    let v = t.cols();
    let n = t.rows() / d.max(1);
    let mut out = vec![0.0; n * v * d];
    for i in 0..n {
        for c in 0..v {
            for k in 0..d {
                out[(i * v + c) * d + k] = t.values()[(i * d + k) * v + c];
            }
        }
    }
    out
}

/// Per-graph index arrays and edge geometry shared by every layer that
/// runs on the same graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    num_nodes: usize,
    dim: usize,
    /// Receiving node `i` of each directed edge `(i, j)`.
    recv: Rc<[usize]>,
    /// Sending neighbour `j`.
    send: Rc<[usize]>,
    distances: Vec<f64>,
    /// `‖x_i − x_j‖²` as an `E × 1` column.
    sq_distances: Tensor,
    /// `x_i − x_j`, flattened edge-major.
    relative: Vec<f64>,
    /// Row `e·d + k` → `e`.
    edge_of_row: Rc<[usize]>,
    /// Row `e·d + k` → `recv[e]·d + k`.
    vector_segment: Rc<[usize]>,
    /// Row `e·d + k` → `send[e]·d + k`.
    send_rows: Rc<[usize]>,
    /// Row `i·d + k` → `i`.
    node_of_row: Rc<[usize]>,
    /// Graph each node belongs to when several graphs share one context.
    graph_of_node: Rc<[usize]>,
    num_graphs: usize,
}

impl GraphContext {
    pub fn new(g: &GeometricGraph) -> Self {
        let d = g.dim();
        let recs = edge_geometry(g);
        let e = recs.len();
        let recv: Vec<usize> = recs.iter().map(|r| r.source).collect();
        let send: Vec<usize> = recs.iter().map(|r| r.target).collect();
        let distances: Vec<f64> = recs.iter().map(|r| r.distance).collect();
        let sq: Vec<f64> = recs.iter().map(|r| r.relative_position.iter().map(|x| x * x).sum()).collect();
        let relative: Vec<f64> = recs.iter().flat_map(|r| r.relative_position.iter().copied()).collect();
        let edge_of_row: Vec<usize> = (0..e * d).map(|r| r / d).collect();
        let vector_segment: Vec<usize> = (0..e * d).map(|r| recv[r / d] * d + r % d).collect();
        let send_rows: Vec<usize> = (0..e * d).map(|r| send[r / d] * d + r % d).collect();
        let node_of_row: Vec<usize> = (0..g.num_nodes() * d).map(|r| r / d).collect();
        Self {
            num_nodes: g.num_nodes(),
            dim: d,
            recv: recv.into(),
            send: send.into(),
            distances,
            sq_distances: Tensor::new(e, 1, sq).expect("column"),
            relative,
            edge_of_row: edge_of_row.into(),
            vector_segment: vector_segment.into(),
            send_rows: send_rows.into(),
            node_of_row: node_of_row.into(),
            graph_of_node: vec![0; g.num_nodes()].into(),
            num_graphs: 1,
        }
    }

    /// Disjoint union of several contexts; node ids are offset in order and
    /// readouts produce one row per part.
    pub fn batch(parts: &[&GraphContext]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("cannot batch zero graphs"))?;
        let d = first.dim;
        if let Some(p) = parts.iter().find(|p| p.dim != d) {
            return Err(GeoError::DimensionMismatch { expected: d, got: p.dim });
        }
        let mut out = GraphContext {
            num_nodes: 0,
            dim: d,
            recv: Rc::from(Vec::new()),
            send: Rc::from(Vec::new()),
            distances: Vec::new(),
            sq_distances: Tensor::zeros(0, 1),
            relative: Vec::new(),
            edge_of_row: Rc::from(Vec::new()),
            vector_segment: Rc::from(Vec::new()),
            send_rows: Rc::from(Vec::new()),
            node_of_row: Rc::from(Vec::new()),
            graph_of_node: Rc::from(Vec::new()),
            num_graphs: 0,
        };
        let (mut recv, mut send, mut sq, mut graph_of_node) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for p in parts {
            let off = out.num_nodes;
            recv.extend(p.recv.iter().map(|&i| i + off));
            send.extend(p.send.iter().map(|&i| i + off));
            out.distances.extend_from_slice(&p.distances);
            sq.extend_from_slice(p.sq_distances.values());
            out.relative.extend_from_slice(&p.relative);
            graph_of_node.extend(p.graph_of_node.iter().map(|&g| g + out.num_graphs));
            out.num_nodes += p.num_nodes;
            out.num_graphs += p.num_graphs;
        }
        let e = recv.len();
        out.edge_of_row = (0..e * d).map(|r| r / d).collect::<Vec<_>>().into();
        out.vector_segment = (0..e * d).map(|r| recv[r / d] * d + r % d).collect::<Vec<_>>().into();
        out.send_rows = (0..e * d).map(|r| send[r / d] * d + r % d).collect::<Vec<_>>().into();
        out.node_of_row = (0..out.num_nodes * d).map(|r| r / d).collect::<Vec<_>>().into();
        out.sq_distances = Tensor::new(e, 1, sq)?;
        out.recv = recv.into();
        out.send = send.into();
        out.graph_of_node = graph_of_node.into();
        Ok(out)
    }

    pub fn num_graphs(&self) -> usize {
        self.num_graphs
    }

    pub fn graph_of_node(&self) -> &[usize] {
        &self.graph_of_node
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_directed_edges(&self) -> usize {
        self.recv.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn node_of_row(&self) -> Rc<[usize]> {
        self.node_of_row.clone()
    }

    /// `E × v` constant holding `1 / |N_i|` for the receiving node of each edge.
    fn inverse_degree(&self, v: usize) -> Tensor {
        let mut deg = vec![0usize; self.num_nodes];
        self.recv.iter().for_each(|&i| deg[i] += 1);
        let vals = self.recv.iter().flat_map(|&i| std::iter::repeat_n(1.0 / deg[i] as f64, v)).collect();
        Tensor::new(self.recv.len(), v, vals).expect("sizes agree")
    }

    /// `(E·d) × v` constant whose row `e·d + k` repeats `(x_i − x_j)_k`.
    fn relative_broadcast(&self, v: usize) -> Tensor {
        let vals = self.relative.iter().flat_map(|&x| std::iter::repeat_n(x, v)).collect();
        Tensor::new(self.relative.len(), v, vals).expect("sizes agree")
    }
}

/// Node features at one message-passing step.
#[derive(Debug, Clone, Copy)]
pub struct LayerState {
    /// `N × f`.
    pub scalars: Var,
    /// `(N·d) × v`.
    pub vectors: Var,
}

impl LayerState {
    /// Puts a graph's own features on the tape.
    pub fn from_graph(tape: &mut Tape, g: &GeometricGraph) -> Self {
        let s = Tensor::new(g.num_nodes(), g.scalar_width(), g.scalars().to_vec()).expect("graph invariant");
        let v = vectors_to_tape(g.vectors(), g.num_nodes(), g.vector_channels(), g.dim());
        LayerState { scalars: tape.leaf(s), vectors: tape.leaf(v) }
    }

    /// Scalars `N × f` and vectors in graph layout `N × v × d`.
    pub fn values(&self, tape: &Tape, d: usize) -> (Tensor, Vec<f64>) {
        (tape.value(self.scalars).clone(), vectors_from_tape(tape.value(self.vectors), d))
    }

    pub fn scalar_width(&self, tape: &Tape) -> usize {
        tape.shape(self.scalars)[1]
    }

    pub fn vector_channels(&self, tape: &Tape) -> usize {
        tape.shape(self.vectors)[1]
    }
}

/// Gaussian radial basis `exp(−γ (r − c_b)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialBasis {
    pub centers: Vec<f64>,
    pub gamma: f64,
}

impl RadialBasis {
    pub const DEFAULT_SIZE: usize = 16;

    /// `size` centers spread uniformly over `[0, cutoff]`, `γ = 10 / cutoff²`.
    pub fn uniform(cutoff: f64, size: usize) -> Result<Self> {
        if !(cutoff > 0.0) || size == 0 {
            return Err(invalid("radial basis needs a positive cutoff and at least one center"));
        }
        let step = if size > 1 { cutoff / (size - 1) as f64 } else { 0.0 };
        Ok(Self { centers: (0..size).map(|b| b as f64 * step).collect(), gamma: 10.0 / (cutoff * cutoff) })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn expand(&self, distances: &[f64]) -> Tensor {
        let b = self.centers.len();
        let vals = distances
            .iter()
            .flat_map(|&r| self.centers.iter().map(move |&c| (-self.gamma * (r - c) * (r - c)).exp()))
            .collect();
        Tensor::new(distances.len(), b, vals).expect("sizes agree")
    }
}

/// Channel mixing `V·W` used when a layer changes the channel count.
fn mix_vectors(mix: &Option<Linear>, tape: &mut Tape, params: &Binding, v: Var) -> Result<Var> {
    match mix {
        Some(lin) => lin.forward(tape, params, v),
        None => Ok(v),
    }
}

fn new_mix<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    v_in: usize,
    v_out: usize,
) -> Result<Option<Linear>> {
    if v_in == v_out {
        Ok(None)
    } else {
        Linear::new(store, rng, &format!("{name}.vmix"), v_in, v_out, false).map(Some)
    }
}

/// Shape of one layer: input/output scalar widths and vector channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub in_width: usize,
    pub out_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub hidden: usize,
}

/// Continuous-filter convolution:
/// `s_i' = update([s_i ‖ Σ_j filter(rbf(‖x_ij‖)) ⊙ s_j])`.
#[derive(Debug, Clone)]
pub struct InvariantLayer {
    rbf: RadialBasis,
    filter: Mlp,
    update: Mlp,
    mix: Option<Linear>,
    dims: LayerDims,
}

impl InvariantLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: LayerDims,
        rbf: RadialBasis,
    ) -> Result<Self> {
        if rbf.is_empty() || !(rbf.gamma > 0.0) {
            return Err(invalid("radial basis needs B ≥ 1 and γ > 0"));
        }
        let filter = Mlp::two_layer(store, rng, &format!("{name}.filter"), rbf.len(), dims.hidden, dims.in_width)?;
        let update =
            Mlp::two_layer(store, rng, &format!("{name}.update"), 2 * dims.in_width, dims.hidden, dims.out_width)?;
        let mix = new_mix(store, rng, name, dims.in_channels, dims.out_channels)?;
        Ok(Self { rbf, filter, update, mix, dims })
    }

    pub fn dims(&self) -> LayerDims {
        self.dims
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, ctx: &GraphContext, state: LayerState) -> Result<LayerState> {
        check_state(tape, state, ctx, self.dims)?;
        let basis = tape.leaf(self.rbf.expand(&ctx.distances));
        let filters = self.filter.forward(tape, params, basis)?;
        let neighbours = tape.gather_rows(state.scalars, ctx.send.clone())?;
        let messages = tape.hadamard(filters, neighbours)?;
        let agg = tape.segment_sum(messages, ctx.recv.clone(), ctx.num_nodes)?;
        let joined = tape.concat(state.scalars, agg, 1)?;
        let scalars = self.update.forward(tape, params, joined)?;
        let vectors = mix_vectors(&self.mix, tape, params, state.vectors)?;
        Ok(LayerState { scalars, vectors })
    }
}

/// EGNN-style update retargeted at vector channels. Channel `c` acts as a
/// displaced copy `x_i + v_i^(c)` of the node, giving per-channel offsets
/// `r_ij^(c) = x_ij + v_i^(c) − v_j^(c)`:
/// `m_ij = φ_m(s_i ‖ s_j ‖ ‖x_ij‖² ‖ [‖r_ij^(c)‖²]_c)`,
/// `s_i' = φ_s(s_i ‖ (1/|N_i|) Σ_j m_ij)`,
/// `v_i'^(c) = v_i^(c) + (1/|N_i|) Σ_j r_ij^(c) · tanh(φ_g(m_ij)_c)`.
/// The mean and the bounded gate keep vector norms from compounding across
/// layers. Coordinates never move.
#[derive(Debug, Clone)]
pub struct EquivariantLayer {
    message: Mlp,
    scalar_update: Mlp,
    gate: Mlp,
    mix: Option<Linear>,
    dims: LayerDims,
}

impl EquivariantLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, dims: LayerDims) -> Result<Self> {
        let m = dims.out_width;
        let message_in = 2 * dims.in_width + 1 + dims.out_channels;
        let message = Mlp::two_layer(store, rng, &format!("{name}.message"), message_in, dims.hidden, m)?;
        let scalar_update =
            Mlp::two_layer(store, rng, &format!("{name}.update"), dims.in_width + m, dims.hidden, dims.out_width)?;
        let gate = Mlp::two_layer(store, rng, &format!("{name}.gate"), m, dims.hidden, dims.out_channels)?;
        let mix = new_mix(store, rng, name, dims.in_channels, dims.out_channels)?;
        Ok(Self { message, scalar_update, gate, mix, dims })
    }

    pub fn dims(&self) -> LayerDims {
        self.dims
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, ctx: &GraphContext, state: LayerState) -> Result<LayerState> {
        check_state(tape, state, ctx, self.dims)?;
        let d = ctx.dim;
        let base = mix_vectors(&self.mix, tape, params, state.vectors)?;
        let v_i = tape.gather_rows(base, ctx.vector_segment.clone())?;
        let v_j = tape.gather_rows(base, ctx.send_rows.clone())?;
        let dv = tape.sub(v_i, v_j)?;
        let rel = tape.leaf(ctx.relative_broadcast(self.dims.out_channels));
        let offsets = tape.add(rel, dv)?;
        let sq = tape.hadamard(offsets, offsets)?;
        let offset_norms = tape.segment_sum(sq, ctx.edge_of_row.clone(), ctx.num_directed_edges())?;

        let s_i = tape.gather_rows(state.scalars, ctx.recv.clone())?;
        let s_j = tape.gather_rows(state.scalars, ctx.send.clone())?;
        let r2 = tape.leaf(ctx.sq_distances.clone());
        let input = tape.concat(s_i, s_j, 1)?;
        let input = tape.concat(input, r2, 1)?;
        let input = tape.concat(input, offset_norms, 1)?;
        let messages = self.message.forward(tape, params, input)?;
        let inv_deg_m = tape.leaf(ctx.inverse_degree(self.dims.out_width));
        let weighted = tape.hadamard(messages, inv_deg_m)?;
        let agg = tape.segment_sum(weighted, ctx.recv.clone(), ctx.num_nodes)?;
        let joined = tape.concat(state.scalars, agg, 1)?;
        let scalars = self.scalar_update.forward(tape, params, joined)?;

        let gates = self.gate.forward(tape, params, messages)?;
        let gates = tape.tanh(gates);
        let inv_deg = tape.leaf(ctx.inverse_degree(self.dims.out_channels));
        let gates = tape.hadamard(gates, inv_deg)?;
        let gates_rows = tape.gather_rows(gates, ctx.edge_of_row.clone())?;
        let updates = tape.hadamard(gates_rows, offsets)?;
        let pushed = tape.segment_sum(updates, ctx.vector_segment.clone(), ctx.num_nodes * d)?;
        let vectors = tape.add(base, pushed)?;
        Ok(LayerState { scalars, vectors })
    }
}

fn check_state(tape: &Tape, state: LayerState, ctx: &GraphContext, dims: LayerDims) -> Result<()> {
    let [n, f] = tape.shape(state.scalars);
    let [nd, v] = tape.shape(state.vectors);
    if n != ctx.num_nodes || nd != ctx.num_nodes * ctx.dim {
        return Err(GeoError::DimensionMismatch { expected: ctx.num_nodes, got: n });
    }
    if f != dims.in_width {
        return Err(GeoError::DimensionMismatch { expected: dims.in_width, got: f });
    }
    if v != dims.in_channels {
        return Err(GeoError::DimensionMismatch { expected: dims.in_channels, got: v });
    }
    Ok(())
}

/// Either layer family behind one interface.
#[derive(Debug, Clone)]
pub enum MessageLayer {
    Invariant(InvariantLayer),
    Equivariant(EquivariantLayer),
}

impl MessageLayer {
    pub fn new<R: Rng + ?Sized>(
        kind: LayerKind,
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: LayerDims,
        rbf: &RadialBasis,
    ) -> Result<Self> {
        Ok(match kind {
            LayerKind::Invariant => MessageLayer::Invariant(InvariantLayer::new(store, rng, name, dims, rbf.clone())?),
            LayerKind::Equivariant => MessageLayer::Equivariant(EquivariantLayer::new(store, rng, name, dims)?),
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, ctx: &GraphContext, state: LayerState) -> Result<LayerState> {
        match self {
            MessageLayer::Invariant(l) => l.forward(tape, params, ctx, state),
            MessageLayer::Equivariant(l) => l.forward(tape, params, ctx, state),
        }
    }

    pub fn dims(&self) -> LayerDims {
        match self {
            MessageLayer::Invariant(l) => l.dims(),
            MessageLayer::Equivariant(l) => l.dims(),
        }
    }
}

/// Sum readout `head(Σ_i s_i ‖ Σ_i ‖v_i^(c)‖)`; every input is invariant.
#[derive(Debug, Clone)]
pub struct Readout {
    head: Mlp,
}

impl Readout {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        channels: usize,
        hidden: usize,
        out_width: usize,
    ) -> Result<Self> {
        Ok(Self { head: Mlp::two_layer(store, rng, name, width + channels, hidden, out_width)? })
    }

    pub fn out_width(&self) -> usize {
        self.head.out_width()
    }

    /// Returns one `r`-wide embedding row per graph in the context.
    pub fn forward(&self, tape: &mut Tape, params: &Binding, ctx: &GraphContext, state: LayerState) -> Result<Var> {
        let pooled = pooled_invariants(tape, ctx, state)?;
        self.head.forward(tape, params, pooled)
    }
}

/// `[Σ_i s_i ‖ Σ_i ‖v_i^(c)‖]`, one `f + v` row per graph.
pub fn pooled_invariants(tape: &mut Tape, ctx: &GraphContext, state: LayerState) -> Result<Var> {
    let n = ctx.num_nodes;
    let s_sum = tape.segment_sum(state.scalars, ctx.graph_of_node.clone(), ctx.num_graphs)?;
    let sq = tape.hadamard(state.vectors, state.vectors)?;
    let per_node = tape.segment_sum(sq, ctx.node_of_row(), n)?;
    let norms = tape.sqrt(per_node)?;
    let v_sum = tape.segment_sum(norms, ctx.graph_of_node.clone(), ctx.num_graphs)?;
    tape.concat(s_sum, v_sum, 1)
}

/// Runs one invariant pass on concrete values.
pub fn invariant_pass(
    g: &GeometricGraph,
    layer: &InvariantLayer,
    params: &ParamStore,
) -> Result<(Tensor, Vec<f64>)> {
    run_single(g, params, |tape, b, ctx, st| layer.forward(tape, b, ctx, st))
}

/// Runs one equivariant pass on concrete values.
pub fn equivariant_pass(
    g: &GeometricGraph,
    layer: &EquivariantLayer,
    params: &ParamStore,
) -> Result<(Tensor, Vec<f64>)> {
    run_single(g, params, |tape, b, ctx, st| layer.forward(tape, b, ctx, st))
}

fn run_single(
    g: &GeometricGraph,
    params: &ParamStore,
    f: impl FnOnce(&mut Tape, &Binding, &GraphContext, LayerState) -> Result<LayerState>,
) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let ctx = GraphContext::new(g);
    let state = LayerState::from_graph(&mut tape, g);
    let out = f(&mut tape, &binding, &ctx, state)?;
    Ok(out.values(&tape, g.dim()))
}
