//! Encoder/decoder graph U-Net and a flat message-passing baseline.
//!
//! Pooling structure depends only on coordinates, so it is computed once
//! per graph as a [`Hierarchy`] and reused across training steps. Several
//! hierarchies can be merged into one disjoint batch.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeoError, Result};
use crate::geom::GeometricGraph;
use crate::layers::{
    vectors_from_tape, vectors_to_tape, GraphContext, LayerDims, LayerKind, LayerState, MessageLayer, RadialBasis,
    Readout,
};
use crate::pool::{
    assign, center_coords, connect, select_centers, ClusterAssignment, PoolKind, PoolResult, DEFAULT_FPS_RATIO,
    DEFAULT_KNN_K,
};
use crate::tensor::{Binding, Linear, Mlp, ParamStore, Tape, Tensor, Var, HIDDEN_WIDTH};

/// Index arrays for one pool/unpool step between a fine and a coarse level.
#[derive(Debug, Clone)]
pub struct PoolLevel {
    assignment: ClusterAssignment,
    dim: usize,
    fine_nodes: usize,
    coarse_nodes: usize,
    /// Membership pairs `(j, i)` split into node and cluster columns.
    pair_node: Rc<[usize]>,
    pair_cluster: Rc<[usize]>,
    pair_node_rows: Rc<[usize]>,
    pair_cluster_rows: Rc<[usize]>,
    /// Fine node → supernode slot, or `coarse_nodes` for the fill row.
    unpool_rows: Rc<[usize]>,
    unpool_vector_rows: Rc<[usize]>,
}

impl PoolLevel {
    pub fn new(assignment: ClusterAssignment, dim: usize) -> Self {
        let pairs = assignment.pairs();
        let (n, k) = (assignment.num_nodes(), assignment.num_clusters());
        let mut slot = vec![k; n];
        for (j, &c) in assignment.centers().iter().enumerate() {
            slot[c] = j;
        }
        Self::from_arrays(assignment.clone(), dim, n, k, &pairs, &slot)
    }

    fn from_arrays(
        assignment: ClusterAssignment,
        d: usize,
        n: usize,
        k: usize,
        pairs: &[(usize, usize)],
        slot: &[usize],
    ) -> Self {
        let expand = |ids: &mut dyn Iterator<Item = usize>| -> Rc<[usize]> {
            ids.flat_map(|i| (0..d).map(move |c| i * d + c)).collect::<Vec<_>>().into()
        };
        PoolLevel {
            dim: d,
            fine_nodes: n,
            coarse_nodes: k,
            pair_node: pairs.iter().map(|p| p.1).collect::<Vec<_>>().into(),
            pair_cluster: pairs.iter().map(|p| p.0).collect::<Vec<_>>().into(),
            pair_node_rows: expand(&mut pairs.iter().map(|p| p.1)),
            pair_cluster_rows: expand(&mut pairs.iter().map(|p| p.0)),
            unpool_rows: slot.to_vec().into(),
            unpool_vector_rows: expand(&mut slot.iter().copied()),
            assignment,
        }
    }

    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    pub fn num_fine(&self) -> usize {
        self.fine_nodes
    }

    pub fn num_coarse(&self) -> usize {
        self.coarse_nodes
    }

    fn batch(parts: &[&PoolLevel]) -> Result<Self> {
        let d = parts[0].dim;
        let (mut n, mut k) = (0, 0);
        let mut pairs = Vec::new();
        let total_k: usize = parts.iter().map(|p| p.coarse_nodes).sum();
        let mut slot = Vec::new();
        let mut centers = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for p in parts {
            if p.dim != d {
                return Err(GeoError::DimensionMismatch { expected: d, got: p.dim });
            }
            pairs.extend(p.pair_cluster.iter().zip(p.pair_node.iter()).map(|(&j, &i)| (j + k, i + n)));
            slot.extend(p.unpool_rows.iter().map(|&s| if s == p.coarse_nodes { total_k } else { s + k }));
            centers.extend(p.assignment.centers().iter().map(|&c| c + n));
            members.extend((0..p.coarse_nodes).map(|j| p.assignment.members(j).iter().map(|&i| i + n).collect()));
            n += p.fine_nodes;
            k += p.coarse_nodes;
        }
        let assignment = ClusterAssignment::new(n, centers, members)?;
        Ok(Self::from_arrays(assignment, d, n, k, &pairs, &slot))
    }
}

/// Coordinates-only pooling pyramid: `contexts[0]` is the input graph,
/// `contexts[l + 1]` the result of `pools[l]`.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    contexts: Vec<GraphContext>,
    pools: Vec<PoolLevel>,
    /// Structure of every level (no features).
    graphs: Vec<GeometricGraph>,
}

impl Hierarchy {
    /// No pooling: a single level.
    pub fn flat(g: &GeometricGraph) -> Self {
        Hierarchy { contexts: vec![GraphContext::new(g)], pools: Vec::new(), graphs: vec![structure_only(g)] }
    }

    pub fn build(g: &GeometricGraph, levels: usize, kind: PoolKind, ratio: f64, knn_k: usize) -> Result<Self> {
        let mut h = Self::flat(g);
        for _ in 0..levels {
            let fine = h.graphs.last().expect("at least one level").clone();
            let centers = select_centers(&fine, ratio)?;
            if centers.is_empty() {
                return Err(invalid(format!("pooling {} nodes at ratio {ratio} leaves none", fine.num_nodes())));
            }
            h.push_level(assign(kind, &fine, &centers)?, knn_k)?;
        }
        Ok(h)
    }

    /// Appends a level from an explicit assignment, reconnecting with KNN.
    pub fn push_level(&mut self, assignment: ClusterAssignment, knn_k: usize) -> Result<()> {
        let fine = self.graphs.last().expect("at least one level");
        let coords = center_coords(fine, assignment.centers());
        let edges = connect(&coords, fine.dim(), knn_k)?;
        self.push_level_with_edges(assignment, &edges)
    }

    /// Appends a level from an explicit assignment and supernode edges.
    pub fn push_level_with_edges(&mut self, assignment: ClusterAssignment, edges: &[(usize, usize)]) -> Result<()> {
        let fine = self.graphs.last().expect("at least one level");
        if assignment.num_nodes() != fine.num_nodes() {
            return Err(GeoError::DimensionMismatch { expected: fine.num_nodes(), got: assignment.num_nodes() });
        }
        let coords = center_coords(fine, assignment.centers());
        let coarse = GeometricGraph::from_parts(fine.dim(), coords, edges, 0, Vec::new(), 0, Vec::new())?;
        self.pools.push(PoolLevel::new(assignment, fine.dim()));
        self.contexts.push(GraphContext::new(&coarse));
        self.graphs.push(coarse);
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.pools.len()
    }

    pub fn context(&self, level: usize) -> &GraphContext {
        &self.contexts[level]
    }

    pub fn pool(&self, level: usize) -> &PoolLevel {
        &self.pools[level]
    }

    /// Node counts from the input graph down to the coarsest level.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.contexts.iter().map(GraphContext::num_nodes).collect()
    }

    pub fn level_graph(&self, level: usize) -> &GeometricGraph {
        &self.graphs[level]
    }

    /// Merges hierarchies of equal depth into one disjoint batch.
    pub fn batch(parts: &[&Hierarchy]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("cannot batch zero graphs"))?;
        let depth = first.num_levels();
        if let Some(p) = parts.iter().find(|p| p.num_levels() != depth) {
            return Err(GeoError::DimensionMismatch { expected: depth, got: p.num_levels() });
        }
        let contexts = (0..=depth)
            .map(|l| GraphContext::batch(&parts.iter().map(|p| &p.contexts[l]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let pools = (0..depth)
            .map(|l| PoolLevel::batch(&parts.iter().map(|p| &p.pools[l]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        // per-level structure graphs are only kept for single-graph hierarchies
        let graphs = if parts.len() == 1 { first.graphs.clone() } else { Vec::new() };
        Ok(Hierarchy { contexts, pools, graphs })
    }
}

fn structure_only(g: &GeometricGraph) -> GeometricGraph {
    GeometricGraph::from_parts(g.dim(), g.coords().to_vec(), g.edges(), 0, Vec::new(), 0, Vec::new())
        .expect("copy of a valid graph")
}

/// Stacks the raw features of several graphs into one tape state.
pub fn batch_inputs(tape: &mut Tape, graphs: &[&GeometricGraph]) -> Result<LayerState> {
    let first = graphs.first().ok_or_else(|| invalid("cannot batch zero graphs"))?;
    let (f, v, d) = (first.scalar_width(), first.vector_channels(), first.dim());
    let (mut s, mut vv, mut n) = (Vec::new(), Vec::new(), 0);
    for g in graphs {
        if g.scalar_width() != f || g.vector_channels() != v || g.dim() != d {
            return Err(invalid("batched graphs must share feature widths and dimension"));
        }
        s.extend_from_slice(g.scalars());
        vv.extend_from_slice(vectors_to_tape(g.vectors(), g.num_nodes(), v, d).values());
        n += g.num_nodes();
    }
    Ok(LayerState { scalars: tape.leaf(Tensor::new(n, f, s)?), vectors: tape.leaf(Tensor::new(n * d, v, vv)?) })
}

/// Hyperparameters shared by both model shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub levels: usize,
    pub layers_per_level: usize,
    /// Decoder depth per level; mirrors the encoder when absent.
    pub decoder_layers_per_level: Option<usize>,
    pub pool_kind: PoolKind,
    pub fps_ratio: f64,
    pub knn_k: usize,
    pub layer_kind: LayerKind,
    pub feature_width: usize,
    pub vector_channels: usize,
    pub readout_width: usize,
    pub hidden_width: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub rbf_cutoff: f64,
    pub rbf_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            levels: 3,
            layers_per_level: 2,
            decoder_layers_per_level: None,
            pool_kind: PoolKind::Sparse,
            fps_ratio: DEFAULT_FPS_RATIO,
            knn_k: DEFAULT_KNN_K,
            layer_kind: LayerKind::Equivariant,
            feature_width: 32,
            vector_channels: 4,
            readout_width: 32,
            hidden_width: HIDDEN_WIDTH,
            input_width: 1,
            input_channels: 0,
            num_classes: 2,
            rbf_cutoff: 10.0,
            rbf_size: RadialBasis::DEFAULT_SIZE,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(invalid("levels must be at least 1"));
        }
        if !(self.fps_ratio > 0.0 && self.fps_ratio <= 1.0) {
            return Err(invalid(format!("fps_ratio must lie in (0, 1], got {}", self.fps_ratio)));
        }
        if self.layers_per_level == 0 || self.decoder_layers() == 0 {
            return Err(invalid("every level needs at least one encoder and one decoder layer"));
        }
        self.validate_widths()
    }

    fn validate_widths(&self) -> Result<()> {
        if self.feature_width == 0 || self.hidden_width == 0 || self.readout_width == 0 {
            return Err(invalid("feature, hidden and readout widths must be positive"));
        }
        if self.num_classes < 2 {
            return Err(invalid("need at least two classes"));
        }
        if self.knn_k == 0 {
            return Err(invalid("knn_k must be positive"));
        }
        Ok(())
    }

    pub fn decoder_layers(&self) -> usize {
        self.decoder_layers_per_level.unwrap_or(self.layers_per_level)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    fn radial_basis(&self) -> Result<RadialBasis> {
        RadialBasis::uniform(self.rbf_cutoff, self.rbf_size)
    }

    fn dims(&self, in_width: usize, in_channels: usize) -> LayerDims {
        LayerDims {
            in_width,
            out_width: self.feature_width,
            in_channels,
            out_channels: self.vector_channels,
            hidden: self.hidden_width,
        }
    }
}

/// Input embedding, readout head and linear classifier shared by both models.
#[derive(Debug, Clone)]
struct Ends {
    embed: Linear,
    embed_vectors: Linear,
    readout: Readout,
    classifier: Linear,
}

impl Ends {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, c: &UNetConfig) -> Result<Self> {
        Ok(Ends {
            embed: Linear::new(store, rng, "embed", c.input_width, c.feature_width, true)?,
            embed_vectors: Linear::new(store, rng, "embed.vmix", c.input_channels, c.vector_channels, false)?,
            readout: Readout::new(store, rng, "readout", c.feature_width, c.vector_channels, c.hidden_width, c.readout_width)?,
            classifier: Linear::new(store, rng, "classifier", c.readout_width, c.num_classes, true)?,
        })
    }

    fn embed(&self, tape: &mut Tape, b: &Binding, input: LayerState) -> Result<LayerState> {
        Ok(LayerState {
            scalars: self.embed.forward(tape, b, input.scalars)?,
            vectors: self.embed_vectors.forward(tape, b, input.vectors)?,
        })
    }

    fn classify(&self, tape: &mut Tape, b: &Binding, ctx: &GraphContext, st: LayerState) -> Result<Var> {
        let e = self.readout.forward(tape, b, ctx, st)?;
        let e = tape.silu(e);
        self.classifier.forward(tape, b, e)
    }
}

/// Anything that maps a (batched) hierarchy and raw features to logits.
pub trait GraphClassifier {
    /// Pooling levels the model expects in its hierarchy.
    fn hierarchy_depth(&self) -> usize;

    /// Builds the pooling hierarchy this model needs for `g`.
    fn hierarchy(&self, g: &GeometricGraph) -> Result<Hierarchy>;

    /// `B × C` logits for the `B` graphs in `h`.
    fn logits(&self, tape: &mut Tape, params: &Binding, h: &Hierarchy, input: LayerState) -> Result<Var>;

    /// Logits of a single graph on a fresh tape.
    fn predict(&self, g: &GeometricGraph, params: &ParamStore) -> Result<Tensor> {
        let h = self.hierarchy(g)?;
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let input = LayerState::from_graph(&mut tape, g);
        let y = self.logits(&mut tape, &b, &h, input)?;
        Ok(tape.value(y).clone())
    }
}

fn check_input(tape: &Tape, h: &Hierarchy, input: LayerState, c: &UNetConfig) -> Result<()> {
    let ctx = h.context(0);
    let [n, f] = tape.shape(input.scalars);
    if n != ctx.num_nodes() {
        return Err(GeoError::DimensionMismatch { expected: ctx.num_nodes(), got: n });
    }
    if f != c.input_width {
        return Err(GeoError::DimensionMismatch { expected: c.input_width, got: f });
    }
    if input.vector_channels(tape) != c.input_channels {
        return Err(GeoError::DimensionMismatch { expected: c.input_channels, got: input.vector_channels(tape) });
    }
    Ok(())
}

fn run_layers(
    layers: &[MessageLayer],
    tape: &mut Tape,
    b: &Binding,
    ctx: &GraphContext,
    mut st: LayerState,
) -> Result<LayerState> {
    for l in layers {
        st = l.forward(tape, b, ctx, st)?;
    }
    Ok(st)
}

/// Geometric graph U-Net.
#[derive(Debug, Clone)]
pub struct UNetModel {
    config: UNetConfig,
    ends: Ends,
    encoder: Vec<Vec<MessageLayer>>,
    bottleneck: Vec<MessageLayer>,
    pool_mlps: Vec<Option<Mlp>>,
    decoder: Vec<Vec<MessageLayer>>,
    fills: Vec<String>,
}

/// Tape output of [`UNetModel::encode`].
#[derive(Debug, Clone)]
pub struct Encoded {
    /// State on the coarsest level after the bottleneck layers.
    pub bottom: LayerState,
    /// Pre-pool state of every level, finest first.
    pub skips: Vec<LayerState>,
    /// Post-reduction state of every pooled level, before its own layers.
    pub reduced: Vec<LayerState>,
}

impl UNetModel {
    pub fn new<R: Rng + ?Sized>(config: UNetConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let rbf = c.radial_basis()?;
        let (f, v) = (c.feature_width, c.vector_channels);
        let ends = Ends::new(store, rng, c)?;
        let mut encoder = Vec::new();
        let mut pool_mlps = Vec::new();
        let mut decoder = Vec::new();
        let mut fills = Vec::new();
        for level in 0..c.levels {
            let layers = (0..c.layers_per_level)
                .map(|i| MessageLayer::new(c.layer_kind, store, rng, &format!("enc{level}.{i}"), c.dims(f, v), &rbf))
                .collect::<Result<Vec<_>>>()?;
            encoder.push(layers);
            pool_mlps.push(match c.pool_kind {
                PoolKind::Point => Some(Mlp::two_layer(store, rng, &format!("pool{level}"), f, c.hidden_width, f)?),
                PoolKind::Sparse => None,
            });
            let layers = (0..c.decoder_layers())
                .map(|i| {
                    let dims = if i == 0 { c.dims(2 * f, 2 * v) } else { c.dims(f, v) };
                    MessageLayer::new(c.layer_kind, store, rng, &format!("dec{level}.{i}"), dims, &rbf)
                })
                .collect::<Result<Vec<_>>>()?;
            decoder.push(layers);
            let fill = format!("unpool{level}.fill");
            store.insert(fill.clone(), Tensor::zeros(1, f))?;
            fills.push(fill);
        }
        let bottleneck = (0..c.layers_per_level)
            .map(|i| MessageLayer::new(c.layer_kind, store, rng, &format!("bottom.{i}"), c.dims(f, v), &rbf))
            .collect::<Result<Vec<_>>>()?;
        Ok(UNetModel { config, ends, encoder, bottleneck, pool_mlps, decoder, fills })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    fn check_hierarchy(&self, h: &Hierarchy) -> Result<()> {
        if h.num_levels() != self.config.levels {
            return Err(GeoError::DimensionMismatch { expected: self.config.levels, got: h.num_levels() });
        }
        Ok(())
    }

    /// Differentiable reduction `Cᵀ S` (through the level MLP for point
    /// pooling) and `Cᵀ V`.
    pub fn reduce(&self, level: usize, tape: &mut Tape, b: &Binding, p: &PoolLevel, st: LayerState) -> Result<LayerState> {
        let s = tape.gather_rows(st.scalars, p.pair_node.clone())?;
        let mut s = tape.segment_sum(s, p.pair_cluster.clone(), p.coarse_nodes)?;
        if let Some(mlp) = &self.pool_mlps[level] {
            s = mlp.forward(tape, b, s)?;
        }
        let v = tape.gather_rows(st.vectors, p.pair_node_rows.clone())?;
        let v = tape.segment_sum(v, p.pair_cluster_rows.clone(), p.coarse_nodes * p.dim)?;
        Ok(LayerState { scalars: s, vectors: v })
    }

    /// Differentiable unpooling: centers carry the coarse state, other nodes
    /// the level's fill row and zero vectors; then skip concatenation.
    pub fn unpool(
        &self,
        level: usize,
        tape: &mut Tape,
        b: &Binding,
        p: &PoolLevel,
        coarse: LayerState,
        skip: LayerState,
    ) -> Result<LayerState> {
        let fill = b.get(&self.fills[level]);
        let src = tape.concat(coarse.scalars, fill, 0)?;
        let s = tape.gather_rows(src, p.unpool_rows.clone())?;
        let s = tape.concat(s, skip.scalars, 1)?;
        let v = coarse.vector_channels(tape);
        let zeros = tape.leaf(Tensor::zeros(p.dim, v));
        let src = tape.concat(coarse.vectors, zeros, 0)?;
        let vv = tape.gather_rows(src, p.unpool_vector_rows.clone())?;
        let vv = tape.concat(vv, skip.vectors, 1)?;
        Ok(LayerState { scalars: s, vectors: vv })
    }

    /// Embedding, then per level: message passing, cache, pool. The
    /// coarsest level gets its own bottleneck layers.
    pub fn encode(&self, tape: &mut Tape, b: &Binding, h: &Hierarchy, input: LayerState) -> Result<Encoded> {
        self.check_hierarchy(h)?;
        check_input(tape, h, input, &self.config)?;
        let mut st = self.ends.embed(tape, b, input)?;
        let mut skips = Vec::new();
        let mut reduced = Vec::new();
        for level in 0..self.config.levels {
            st = run_layers(&self.encoder[level], tape, b, h.context(level), st)?;
            skips.push(st);
            st = self.reduce(level, tape, b, h.pool(level), st)?;
            reduced.push(st);
        }
        let bottom = run_layers(&self.bottleneck, tape, b, h.context(self.config.levels), st)?;
        Ok(Encoded { bottom, skips, reduced })
    }

    /// Unpool with skip concatenation and decoder layers, coarsest first.
    pub fn decode(&self, tape: &mut Tape, b: &Binding, h: &Hierarchy, enc: &Encoded) -> Result<LayerState> {
        self.check_hierarchy(h)?;
        if enc.skips.len() != self.config.levels {
            return Err(GeoError::DimensionMismatch { expected: self.config.levels, got: enc.skips.len() });
        }
        let mut st = enc.bottom;
        for level in (0..self.config.levels).rev() {
            st = self.unpool(level, tape, b, h.pool(level), st, enc.skips[level])?;
            st = run_layers(&self.decoder[level], tape, b, h.context(level), st)?;
        }
        Ok(st)
    }

    /// Concrete encode: the bottom graph with its features and one
    /// [`PoolResult`] per level (pre-pool features cached).
    pub fn encode_values(&self, g: &GeometricGraph, params: &ParamStore) -> Result<(GeometricGraph, Vec<PoolResult>)> {
        let h = self.hierarchy(g)?;
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let input = LayerState::from_graph(&mut tape, g);
        let enc = self.encode(&mut tape, &b, &h, input)?;
        let d = g.dim();
        let with_state = |level: usize, st: LayerState| -> Result<GeometricGraph> {
            let (s, v) = st.values(&tape, d);
            let base = h.level_graph(level);
            GeometricGraph::from_parts(d, base.coords().to_vec(), base.edges(), s.cols(), s.into_values(), v.len() / (base.num_nodes() * d).max(1), v)
        };
        let mut caches = Vec::new();
        for level in 0..self.config.levels {
            let fine = with_state(level, enc.skips[level])?;
            let (cs, cv) = enc.skips[level].values(&tape, d);
            caches.push(PoolResult {
                pooled: with_state(level + 1, enc.reduced[level])?,
                assignment: h.pool(level).assignment().clone(),
                cached_scalars: cs,
                cached_vectors: cv,
                original_coords: fine.coords().to_vec(),
                original_edges: fine.edges().to_vec(),
            });
        }
        Ok((with_state(self.config.levels, enc.bottom)?, caches))
    }

    /// Concrete decode from [`Self::encode_values`] output; returns the
    /// final state on the original nodes.
    pub fn decode_values(
        &self,
        bottom: &GeometricGraph,
        caches: &[PoolResult],
        params: &ParamStore,
    ) -> Result<(Tensor, Vec<f64>)> {
        if caches.len() != self.config.levels {
            return Err(GeoError::DimensionMismatch { expected: self.config.levels, got: caches.len() });
        }
        let d = bottom.dim();
        let first = &caches[0];
        let n0 = first.assignment.num_nodes();
        let g0 = GeometricGraph::from_parts(d, first.original_coords.clone(), &first.original_edges, 0, Vec::new(), 0, Vec::new())?;
        let mut h = Hierarchy::flat(&g0);
        for (level, cache) in caches.iter().enumerate() {
            if level > 0 && caches[level - 1].pooled.coords() != cache.original_coords.as_slice() {
                return Err(invalid(format!("cache {level} does not continue cache {}", level - 1)));
            }
            h.push_level_with_edges(cache.assignment.clone(), cache.pooled.edges())?;
        }
        if h.level_graph(self.config.levels).coords() != bottom.coords() {
            return Err(invalid("bottom graph does not match the last cache"));
        }
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let mut skips = Vec::new();
        for cache in caches {
            let n = cache.assignment.num_nodes();
            let v = cache.cached_vectors.len() / (n * d).max(1);
            skips.push(LayerState {
                scalars: tape.leaf(cache.cached_scalars.clone()),
                vectors: tape.leaf(vectors_to_tape(&cache.cached_vectors, n, v, d)),
            });
        }
        let bottom_state = LayerState::from_graph(&mut tape, bottom);
        let enc = Encoded { bottom: bottom_state, skips, reduced: Vec::new() };
        let out = self.decode(&mut tape, &b, &h, &enc)?;
        debug_assert_eq!(tape.shape(out.scalars)[0], n0);
        let (s, v) = (tape.value(out.scalars).clone(), vectors_from_tape(tape.value(out.vectors), d));
        Ok((s, v))
    }
}

impl GraphClassifier for UNetModel {
    fn hierarchy_depth(&self) -> usize {
        self.config.levels
    }

    fn hierarchy(&self, g: &GeometricGraph) -> Result<Hierarchy> {
        let c = &self.config;
        Hierarchy::build(g, c.levels, c.pool_kind, c.fps_ratio, c.knn_k)
    }

    fn logits(&self, tape: &mut Tape, b: &Binding, h: &Hierarchy, input: LayerState) -> Result<Var> {
        let enc = self.encode(tape, b, h, input)?;
        let out = self.decode(tape, b, h, &enc)?;
        self.ends.classify(tape, b, h.context(0), out)
    }
}

/// Embedding, `num_layers` message passes on the input graph, readout.
#[derive(Debug, Clone)]
pub struct FlatModel {
    config: UNetConfig,
    ends: Ends,
    layers: Vec<MessageLayer>,
}

impl FlatModel {
    /// Uses the width, kind and readout fields of `config`; pooling fields
    /// are ignored.
    pub fn new<R: Rng + ?Sized>(
        config: UNetConfig,
        num_layers: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate_widths()?;
        if num_layers == 0 {
            return Err(invalid("a flat model needs at least one layer"));
        }
        let rbf = config.radial_basis()?;
        let ends = Ends::new(store, rng, &config)?;
        let (f, v) = (config.feature_width, config.vector_channels);
        let layers = (0..num_layers)
            .map(|i| MessageLayer::new(config.layer_kind, store, rng, &format!("layer{i}"), config.dims(f, v), &rbf))
            .collect::<Result<Vec<_>>>()?;
        Ok(FlatModel { config, ends, layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Readout embedding (before the classifier), one row per graph.
    pub fn embedding(&self, tape: &mut Tape, b: &Binding, ctx: &GraphContext, input: LayerState) -> Result<Var> {
        let st = self.ends.embed(tape, b, input)?;
        let st = run_layers(&self.layers, tape, b, ctx, st)?;
        self.ends.readout.forward(tape, b, ctx, st)
    }

    /// Concrete embedding of a single graph.
    pub fn embed_graph(&self, g: &GeometricGraph, params: &ParamStore) -> Result<Tensor> {
        let ctx = GraphContext::new(g);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let input = LayerState::from_graph(&mut tape, g);
        let e = self.embedding(&mut tape, &b, &ctx, input)?;
        Ok(tape.value(e).clone())
    }
}

impl GraphClassifier for FlatModel {
    fn hierarchy_depth(&self) -> usize {
        0
    }

    fn hierarchy(&self, g: &GeometricGraph) -> Result<Hierarchy> {
        Ok(Hierarchy::flat(g))
    }

    fn logits(&self, tape: &mut Tape, b: &Binding, h: &Hierarchy, input: LayerState) -> Result<Var> {
        check_input(tape, h, input, &self.config)?;
        let ctx = h.context(0);
        let st = self.ends.embed(tape, b, input)?;
        let st = run_layers(&self.layers, tape, b, ctx, st)?;
        self.ends.classify(tape, b, ctx, st)
    }
}
