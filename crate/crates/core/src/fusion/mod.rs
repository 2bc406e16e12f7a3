//! Trainable multi-graph fusion.
//!
//! The graph set is stacked into a weight tensor `T` of shape `[G, N, N]`.
//! Each node's row of weights is projected to `D` dims (`P_in`), passed
//! through `L` attention blocks, and projected back (`P_out`) to give `T'`.
//! The fused adjacency is the sum of `T'` over the graph axis.
//!
//! A block runs spatial attention (among nodes of one graph) and graph
//! attention (across graphs for one node) on the same input, mixes them with
//! a sigmoid gate and adds the block input back. Both attentions see the
//! multi-graph spatial embedding `E^S[i] + E^MG[g]` alongside the hidden
//! state.

mod attention;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Binding, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graphs::{GraphKind, GraphSet, WeightMatrix};
use crate::nn::{uniform_init, Dense, Rng};

pub use attention::{
    gated_fusion, graph_attention, spatial_attention, AttentionParams, Attended, GateParams,
};

/// How the output projection is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeInit {
    /// `P_out` starts as the pseudo-inverse of `P_in` (biases zero), so that
    /// `P_out(P_in(T)) = T` before training whenever `D >= N`. Falls back to
    /// `Uniform` when `D < N`.
    Inverse,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Model width `D`.
    pub d_model: usize,
    /// Attention heads `M`.
    pub heads: usize,
    /// Per-head width `d`; `M·d` must equal `D`.
    pub head_dim: usize,
    /// Number of attention blocks `L`.
    pub blocks: usize,
    /// Run the attention blocks; when off only the projections remain.
    pub sgatt: bool,
    /// Mask a node's attention to itself in spatial attention.
    pub exclude_self: bool,
    /// Initialise `E^S` from the leading eigenvectors of the distance graph
    /// (when present) instead of uniformly.
    pub spectral_init: bool,
    pub bridge_init: BridgeInit,
    /// Factor applied to the initial value projections of every attention
    /// block, so that the blocks start close to the identity map.
    pub value_init_scale: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 8,
            head_dim: 8,
            blocks: 1,
            sgatt: true,
            exclude_self: false,
            spectral_init: false,
            bridge_init: BridgeInit::Inverse,
            value_init_scale: 0.1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.value_init_scale >= 0.0 && self.value_init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "value_init_scale must be nonnegative, got {}",
                self.value_init_scale
            )));
        }
        attention::check_heads(self.d_model, self.heads, self.head_dim)
    }
}

/// Stacks the graph set into a `[G, N, N]` array, slice `g` holding the
/// `g`-th matrix.
pub fn init_weight_tensor(graphs: &GraphSet) -> Array {
    let n = graphs.n();
    let data: Vec<f64> = graphs
        .matrices()
        .iter()
        .flat_map(|m| m.data().iter().copied())
        .collect();
    Array::new(vec![graphs.len(), n, n], data).expect("graph set shares N")
}

/// Spatial embedding table `E^S` plus the two-layer network producing
/// `E^MG` from one-hot graph codes.
#[derive(Clone, Debug)]
pub struct MgseTable {
    pub spatial: ParamId,
    pub layer1: Dense,
    pub layer2: Dense,
    pub graphs: usize,
}

impl MgseTable {
    pub fn new(store: &mut ParamStore, graphs: usize, n: usize, d_model: usize, rng: &mut Rng) -> Self {
        let spatial = store.add("fusion.mgse.spatial", uniform_init(rng, &[n, d_model], d_model));
        Self {
            spatial,
            layer1: Dense::new(store, "fusion.mgse.graph1", graphs, d_model, true, rng),
            layer2: Dense::new(store, "fusion.mgse.graph2", d_model, d_model, true, rng),
            graphs,
        }
    }
}

/// `E^MG`: `[G, D]`.
pub fn graph_embedding(tape: &mut Tape, bind: &Binding, table: &MgseTable) -> Result<Var> {
    let codes = tape.constant(Array::identity(table.graphs));
    let h = table.layer1.apply(tape, bind, codes)?;
    let h = tape.relu(h);
    table.layer2.apply(tape, bind, h)
}

/// The multi-graph spatial embedding, `[G, N, D]` with entry `(g, i)` equal
/// to `E^S[i] + E^MG[g]`.
pub fn build_mgse(tape: &mut Tape, bind: &Binding, table: &MgseTable) -> Result<Var> {
    let es = bind.var(table.spatial);
    let (n, d) = (tape.shape(es)[0], tape.shape(es)[1]);
    let emg = graph_embedding(tape, bind, table)?;
    let es = tape.reshape(es, &[1, n, d])?;
    let emg = tape.reshape(emg, &[table.graphs, 1, d])?;
    tape.add(es, emg)
}

#[derive(Clone, Debug)]
pub struct Block {
    pub spatial: AttentionParams,
    pub graph: AttentionParams,
    pub gate: GateParams,
}

/// Everything recorded by one block's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    /// `[G·M, N, N]`.
    pub spatial_weights: Var,
    /// `[N·M, G, G]`.
    pub graph_weights: Var,
    /// `[G, N, D]`.
    pub gate: Var,
    pub output: Var,
}

/// Forward pass results.
#[derive(Clone, Debug)]
pub struct FusionTrace {
    /// The trainable tensor as bound on the tape.
    pub tensor: Var,
    /// `T'`, `[G, N, N]`.
    pub updated: Var,
    /// `W*`, `[N, N]`.
    pub fused: Var,
    pub mgse: Option<Var>,
    pub blocks: Vec<BlockTrace>,
}

/// Weight tensor, embeddings, projections and attention blocks.
#[derive(Clone, Debug)]
pub struct FusionStack {
    config: FusionConfig,
    kinds: Vec<GraphKind>,
    n: usize,
    pub tensor: ParamId,
    pub mgse: MgseTable,
    pub input: Dense,
    pub output: Dense,
    pub blocks: Vec<Block>,
}

impl FusionStack {
    /// Registers all fusion parameters in `store`.
    pub fn new(store: &mut ParamStore, graphs: &GraphSet, config: &FusionConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (g, n, d) = (graphs.len(), graphs.n(), config.d_model);
        let tensor = store.add("fusion.tensor", init_weight_tensor(graphs));
        let mgse = MgseTable::new(store, g, n, d, rng);
        let input = Dense::new(store, "fusion.input", n, d, true, rng);
        let output = Dense::new(store, "fusion.output", d, n, true, rng);
        let mut blocks = Vec::with_capacity(config.blocks);
        for l in 0..config.blocks {
            let name = format!("fusion.block{l}");
            blocks.push(Block {
                spatial: AttentionParams::new(store, &format!("{name}.spatial"), d, config.heads, config.head_dim, rng)?,
                graph: AttentionParams::new(store, &format!("{name}.graph"), d, config.heads, config.head_dim, rng)?,
                gate: GateParams::new(store, &format!("{name}.gate"), d, rng),
            });
        }
        let stack = Self {
            config: config.clone(),
            kinds: graphs.kinds(),
            n,
            tensor,
            mgse,
            input,
            output,
            blocks,
        };
        if config.spectral_init {
            if let Some(w) = graphs.get(GraphKind::Distance) {
                store.get_mut(stack.mgse.spatial).value = spectral_embedding(w, d);
            }
        }
        for b in &stack.blocks {
            for v in [&b.spatial.value, &b.graph.value] {
                for id in [Some(v.weight), v.bias].into_iter().flatten() {
                    let p = store.get_mut(id);
                    p.value = p.value.map(|x| x * config.value_init_scale);
                }
            }
        }
        if config.bridge_init == BridgeInit::Inverse && d >= n {
            stack.invert_bridge(store)?;
        }
        Ok(stack)
    }

    /// Sets `P_out` to the pseudo-inverse of `P_in` and zeroes both biases.
    pub fn invert_bridge(&self, store: &mut ParamStore) -> Result<()> {
        let w = &store.get(self.input.weight).value;
        let (n, d) = (w.shape()[0], w.shape()[1]);
        let m = DMatrix::from_row_slice(n, d, w.data());
        let pinv = m
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("pseudo-inverse of the input projection: {e}")))?;
        let mut data = Vec::with_capacity(d * n);
        for r in 0..d {
            for c in 0..n {
                data.push(pinv[(r, c)]);
            }
        }
        store.get_mut(self.output.weight).value = Array::new(vec![d, n], data)?;
        for b in [self.input.bias, self.output.bias].into_iter().flatten() {
            let len = store.get(b).value.len();
            store.get_mut(b).value = Array::zeros(vec![len]);
        }
        Ok(())
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn kinds(&self) -> &[GraphKind] {
        &self.kinds
    }

    pub fn graph_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sgatt(&self) -> bool {
        self.config.sgatt
    }

    /// Switches the attention blocks on or off; parameters are untouched.
    pub fn set_sgatt(&mut self, enabled: bool) {
        self.config.sgatt = enabled;
    }

    /// `T' = P_out(blocks(P_in(T)))` and `W* = sum_g T'[g]`.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding) -> Result<FusionTrace> {
        let tensor = bind.var(self.tensor);
        let mut h = self.input.apply(tape, bind, tensor)?;
        let mut traces = Vec::new();
        let mut mgse = None;
        if self.config.sgatt && !self.blocks.is_empty() {
            let e = build_mgse(tape, bind, &self.mgse)?;
            mgse = Some(e);
            for block in &self.blocks {
                let s = spatial_attention(tape, bind, h, e, &block.spatial, self.config.exclude_self)?;
                let g = graph_attention(tape, bind, h, e, &block.graph)?;
                let (mixed, z) = gated_fusion(tape, bind, s.output, g.output, &block.gate)?;
                h = tape.add(mixed, h)?;
                traces.push(BlockTrace {
                    spatial_weights: s.weights,
                    graph_weights: g.weights,
                    gate: z,
                    output: h,
                });
            }
        }
        let updated = self.output.apply(tape, bind, h)?;
        let fused = fuse(tape, updated)?;
        Ok(FusionTrace {
            tensor,
            updated,
            fused,
            mgse,
            blocks: traces,
        })
    }

    /// Runs the forward pass on frozen parameters and returns `W*`.
    pub fn fused_matrix(&self, store: &ParamStore) -> Result<WeightMatrix> {
        let mut tape = Tape::new();
        let bind = store.bind_frozen(&mut tape);
        let trace = self.forward(&mut tape, &bind)?;
        WeightMatrix::new(GraphKind::Fused, self.n, tape.value(trace.fused).data().to_vec())
    }
}

/// Sums `[G, N, N]` over the graph axis.
pub fn fuse(tape: &mut Tape, updated: Var) -> Result<Var> {
    tape.sum_axis(updated, 0)
}

/// Leading `d` eigenvectors (by eigenvalue, descending) of a symmetric
/// matrix as the columns of an `[N, d]` array; columns past `N` are zero.
pub fn spectral_embedding(w: &WeightMatrix, d: usize) -> Array {
    let n = w.n();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, w.data()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = Array::zeros(vec![n, d]);
    for (c, &k) in order.iter().take(d).enumerate() {
        for i in 0..n {
            out.set(&[i, c], eig.eigenvectors[(i, k)]);
        }
    }
    out
}
