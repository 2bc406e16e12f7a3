//! One forward pass of the fusion stack: attention weights, gates and the
//! fused adjacency.

use mgfuse::autodiff::ParamStore;
use mgfuse::autodiff::Tape;
use mgfuse::data::{generate_synthetic, SyntheticSpec};
use mgfuse::fusion::{FusionConfig, FusionStack};
use mgfuse::graphs::{assemble_graph_set, GraphMask, KernelConfig};
use mgfuse::nn::rng;

fn main() -> mgfuse::Result<()> {
    let spec = SyntheticSpec {
        nodes: 6,
        length: 300,
        ..SyntheticSpec::default()
    };
    let (table, _) = generate_synthetic(&spec)?;
    let graphs = assemble_graph_set(&table, &KernelConfig::default(), GraphMask::all())?;
    let cfg = FusionConfig {
        d_model: 16,
        heads: 4,
        head_dim: 4,
        ..FusionConfig::default()
    };
    let mut store = ParamStore::new();
    let stack = FusionStack::new(&mut store, &graphs, &cfg, &mut rng(0))?;
    let mut tape = Tape::new();
    let bind = store.bind_frozen(&mut tape);
    let trace = stack.forward(&mut tape, &bind)?;
    let block = &trace.blocks[0];
    println!("spatial weights {:?}", tape.shape(block.spatial_weights));
    println!("graph weights   {:?}", tape.shape(block.graph_weights));
    let gate = tape.value(block.gate).data();
    let (lo, hi) = gate.iter().fold((1.0f64, 0.0f64), |(l, h), &z| (l.min(z), h.max(z)));
    println!("gate range      ({lo:.3}, {hi:.3})");
    let w = stack.fused_matrix(&store)?;
    println!("fused row 0     {:?}", w.row(0).iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    Ok(())
}
