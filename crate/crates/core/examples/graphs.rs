//! Builds the five graphs for a generated dataset and prints a summary.

use mgfuse::data::{generate_synthetic, SyntheticSpec};
use mgfuse::graphs::{assemble_graph_set, GraphMask, KernelConfig};

fn main() -> mgfuse::Result<()> {
    let spec = SyntheticSpec {
        nodes: 8,
        length: 400,
        ..SyntheticSpec::default()
    };
    let (table, _) = generate_synthetic(&spec)?;
    let set = assemble_graph_set(&table, &KernelConfig::default(), GraphMask::all())?;
    for m in set.matrices() {
        let (lo, hi) = m.value_range();
        println!("{:<14} density {:.3} range [{lo:.3}, {hi:.3}]", m.kind().name(), m.density());
    }
    let w = set.matrices()[1].row(0);
    println!("neighbor row of {}: {w:?}", table.ids()[0]);
    Ok(())
}
