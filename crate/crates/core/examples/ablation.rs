//! Runs every ablation variant once on a small synthetic dataset.

use mgfuse::experiment::{load_data, prepare, run_horizon, variant_config, Preset, RunConfig, VARIANTS};

fn main() -> mgfuse::Result<()> {
    let mut base = RunConfig::preset(Preset::SyntheticDesk);
    base.set("synth.nodes", "6")?;
    base.set("synth.length", "500")?;
    base.epochs = 2;
    base.horizons = vec![3];
    for v in VARIANTS {
        let cfg = variant_config(&base, v)?;
        let prep = prepare(&cfg, load_data(&cfg)?)?;
        let run = run_horizon(&cfg, &prep, 3)?;
        println!("{v:<22} graphs {} rmse {:.4}", prep.graphs.len(), run.rmse);
    }
    Ok(())
}
