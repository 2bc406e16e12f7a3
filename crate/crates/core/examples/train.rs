//! Trains the fused model on a small synthetic dataset and reports test
//! metrics at the forecast horizon.

use mgfuse::experiment::{load_data, prepare, run_horizon, Preset, RunConfig};

fn main() -> mgfuse::Result<()> {
    let mut cfg = RunConfig::preset(Preset::SyntheticDesk);
    cfg.set("synth.nodes", "8")?;
    cfg.set("synth.length", "600")?;
    cfg.epochs = 3;
    cfg.horizons = vec![6];
    let prep = prepare(&cfg, load_data(&cfg)?)?;
    let run = run_horizon(&cfg, &prep, 6)?;
    for e in &run.outcome.history {
        println!("epoch {:>2} train loss {:.4} val mae {:.4}", e.epoch, e.train_loss, e.val_mae);
    }
    println!("test at step 6: mae {:.4} rmse {:.4}", run.mae, run.rmse);
    Ok(())
}
