//! Compares analytic and finite-difference gradients through the whole
//! pipeline on a small model.

use mgfuse::cli::gradcheck_config;
use mgfuse::experiment::{load_data, prepare};
use mgfuse::forecaster::{Model, WindowSet};
use mgfuse::gradcheck::{gradient_check, GradcheckConfig};

fn main() -> mgfuse::Result<()> {
    let cfg = gradcheck_config();
    let prep = prepare(&cfg, load_data(&cfg)?)?;
    let h = cfg.horizons[0];
    let model = Model::new(&prep.graphs, &cfg.train_config(h))?;
    let set = WindowSet::new(&prep.scaled, prep.splits.train.clone(), cfg.window, h)?;
    let batch = set.batch(&[0, 1, 2, 3]);
    let report = gradient_check(
        &model.store,
        |t, b| Ok(model.pipeline(t, b, &batch)?.loss),
        &GradcheckConfig::default(),
        None,
    )?;
    for g in &report.groups {
        println!("{:<32} {:>4} {:.2e}", g.group, g.checked, g.max_rel_error);
    }
    println!("max relative error {:.2e}, passed: {}", report.max_rel_error(), report.passed());
    Ok(())
}
