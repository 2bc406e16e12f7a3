//! End-to-end runs: data preparation, per-horizon training, ablation
//! variants and the files they produce.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::data::{load_dataset, synthesize, DatasetBundle, Scaler};
use crate::error::{Error, Result};
use crate::forecaster::{split_ranges, train, EpochRecord, Metrics, Splits, TrainOutcome, WindowSet};
use crate::graphs::{assemble_graph_set, write_matrix, GraphKind, GraphMask, GraphSet, KernelConfig};

pub use config::{parse_switch, DataSource, HeuristicSetting, Preset, RunConfig, MAX_HORIZON, MIN_HORIZON};

/// Ablation variants in reporting order.
pub const VARIANTS: [&str; 6] = [
    "full",
    "no-sgatt",
    "no-heuristic",
    "kl-heuristic",
    "no-functionality",
    "single-distance-graph",
];

pub const METRICS_HEADER: &str = "run_id,model_variant,horizon,mae,rmse,epoch_best,seed";

/// `base` with one ablation applied.
pub fn variant_config(base: &RunConfig, variant: &str) -> Result<RunConfig> {
    let mut c = base.clone();
    match variant {
        "full" => {}
        "no-sgatt" => c.sgatt = false,
        "no-heuristic" => c.heuristic = HeuristicSetting::Off,
        "kl-heuristic" => c.heuristic = HeuristicSetting::Kl,
        "no-functionality" => c.functionality = false,
        "single-distance-graph" => c.graphs = GraphMask::only(&[GraphKind::Distance]),
        other => return Err(Error::Config(format!("unknown variant {other:?}"))),
    }
    Ok(c)
}

pub fn load_data(cfg: &RunConfig) -> Result<DatasetBundle> {
    match &cfg.data {
        DataSource::None => Err(Error::Config("no dataset configured".into())),
        DataSource::Files(f) => load_dataset(f),
        DataSource::Synthetic { .. } => synthesize(&cfg.synthetic_spec().expect("synthetic")),
    }
}

/// A dataset scaled, split and turned into graphs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub bundle: DatasetBundle,
    pub splits: Splits,
    pub scaler: Scaler,
    /// Scaled time-major `[P, N]` series.
    pub scaled: Array,
    pub graphs: GraphSet,
}

/// Graphs are built from raw training-range values only; the scaler is
/// fitted on the same range.
pub fn prepare(cfg: &RunConfig, bundle: DatasetBundle) -> Result<Prepared> {
    let raw = bundle.series_matrix();
    let longest = cfg.horizons.iter().copied().max().unwrap_or(MAX_HORIZON);
    let splits = split_ranges(raw.shape()[0], cfg.split, cfg.window, longest)?;
    let graphs = build_graphs(cfg, &bundle, splits.train.end)?;
    let scaler = Scaler::fit(&raw, splits.train.clone())?;
    let scaled = scaler.scale(&raw);
    Ok(Prepared {
        bundle,
        splits,
        scaler,
        scaled,
        graphs,
    })
}

/// Builds the configured graphs from the first `train_len` steps.
pub fn build_graphs(cfg: &RunConfig, bundle: &DatasetBundle, train_len: usize) -> Result<GraphSet> {
    let train_nodes = bundle.nodes.with_series_prefix(train_len)?;
    assemble_graph_set(&train_nodes, &cfg.kernel_config(), cfg.effective_mask())
}

/// One trained model and its test metrics.
#[derive(Clone, Debug)]
pub struct HorizonRun {
    pub horizon: usize,
    pub outcome: TrainOutcome,
    /// Test metrics over all `horizon` output steps.
    pub test: Metrics,
    /// Test MAE and RMSE at step `horizon`.
    pub mae: f64,
    pub rmse: f64,
}

pub fn run_horizon(cfg: &RunConfig, prep: &Prepared, horizon: usize) -> Result<HorizonRun> {
    let tc = cfg.train_config(horizon);
    let outcome = train(&prep.scaled, &prep.splits, &prep.graphs, &tc)?;
    let test_set = WindowSet::new(&prep.scaled, prep.splits.test.clone(), cfg.window, horizon)?;
    let test = outcome.model.evaluate(&test_set)?;
    let at = test
        .at_step(horizon)
        .ok_or_else(|| Error::Numerical(format!("no metrics at step {horizon}")))?.clone();
    Ok(HorizonRun {
        horizon,
        outcome,
        test,
        mae: at.mae,
        rmse: at.rmse,
    })
}

/// One line of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub model_variant: String,
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    pub epoch_best: usize,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(cfg: &RunConfig, variant: &str, run: &HorizonRun) -> Self {
        Self {
            run_id: cfg.run_id(),
            model_variant: variant.into(),
            horizon: run.horizon,
            mae: run.mae,
            rmse: run.rmse,
            epoch_best: run.outcome.best_epoch,
            seed: cfg.seed,
        }
    }
}

pub fn render_metrics(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{},{}\n",
            r.run_id, r.model_variant, r.horizon, r.mae, r.rmse, r.epoch_best, r.seed
        ));
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec.map_err(|e| Error::Parse {
            file: "metrics".into(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Metadata written next to an exported fused matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedSidecar {
    pub graphs: usize,
    pub kinds: Vec<GraphKind>,
    pub n: usize,
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub blocks: usize,
    pub seed: u64,
    pub mask: String,
    pub sgatt: bool,
    pub heuristic: HeuristicSetting,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Best-validation parameters with their training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_id: String,
    pub variant: String,
    pub horizon: usize,
    pub best_epoch: usize,
    pub initial_train_mae: f64,
    pub history: Vec<EpochRecord>,
    pub config: RunConfig,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    pub fn new(cfg: &RunConfig, variant: &str, run: &HorizonRun) -> Self {
        let o = &run.outcome;
        Self {
            run_id: cfg.run_id(),
            variant: variant.into(),
            horizon: run.horizon,
            best_epoch: o.best_epoch,
            initial_train_mae: o.initial_train_mae,
            history: o.history.clone(),
            config: cfg.clone(),
            params: o
                .model
                .store
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }
}

/// Paths written for one trained horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonFiles {
    pub fused: PathBuf,
    pub sidecar: PathBuf,
    pub checkpoint: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Writes the fused matrix, its sidecar and the checkpoint for one run.
pub fn write_horizon_files(dir: &Path, cfg: &RunConfig, variant: &str, prep: &Prepared, run: &HorizonRun) -> Result<HorizonFiles> {
    let stem = format!("{variant}_h{}", run.horizon);
    let files = HorizonFiles {
        fused: dir.join(format!("fused_{stem}.txt")),
        sidecar: dir.join(format!("fused_{stem}.json")),
        checkpoint: dir.join(format!("checkpoint_{stem}.json")),
    };
    let model = &run.outcome.model;
    write_matrix(&files.fused, &model.fused_matrix()?, prep.bundle.nodes.ids())?;
    write_json(
        &files.sidecar,
        &FusedSidecar {
            graphs: prep.graphs.len(),
            kinds: prep.graphs.kinds(),
            n: prep.graphs.n(),
            d_model: cfg.d_model,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            blocks: cfg.blocks,
            seed: cfg.seed,
            mask: cfg.effective_mask().to_string(),
            sgatt: cfg.sgatt,
            heuristic: cfg.heuristic,
            horizon: run.horizon,
        },
    )?;
    write_json(&files.checkpoint, &Checkpoint::new(cfg, variant, run))?;
    Ok(files)
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_text(path, &render_metrics(rows))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// File name of an exported input graph.
pub fn graph_file_name(kind: GraphKind) -> String {
    format!("W_{}.txt", kind.name())
}

/// One-line summary of the kernel settings.
pub fn describe_kernel(k: &KernelConfig) -> String {
    let bw = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
    format!(
        "sigma_d2={} epsilon={} sigma_h2={} bins={} clamp_negative={}",
        bw(k.sigma_d2),
        k.epsilon,
        bw(k.sigma_h2),
        k.bins,
        k.clamp_negative
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_modify_one_setting() {
        let base = RunConfig::preset(Preset::SyntheticDesk);
        let single = variant_config(&base, "single-distance-graph").unwrap();
        assert_eq!(single.effective_mask().count(), 1);
        assert!(!variant_config(&base, "no-sgatt").unwrap().sgatt);
        assert_eq!(variant_config(&base, "no-heuristic").unwrap().effective_mask().count(), 4);
        assert_eq!(variant_config(&base, "full").unwrap(), base);
        assert!(variant_config(&base, "bogus").is_err());
    }

    #[test]
    fn metrics_round_trip() {
        let rows = vec![MetricRow {
            run_id: "r".into(),
            model_variant: "full".into(),
            horizon: 24,
            mae: 0.1 + 0.2,
            rmse: 1.0 / 3.0,
            epoch_best: 7,
            seed: 2,
        }];
        let text = render_metrics(&rows);
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(parse_metrics(&text).unwrap(), rows);
    }
}
