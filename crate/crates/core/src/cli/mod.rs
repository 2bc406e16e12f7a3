//! The `mgfuse` command line.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 numerical
//! failure, 3 I/O or input-data failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::{save_dataset, synthesize, SyntheticSpec};
use crate::error::{Error, Result};
use crate::experiment::{
    build_graphs, describe_kernel, ensure_dir, graph_file_name, load_data, prepare, run_horizon, variant_config,
    write_horizon_files, write_json, write_metrics, DataSource, MetricRow, Preset, Prepared, RunConfig, VARIANTS,
};
use crate::forecaster::{train_len, Model, WindowSet};
use crate::gradcheck::{gradient_check, Fault, GradcheckConfig};
use crate::graphs::{write_matrix, GraphKind, GraphMask};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const GRADCHECK_MAX_NODES: usize = 8;
pub const GRADCHECK_MAX_D: usize = 16;

#[derive(Debug, Parser)]
#[command(name = "mgfuse", version, about = "Multi-graph construction and attention-based graph fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the input graphs and write one matrix file per graph.
    BuildGraphs(Common),
    /// Train one model per horizon; write metrics, fused matrices and checkpoints.
    Train(Common),
    /// Train every ablation variant and write a comparison table.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset: parking-style, airquality-style or synthetic-desk.
    #[arg(long)]
    pub preset: Option<String>,
    /// Directory holding nodes.csv, functions.csv and series.csv.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `out`; gradcheck writes nothing without it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated prediction horizons.
    #[arg(long)]
    pub horizons: Option<String>,
    /// Graph mask, e.g. D,N,T.
    #[arg(long)]
    pub graphs: Option<String>,
    /// on or off.
    #[arg(long)]
    pub sgatt: Option<String>,
    /// exp, kl or off.
    #[arg(long = "heuristic-mode")]
    pub heuristic_mode: Option<String>,
    /// Extra key=value settings applied after the file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated subset of the variant grid.
    #[arg(long)]
    pub variants: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Test hook: PARAM:INDEX:DELTA added to one analytic gradient.
    #[arg(long = "inject-fault", hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "synthetic")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub functions: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Five mixing weights D,N,F,H,T.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Extra synth.* settings without the prefix, e.g. event_rate=0.2.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::BuildGraphs(c) => cmd_build_graphs(&c),
        Command::Train(c) => cmd_train(&c),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Gradcheck(g) => cmd_gradcheck(&g),
        Command::Synth(s) => cmd_synth(&s),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numerical(_) | Error::Shape { .. } | Error::InvalidArgument { .. } => EXIT_NUMERICAL,
        Error::Io { .. } | Error::Parse { .. } | Error::NodeTable(_) | Error::Graph { .. } | Error::Json(_) => EXIT_IO,
    }
}

/// Errors raised while reading the configuration are usage errors whatever
/// their kind, except an unreadable file.
fn as_config_error(e: Error) -> Error {
    match e {
        e @ (Error::Config(_) | Error::Io { .. }) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Preset flag, then the file (whose own `preset` key wins), then flags.
pub fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.preset {
        Some(p) => RunConfig::preset(p.parse().map_err(as_config_error)?),
        None => RunConfig::default(),
    };
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text, &path.display().to_string())
            .map_err(as_config_error)?;
    }
    apply_overrides(&mut cfg, c).map_err(as_config_error)?;
    Ok(cfg)
}

/// Model label used in metrics rows: `full` or the applied ablations.
pub fn variant_label(cfg: &RunConfig) -> String {
    let mut parts = Vec::new();
    if !cfg.sgatt {
        parts.push("no-sgatt".to_string());
    }
    if cfg.graphs == GraphMask::only(&[GraphKind::Distance]) {
        parts.push("single-distance-graph".into());
    } else {
        match cfg.heuristic {
            crate::experiment::HeuristicSetting::Off => parts.push("no-heuristic".into()),
            crate::experiment::HeuristicSetting::Kl => parts.push("kl-heuristic".into()),
            crate::experiment::HeuristicSetting::Exp => {}
        }
        if !cfg.functionality {
            parts.push("no-functionality".into());
        }
        if cfg.graphs != GraphMask::all() {
            parts.push(format!("graphs-{}", cfg.graphs.to_string().replace(',', "")));
        }
    }
    if parts.is_empty() {
        "full".into()
    } else {
        parts.join("+")
    }
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn prepare_checked(cfg: &RunConfig) -> Result<Prepared> {
    let bundle = load_data(cfg)?;
    prepare(cfg, bundle).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("dataset does not fit the configuration: {m}")),
        other => other,
    })
}

fn cmd_build_graphs(c: &Common) -> Result<i32> {
    let cfg = resolve_config(c)?;
    let bundle = load_data(&cfg)?;
    let len = bundle.nodes.series_len();
    let graphs = build_graphs(&cfg, &bundle, train_len(len, cfg.split).max(2.min(len)))?;
    let out = c.out_dir();
    ensure_dir(&out)?;
    println!("{} graphs over {} nodes ({})", graphs.len(), graphs.n(), describe_kernel(&cfg.kernel_config()));
    println!("{:<14} {:>8} {:>12} {:>12}", "graph", "density", "min", "max");
    for m in graphs.matrices() {
        let path = out.join(graph_file_name(m.kind()));
        write_matrix(&path, m, bundle.nodes.ids())?;
        let (lo, hi) = m.value_range();
        println!("{:<14} {:>8.4} {:>12.6} {:>12.6}", m.kind().name(), m.density(), lo, hi);
    }
    Ok(EXIT_OK)
}

fn cmd_train(c: &Common) -> Result<i32> {
    let cfg = resolve_config(c)?;
    let prep = prepare_checked(&cfg)?;
    let out = c.out_dir();
    ensure_dir(&out)?;
    let variant = variant_label(&cfg);
    let mut rows = Vec::new();
    for &h in &cfg.horizons {
        let run = run_horizon(&cfg, &prep, h)?;
        write_horizon_files(&out, &cfg, &variant, &prep, &run)?;
        println!(
            "horizon {h:>2}: mae {:.6} rmse {:.6} (best epoch {})",
            run.mae, run.rmse, run.outcome.best_epoch
        );
        rows.push(MetricRow::new(&cfg, &variant, &run));
    }
    write_metrics(&out.join("metrics.csv"), &rows)?;
    Ok(EXIT_OK)
}

fn cmd_ablate(a: &AblateArgs) -> Result<i32> {
    let base = resolve_config(&a.common)?;
    let variants: Vec<String> = match &a.variants {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => VARIANTS.iter().map(|s| s.to_string()).collect(),
    };
    let configs = variants
        .iter()
        .map(|v| {
            let c = variant_config(&base, v)?;
            c.validate()?;
            Ok((v.clone(), c))
        })
        .collect::<Result<Vec<_>>>()?;
    let bundle = load_data(&base)?;
    prepare(&base, bundle.clone()).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("dataset does not fit the configuration: {m}")),
        other => other,
    })?;
    let out = a.common.out_dir();
    ensure_dir(&out)?;

    let mut rows = Vec::new();
    let mut failures: Vec<(String, Error)> = Vec::new();
    for (name, cfg) in &configs {
        let outcome = (|| -> Result<Vec<MetricRow>> {
            let prep = prepare(cfg, bundle.clone())?;
            let dir = out.join(name);
            ensure_dir(&dir)?;
            let mut out = Vec::new();
            for &h in &cfg.horizons {
                let run = run_horizon(cfg, &prep, h)?;
                write_horizon_files(&dir, cfg, name, &prep, &run)?;
                out.push(MetricRow::new(cfg, name, &run));
            }
            Ok(out)
        })();
        match outcome {
            Ok(r) => {
                for row in &r {
                    println!("{name:<22} h={:>2} mae {:.6} rmse {:.6}", row.horizon, row.mae, row.rmse);
                }
                rows.extend(r);
            }
            Err(e) => {
                eprintln!("variant {name} failed: {e}");
                failures.push((name.clone(), e));
            }
        }
    }
    write_metrics(&out.join("ablation.csv"), &rows)?;
    print!("{}", comparison_table(&rows, &base.horizons));
    if failures.is_empty() {
        Ok(EXIT_OK)
    } else {
        let names: Vec<&str> = failures.iter().map(|(n, _)| n.as_str()).collect();
        eprintln!("{} of {} variants failed: {}", failures.len(), configs.len(), names.join(", "));
        Ok(failures.iter().map(|(_, e)| exit_code(e)).max().unwrap_or(EXIT_NUMERICAL))
    }
}

/// Variants as rows, `RMSE@h` then `MAE@h` columns.
pub fn comparison_table(rows: &[MetricRow], horizons: &[usize]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.model_variant.as_str()) {
            names.push(&r.model_variant);
        }
    }
    let mut out = format!("{:<22}", "variant");
    for h in horizons {
        write!(out, " {:>10}", format!("RMSE@{h}")).expect("string");
    }
    for h in horizons {
        write!(out, " {:>10}", format!("MAE@{h}")).expect("string");
    }
    out.push('\n');
    for name in names {
        write!(out, "{name:<22}").expect("string");
        let cell = |h: usize, f: fn(&MetricRow) -> f64| {
            rows.iter()
                .find(|r| r.model_variant == name && r.horizon == h)
                .map_or("-".to_string(), |r| format!("{:.5}", f(r)))
        };
        for &h in horizons {
            write!(out, " {:>10}", cell(h, |r| r.rmse)).expect("string");
        }
        for &h in horizons {
            write!(out, " {:>10}", cell(h, |r| r.mae)).expect("string");
        }
        out.push('\n');
    }
    out
}

/// Small configuration used by `gradcheck` when no preset or file is given.
pub fn gradcheck_config() -> RunConfig {
    let mut c = RunConfig::preset(Preset::SyntheticDesk);
    c.preset = "gradcheck".into();
    c.data = DataSource::Synthetic {
        spec: SyntheticSpec {
            nodes: 6,
            length: 200,
            ..SyntheticSpec::default()
        },
        seed: None,
    };
    c.d_model = 16;
    c.heads = 4;
    c.head_dim = 4;
    c.blocks = 2;
    c.channels = 4;
    c.window = 8;
    c.horizons = vec![3];
    c.batch_size = 4;
    c
}

fn parse_fault(s: &str) -> Result<Fault> {
    let mut parts = s.rsplitn(3, ':');
    let delta = parts.next().and_then(|v| v.parse().ok());
    let index = parts.next().and_then(|v| v.parse().ok());
    let param = parts.next();
    match (param, index, delta) {
        (Some(p), Some(i), Some(d)) => Ok(Fault {
            param: p.to_string(),
            index: i,
            delta: d,
        }),
        _ => Err(Error::Config(format!("--inject-fault expects PARAM:INDEX:DELTA, got {s:?}"))),
    }
}

fn cmd_gradcheck(g: &GradcheckArgs) -> Result<i32> {
    let c = &g.common;
    let cfg = if c.config.is_none() && c.preset.is_none() {
        let mut base = gradcheck_config();
        apply_overrides(&mut base, c).map_err(as_config_error)?;
        base
    } else {
        resolve_config(c)?
    };
    if cfg.d_model > GRADCHECK_MAX_D {
        return Err(Error::Config(format!(
            "gradcheck needs d_model <= {GRADCHECK_MAX_D}, got {}",
            cfg.d_model
        )));
    }
    if !(g.tolerance > 0.0 && g.step > 0.0) || g.samples == 0 {
        return Err(Error::Config("samples, step and tolerance must be positive".into()));
    }
    let fault = g.inject_fault.as_deref().map(parse_fault).transpose()?;
    let prep = prepare_checked(&cfg)?;
    if prep.graphs.n() > GRADCHECK_MAX_NODES {
        return Err(Error::Config(format!(
            "gradcheck needs at most {GRADCHECK_MAX_NODES} nodes, dataset has {}",
            prep.graphs.n()
        )));
    }
    let h = cfg.horizons[0];
    let tc = cfg.train_config(h);
    let model = Model::new(&prep.graphs, &tc)?;
    let set = WindowSet::new(&prep.scaled, prep.splits.train.clone(), cfg.window, h)?;
    let idx: Vec<usize> = (0..set.len().min(cfg.batch_size)).collect();
    let batch = set.batch(&idx);
    let gc = GradcheckConfig {
        samples: g.samples,
        step: g.step,
        tolerance: g.tolerance,
        seed: cfg.seed,
        ..GradcheckConfig::default()
    };
    let report = gradient_check(
        &model.store,
        |t, b| Ok(model.pipeline(t, b, &batch)?.loss),
        &gc,
        fault.as_ref(),
    )?;
    println!("{:<36} {:>8} {:>14}", "group", "checked", "max rel error");
    for grp in &report.groups {
        println!("{:<36} {:>8} {:>14.3e}", grp.group, grp.checked, grp.max_rel_error);
    }
    if let Some(out) = &c.out {
        ensure_dir(out)?;
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    let worst = report.worst().expect("at least one sample");
    if report.passed() {
        println!("PASS: max relative error {:.3e} < {:.1e}", worst.rel_error, report.tolerance);
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "FAIL: worst {}[{}] analytic {:.6e} numeric {:.6e} relative error {:.3e} >= {:.1e}",
            worst.param, worst.index, worst.analytic, worst.numeric, worst.rel_error, report.tolerance
        );
        Ok(EXIT_NUMERICAL)
    }
}

fn apply_overrides(cfg: &mut RunConfig, c: &Common) -> Result<()> {
    if let Some(d) = &c.dataset {
        cfg.set("dataset", &d.display().to_string())?;
    }
    let flags = [
        ("seed", c.seed.map(|s| s.to_string())),
        ("horizons", c.horizons.clone()),
        ("graphs", c.graphs.clone()),
        ("sgatt", c.sgatt.clone()),
        ("heuristic_mode", c.heuristic_mode.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(|e| Error::Config(format!("--{}: {e}", k.replace('_', "-"))))?;
        }
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()
}

/// Synthetic spec from defaults, an optional file of `synth.*` keys and
/// flags.
pub fn resolve_synth(s: &SynthArgs) -> Result<SyntheticSpec> {
    let mut cfg = RunConfig::preset(Preset::SyntheticDesk);
    if let Some(path) = &s.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text, &path.display().to_string())
            .map_err(as_config_error)?;
    }
    let mut set = |k: &str, v: String| cfg.set(&format!("synth.{k}"), &v).map_err(as_config_error);
    if let Some(v) = s.seed {
        set("seed", v.to_string())?;
    }
    if let Some(v) = s.nodes {
        set("nodes", v.to_string())?;
    }
    if let Some(v) = s.functions {
        set("functions", v.to_string())?;
    }
    if let Some(v) = s.length {
        set("length", v.to_string())?;
    }
    if let Some(v) = &s.lambda {
        set("lambda", v.clone())?;
    }
    if let Some(v) = s.noise {
        set("noise", v.to_string())?;
    }
    for kv in &s.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        set(k.trim(), v.to_string())?;
    }
    let spec = cfg.synthetic_spec().expect("synthetic preset");
    spec.validate().map_err(as_config_error)?;
    Ok(spec)
}

fn cmd_synth(s: &SynthArgs) -> Result<i32> {
    let spec = resolve_synth(s)?;
    let bundle = synthesize(&spec)?;
    let files = save_dataset(&bundle, &s.out)?;
    println!(
        "wrote {} nodes x {} steps to {}, {}, {}",
        spec.nodes,
        spec.length,
        files.nodes.display(),
        files.functions.display(),
        files.series.display()
    );
    Ok(EXIT_OK)
}
