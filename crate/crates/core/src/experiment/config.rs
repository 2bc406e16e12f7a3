//! Run configuration: presets, a flat `key = value` file format and
//! validation.
//!
//! ```text
//! # comments and blank lines are ignored
//! preset = synthetic-desk
//! horizons = 12,24
//! graphs = D,N,F,H,T
//! synth.nodes = 20
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::data::{DatasetFiles, Lambdas, SyntheticSpec};
use crate::error::{Error, Result};
use crate::forecaster::{split_ranges, ForecasterConfig, TrainConfig};
use crate::fusion::{BridgeInit, FusionConfig};
use crate::graphs::{GraphKind, GraphMask, HeuristicMode, KernelConfig};

pub const MIN_HORIZON: usize = 3;
pub const MAX_HORIZON: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeuristicSetting {
    Exp,
    Kl,
    Off,
}

impl FromStr for HeuristicSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exp" | "euclidean" | "euclidean-params" => Ok(Self::Exp),
            "kl" | "kl-divergence" => Ok(Self::Kl),
            "off" => Ok(Self::Off),
            _ => Err(Error::Config(format!("heuristic mode must be exp, kl or off, got {s:?}"))),
        }
    }
}

impl fmt::Display for HeuristicSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exp => "exp",
            Self::Kl => "kl",
            Self::Off => "off",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Not configured yet; rejected by validation.
    None,
    Files(DatasetFiles),
    /// A generated dataset. `seed = None` follows the run seed.
    Synthetic { spec: SyntheticSpec, seed: Option<u64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    ParkingStyle,
    AirqualityStyle,
    SyntheticDesk,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::ParkingStyle, Preset::AirqualityStyle, Preset::SyntheticDesk];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ParkingStyle => "parking-style",
            Preset::AirqualityStyle => "airquality-style",
            Preset::SyntheticDesk => "synthetic-desk",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    pub run_id: Option<String>,
    pub data: DataSource,
    pub kernel: KernelConfig,
    pub graphs: GraphMask,
    pub heuristic: HeuristicSetting,
    pub functionality: bool,
    pub sgatt: bool,
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub blocks: usize,
    pub exclude_self: bool,
    pub spectral_init: bool,
    pub bridge_init: BridgeInit,
    pub value_init_scale: f64,
    pub channels: usize,
    pub kernel_width: usize,
    pub window: usize,
    pub horizons: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::ParkingStyle)
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let fusion = FusionConfig::default();
        let fc = ForecasterConfig::default();
        let mut c = Self {
            preset: p.name().into(),
            run_id: None,
            data: DataSource::None,
            kernel: KernelConfig::default(),
            graphs: GraphMask::all(),
            heuristic: HeuristicSetting::Exp,
            functionality: true,
            sgatt: true,
            d_model: 64,
            heads: 8,
            head_dim: 8,
            blocks: fusion.blocks,
            exclude_self: fusion.exclude_self,
            spectral_init: fusion.spectral_init,
            bridge_init: fusion.bridge_init,
            value_init_scale: fusion.value_init_scale,
            channels: fc.channels,
            kernel_width: fc.kernel,
            window: 24,
            horizons: vec![3, 6, 9, 12, 15, 18, 21, 24],
            lr: AdamConfig::default().lr,
            batch_size: 32,
            epochs: 40,
            seed: 0,
            split: [0.7, 0.1, 0.2],
        };
        match p {
            Preset::ParkingStyle => {}
            Preset::AirqualityStyle => {
                c.heads = 24;
                c.head_dim = 6;
                c.d_model = 144;
            }
            Preset::SyntheticDesk => {
                c.data = DataSource::Synthetic {
                    spec: SyntheticSpec::default(),
                    seed: None,
                };
                c.heads = 4;
                c.head_dim = 8;
                c.d_model = 32;
                c.channels = 8;
                c.horizons = vec![12, 24];
                c.lr = 1e-3;
                c.batch_size = 8;
                c.epochs = 12;
            }
        }
        c
    }

    /// Graphs actually built: the mask minus switched-off graphs.
    pub fn effective_mask(&self) -> GraphMask {
        let mut m = self.graphs;
        if self.heuristic == HeuristicSetting::Off {
            m = m.without(GraphKind::Heuristic);
        }
        if !self.functionality {
            m = m.without(GraphKind::Functionality);
        }
        m
    }

    pub fn kernel_config(&self) -> KernelConfig {
        let mut k = self.kernel;
        if self.heuristic == HeuristicSetting::Kl {
            k.heuristic_mode = HeuristicMode::KlDivergence;
        } else {
            k.heuristic_mode = HeuristicMode::EuclideanParams;
        }
        k
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{}-s{}", self.preset, self.seed))
    }

    /// The synthetic spec with its seed resolved, if the data is synthetic.
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match &self.data {
            DataSource::Synthetic { spec, seed } => Some(SyntheticSpec {
                seed: seed.unwrap_or(self.seed),
                ..spec.clone()
            }),
            _ => None,
        }
    }

    pub fn train_config(&self, horizon: usize) -> TrainConfig {
        TrainConfig {
            fusion: FusionConfig {
                d_model: self.d_model,
                heads: self.heads,
                head_dim: self.head_dim,
                blocks: self.blocks,
                sgatt: self.sgatt,
                exclude_self: self.exclude_self,
                spectral_init: self.spectral_init,
                bridge_init: self.bridge_init,
                value_init_scale: self.value_init_scale,
            },
            forecaster: ForecasterConfig {
                channels: self.channels,
                kernel: self.kernel_width,
                window: self.window,
                horizon,
            },
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.heads * self.head_dim != self.d_model {
            return fail(format!(
                "heads ({}) x head_dim ({}) must equal d_model ({})",
                self.heads, self.head_dim, self.d_model
            ));
        }
        if self.horizons.is_empty() {
            return fail("horizons must not be empty".into());
        }
        if let Some(h) = self.horizons.iter().find(|h| !(MIN_HORIZON..=MAX_HORIZON).contains(*h)) {
            return fail(format!("horizon {h} outside {MIN_HORIZON}..={MAX_HORIZON}"));
        }
        let mut sorted = self.horizons.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.horizons.len() {
            return fail(format!("duplicate horizons in {:?}", self.horizons));
        }
        if self.effective_mask().count() == 0 {
            return fail("no graphs left after applying the mask and switches".into());
        }
        self.kernel_config().validate()?;
        for &h in &self.horizons {
            self.train_config(h).validate()?;
        }
        match &self.data {
            DataSource::None => return fail("no dataset configured (set dataset, nodes/functions/series, or a synthetic preset)".into()),
            DataSource::Files(_) => {}
            DataSource::Synthetic { .. } => {
                let spec = self.synthetic_spec().expect("synthetic");
                spec.validate()?;
                let longest = *self.horizons.iter().max().expect("nonempty");
                split_ranges(spec.length, self.split, self.window, longest)?;
            }
        }
        if self.split.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return fail(format!("split ratios must be positive, got {:?}", self.split));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "preset" => {
                let keep = self.clone();
                *self = RunConfig::preset(v.parse()?);
                if keep.data != DataSource::None && !matches!(keep.data, DataSource::Synthetic { .. }) {
                    self.data = keep.data;
                }
            }
            "run_id" => self.run_id = Some(v.to_string()),
            "dataset" => self.data = DataSource::Files(DatasetFiles::in_dir(Path::new(v))),
            "nodes" | "functions" | "series" => {
                let mut files = match &self.data {
                    DataSource::Files(f) => f.clone(),
                    _ => DatasetFiles {
                        nodes: PathBuf::new(),
                        functions: PathBuf::new(),
                        series: PathBuf::new(),
                    },
                };
                let slot = match key.trim() {
                    "nodes" => &mut files.nodes,
                    "functions" => &mut files.functions,
                    _ => &mut files.series,
                };
                *slot = PathBuf::from(v);
                self.data = DataSource::Files(files);
            }
            "graphs" => self.graphs = v.parse()?,
            "heuristic_mode" => self.heuristic = v.parse()?,
            "functionality" => self.functionality = parse_switch(key, v)?,
            "sgatt" => self.sgatt = parse_switch(key, v)?,
            "exclude_self" => self.exclude_self = parse_switch(key, v)?,
            "spectral_init" => self.spectral_init = parse_switch(key, v)?,
            "value_init_scale" => self.value_init_scale = num(key, v)?,
            "bridge_init" => {
                self.bridge_init = match v {
                    "inverse" => BridgeInit::Inverse,
                    "uniform" => BridgeInit::Uniform,
                    _ => return Err(Error::Config(format!("bridge_init must be inverse or uniform, got {v:?}"))),
                }
            }
            "d_model" => self.d_model = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "head_dim" => self.head_dim = num(key, v)?,
            "blocks" => self.blocks = num(key, v)?,
            "channels" => self.channels = num(key, v)?,
            "kernel_width" => self.kernel_width = num(key, v)?,
            "window" => self.window = num(key, v)?,
            "horizons" => self.horizons = parse_list(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "split" => {
                let s: Vec<f64> = parse_list(key, v)?;
                self.split = s
                    .try_into()
                    .map_err(|_| Error::Config("split needs three ratios".into()))?;
            }
            "sigma_d2" => self.kernel.sigma_d2 = optional(key, v)?,
            "sigma_h2" => self.kernel.sigma_h2 = optional(key, v)?,
            "epsilon" => self.kernel.epsilon = num(key, v)?,
            "bins" => self.kernel.bins = num(key, v)?,
            "refine_fit" => self.kernel.refine_fit = parse_switch(key, v)?,
            "clamp_negative" => self.kernel.clamp_negative = parse_switch(key, v)?,
            k if k.starts_with("synth.") => self.set_synthetic(&k["synth.".len()..], v)?,
            k => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    fn set_synthetic(&mut self, key: &str, v: &str) -> Result<()> {
        if !matches!(self.data, DataSource::Synthetic { .. }) {
            self.data = DataSource::Synthetic {
                spec: SyntheticSpec::default(),
                seed: None,
            };
        }
        let DataSource::Synthetic { spec, seed } = &mut self.data else {
            unreachable!()
        };
        let full = format!("synth.{key}");
        let k = full.as_str();
        match key {
            "seed" => *seed = Some(num(k, v)?),
            "nodes" => spec.nodes = num(k, v)?,
            "functions" => spec.functions = num(k, v)?,
            "length" => spec.length = num(k, v)?,
            "noise" => spec.noise = num(k, v)?,
            "diffusion" => spec.diffusion = num(k, v)?,
            "persistence" => spec.persistence = num(k, v)?,
            "lag" => spec.lag = num(k, v)?,
            "period" => spec.period = num(k, v)?,
            "extent" => spec.extent = num(k, v)?,
            "extra_edges" => spec.extra_edges = num(k, v)?,
            "clusters" => spec.clusters = num(k, v)?,
            "event_rate" => spec.event_rate = num(k, v)?,
            "lambda_d" => spec.lambda.distance = num(k, v)?,
            "lambda_n" => spec.lambda.neighbor = num(k, v)?,
            "lambda_f" => spec.lambda.functionality = num(k, v)?,
            "lambda_h" => spec.lambda.heuristic = num(k, v)?,
            "lambda_t" => spec.lambda.temporal = num(k, v)?,
            "lambda" => {
                let l: Vec<f64> = parse_list(k, v)?;
                let [d, n, f, h, t]: [f64; 5] = l
                    .try_into()
                    .map_err(|_| Error::Config("synth.lambda needs five weights (D,N,F,H,T)".into()))?;
                spec.lambda = Lambdas {
                    distance: d,
                    neighbor: n,
                    functionality: f,
                    heuristic: h,
                    temporal: t,
                };
            }
            _ => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    /// Applies a whole `key = value` document. A `preset` line is applied
    /// first wherever it appears.
    pub fn apply_text(&mut self, text: &str, file: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: file.into(),
                line: i as u64 + 1,
                msg: format!("expected key = value, found {line:?}"),
            })?;
            pairs.push((i as u64 + 1, k.trim().to_string(), v.trim().to_string()));
        }
        pairs.sort_by_key(|(_, k, _)| k != "preset");
        for (line, k, v) in pairs {
            self.set(&k, &v).map_err(|e| Error::Parse {
                file: file.into(),
                line,
                msg: match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                },
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn optional(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

pub fn parse_switch(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on or off, got {v:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_satisfy_head_product() {
        for p in Preset::ALL {
            let c = RunConfig::preset(p);
            assert_eq!(c.heads * c.head_dim, c.d_model, "{}", p.name());
        }
        let a = RunConfig::preset(Preset::AirqualityStyle);
        assert_eq!((a.heads, a.head_dim), (24, 6));
        let d = RunConfig::default();
        assert_eq!((d.lr, d.batch_size, d.epochs), (1e-4, 32, 40));
    }

    #[test]
    fn text_overrides_and_errors_name_lines() {
        let mut c = RunConfig::default();
        c.apply_text("horizons = 12, 24\n# note\npreset = synthetic-desk\nsgatt=off\n", "run.cfg")
            .unwrap();
        assert_eq!(c.preset, "synthetic-desk");
        assert_eq!(c.horizons, vec![12, 24]);
        assert!(!c.sgatt);
        c.validate().unwrap();
        let err = RunConfig::default().apply_text("seed = 1\nheads = x\n", "run.cfg").unwrap_err();
        assert!(err.to_string().starts_with("run.cfg:2:"), "{err}");
        assert!(RunConfig::default().apply_text("nonsense\n", "f").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = RunConfig::preset(Preset::SyntheticDesk);
        c.validate().unwrap();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = RunConfig::preset(Preset::SyntheticDesk);
        c.horizons = vec![2];
        assert!(c.validate().is_err());
        c.horizons = vec![25];
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_err());
    }

    #[test]
    fn switches_shrink_the_mask() {
        let mut c = RunConfig::default();
        c.heuristic = HeuristicSetting::Off;
        c.functionality = false;
        assert_eq!(c.effective_mask().to_string(), "D,N,T");
        c.heuristic = HeuristicSetting::Kl;
        assert_eq!(c.kernel_config().heuristic_mode, HeuristicMode::KlDivergence);
    }

    #[test]
    fn synthetic_seed_follows_run_seed() {
        let mut c = RunConfig::preset(Preset::SyntheticDesk);
        c.seed = 7;
        assert_eq!(c.synthetic_spec().unwrap().seed, 7);
        c.set("synth.seed", "3").unwrap();
        assert_eq!(c.synthetic_spec().unwrap().seed, 3);
        c.set("synth.lambda", "0,1,0,0,0").unwrap();
        assert_eq!(c.synthetic_spec().unwrap().lambda, Lambdas::only_neighbor());
    }
}
