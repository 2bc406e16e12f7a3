//! Central finite-difference check of reverse-mode gradients.
//!
//! The relative error of one scalar is `|a - n| / max(|a|, |n|, floor)` for
//! analytic gradient `a` and numeric gradient `n`. Gradients of deep
//! parameters are often far below 1, so the floor is small (`1e-6` by
//! default) and only shields values at the finite-difference noise level.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::Serialize;

use crate::autodiff::{Binding, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// Scalars to check in total; every parameter gets at least one.
    pub samples: usize,
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Smallest denominator of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
        }
    }
}

/// Adds `delta` to the analytic gradient of one scalar before comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Fault {
    pub param: String,
    pub index: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub samples: Vec<Sample>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&Sample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |s| s.rel_error)
    }

    pub fn passed(&self) -> bool {
        self.samples.iter().all(|s| s.rel_error < self.tolerance)
    }
}

/// Parameter group used in reports: the name without its trailing
/// `.w`/`.b`, truncated to three dotted segments.
pub fn group_of(name: &str) -> String {
    let base = name
        .strip_suffix(".w")
        .or_else(|| name.strip_suffix(".b"))
        .unwrap_or(name);
    base.split('.').take(3).collect::<Vec<_>>().join(".")
}

/// Compares the analytic gradient of `loss` against central differences on
/// a seeded sample of parameter scalars.
pub fn gradient_check<F>(store: &ParamStore, loss: F, cfg: &GradcheckConfig, fault: Option<&Fault>) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let l = loss(&mut tape, &bind)?;
    let mut grads = tape.backward(l)?;
    let mut picks = pick_scalars(store, cfg.samples, cfg.seed);
    if let Some(f) = fault {
        let (id, p) = store
            .iter()
            .find(|(_, p)| p.name == f.param)
            .ok_or_else(|| Error::Config(format!("no parameter named {:?}", f.param)))?;
        if f.index >= p.value.len() {
            return Err(Error::Config(format!(
                "{} has {} scalars, fault index {} is out of range",
                f.param,
                p.value.len(),
                f.index
            )));
        }
        grads.corrupt(bind.var(id), f.index, f.delta);
        if !picks.contains(&(id, f.index)) {
            picks.push((id, f.index));
        }
    }

    let mut work = store.clone();
    let mut samples = Vec::with_capacity(picks.len());
    for (id, index) in picks {
        let var = bind.var(id);
        let analytic = grads.get_data(var).map_or(0.0, |g| g[index]);
        let orig = work.get(id).value.data()[index];
        let eval = |v: f64, work: &mut ParamStore| -> Result<f64> {
            work.get_mut(id).value.data_mut()[index] = v;
            let mut t = Tape::new();
            let b = work.bind_frozen(&mut t);
            let out = loss(&mut t, &b)?;
            Ok(t.value(out).item())
        };
        let plus = eval(orig + cfg.step, &mut work)?;
        let minus = eval(orig - cfg.step, &mut work)?;
        work.get_mut(id).value.data_mut()[index] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        samples.push(Sample {
            param: store.get(id).name.clone(),
            index,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor),
        });
    }

    let mut groups: BTreeMap<String, GroupReport> = BTreeMap::new();
    for (_, p) in store.iter() {
        let g = group_of(&p.name);
        groups.entry(g.clone()).or_insert(GroupReport {
            group: g,
            checked: 0,
            max_rel_error: 0.0,
        });
    }
    for s in &samples {
        let g = groups.get_mut(&group_of(&s.param)).expect("group registered");
        g.checked += 1;
        g.max_rel_error = g.max_rel_error.max(s.rel_error);
    }
    Ok(GradcheckReport {
        groups: groups.into_values().collect(),
        samples,
        tolerance: cfg.tolerance,
    })
}

/// One scalar from every parameter, then a uniform sample of the rest.
fn pick_scalars(store: &ParamStore, total: usize, seed: u64) -> Vec<(crate::autodiff::ParamId, usize)> {
    let mut r = rng(seed);
    let flat: Vec<(crate::autodiff::ParamId, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.value.len()).map(move |i| (id, i)))
        .collect();
    let mut chosen = vec![false; flat.len()];
    let mut offset = 0;
    for (_, p) in store.iter() {
        let k = sample(&mut r, p.value.len(), 1).index(0);
        chosen[offset + k] = true;
        offset += p.value.len();
    }
    let have = chosen.iter().filter(|&&c| c).count();
    let rest: Vec<usize> = (0..flat.len()).filter(|&i| !chosen[i]).collect();
    let extra = total.saturating_sub(have).min(rest.len());
    for k in sample(&mut r, rest.len(), extra).iter() {
        chosen[rest[k]] = true;
    }
    flat.into_iter()
        .zip(chosen)
        .filter_map(|(p, c)| c.then_some(p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Array;

    fn quadratic_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("m.a.w", Array::from_vec(vec![0.5, -1.5, 2.0]));
        s.add("m.a.b", Array::from_vec(vec![0.25]));
        s
    }

    fn loss(t: &mut Tape, b: &Binding) -> Result<Var> {
        let v = b.vars();
        let sq = t.mul(v[0], v[0])?;
        let s = t.sum(sq);
        let p = t.mul(v[1], v[1])?;
        let p = t.sum(p);
        let s = t.add(s, p)?;
        Ok(t.scale(s, 0.5))
    }

    #[test]
    fn groups_strip_weight_suffix() {
        assert_eq!(group_of("fusion.block0.spatial.query.w"), "fusion.block0.spatial");
        assert_eq!(group_of("fusion.tensor"), "fusion.tensor");
        assert_eq!(group_of("forecaster.readout.b"), "forecaster.readout");
    }

    #[test]
    fn clean_gradients_pass_and_fault_fails() {
        let store = quadratic_store();
        let cfg = GradcheckConfig {
            samples: 10,
            ..GradcheckConfig::default()
        };
        let r = gradient_check(&store, loss, &cfg, None).unwrap();
        assert_eq!(r.samples.len(), 4);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.groups.len(), 1);
        let fault = Fault {
            param: "m.a.w".into(),
            index: 1,
            delta: 0.1,
        };
        let r = gradient_check(&store, loss, &cfg, Some(&fault)).unwrap();
        assert!(!r.passed());
        let w = r.worst().unwrap();
        assert_eq!((w.param.as_str(), w.index), ("m.a.w", 1));
    }
}
