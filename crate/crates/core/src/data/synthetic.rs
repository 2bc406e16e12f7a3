//! Seeded synthetic datasets with planted node relations.
//!
//! Each node's series is a weighted sum of five components, one per
//! relation, plus white noise:
//!
//! | weight | component                                                    |
//! |--------|--------------------------------------------------------------|
//! | `distance`      | diffusion over the thresholded distance kernel      |
//! | `neighbor`      | diffusion over the planted (non-geometric) adjacency |
//! | `functionality` | daily seasonality mixed by the node's function profile, plus diffusion among nodes of one profile cluster |
//! | `heuristic`     | sparse events with node-specific exponential magnitudes, plus diffusion among nodes with similar decay rates |
//! | `temporal`      | one slowly varying factor shared by all nodes       |
//!
//! A diffusion field evolves as
//! `z(t+1) = φ((1 - κ) z(t) + κ R (z(t) + z(t+1-ℓ)) / 2) + sqrt(1 - φ²) ε(t)` with `R`
//! the row-normalised relation matrix and `ℓ` the transit lag: half of what
//! a node receives from its related nodes arrives at once, half `ℓ` steps late.
//! Diffusion, seasonal and shared components are standardised to unit
//! variance before weighting.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{NodeRecord, NodeTable};
use crate::nn::{rng, Rng};

const BURN_IN: usize = 200;

/// Mixing weights of the five components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub distance: f64,
    pub neighbor: f64,
    pub functionality: f64,
    pub heuristic: f64,
    pub temporal: f64,
}

impl Lambdas {
    pub fn only_neighbor() -> Self {
        Self {
            distance: 0.0,
            neighbor: 1.0,
            functionality: 0.0,
            heuristic: 0.0,
            temporal: 0.0,
        }
    }

    fn as_array(&self) -> [f64; 5] {
        [self.distance, self.neighbor, self.functionality, self.heuristic, self.temporal]
    }
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            distance: 0.3,
            neighbor: 1.0,
            functionality: 0.5,
            heuristic: 0.3,
            temporal: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    /// Function categories `K`.
    pub functions: usize,
    /// Series length `P`.
    pub length: usize,
    pub seed: u64,
    pub lambda: Lambdas,
    /// Standard deviation of the white observation noise.
    pub noise: f64,
    /// Diffusion rate `κ` in `[0, 1]`.
    pub diffusion: f64,
    /// Per-step persistence `φ` of the diffusion fields, in `[0, 1)`.
    pub persistence: f64,
    /// Steps a value takes to cross one relation edge, at least 1.
    pub lag: usize,
    /// Seasonal period in steps.
    pub period: usize,
    /// Side of the square holding node positions, in meters.
    pub extent: f64,
    /// Chords added to the random ring adjacency.
    pub extra_edges: usize,
    /// Function-profile clusters.
    pub clusters: usize,
    /// Events per node as a fraction of the series length.
    pub event_rate: f64,
    /// Range of the per-node event decay rates `β*`.
    pub beta_range: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            nodes: 20,
            functions: 8,
            length: 2000,
            seed: 0,
            lambda: Lambdas::default(),
            noise: 0.1,
            diffusion: 0.7,
            persistence: 0.98,
            lag: 24,
            period: 24,
            extent: 1000.0,
            extra_edges: 10,
            clusters: 4,
            event_rate: 0.15,
            beta_range: (0.5, 3.0),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let l = self.lambda.as_array();
        let fail = |m: String| Err(Error::Config(m));
        if l.iter().any(|v| !v.is_finite() || *v < 0.0) || l.iter().sum::<f64>() <= 0.0 {
            return fail(format!("mixing weights must be nonnegative with a positive sum, got {l:?}"));
        }
        if self.nodes < 2 || self.functions < 1 || self.length < 2 || self.period < 1 || self.clusters < 1 {
            return fail("need nodes >= 2, functions >= 1, length >= 2, period >= 1, clusters >= 1".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be nonnegative, got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.diffusion) || !(0.0..1.0).contains(&self.persistence) {
            return fail("diffusion must lie in [0, 1] and persistence in [0, 1)".into());
        }
        if self.lag == 0 {
            return fail("lag must be at least 1".into());
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return fail("extent must be positive".into());
        }
        if !(self.event_rate > 0.0 && self.event_rate <= 1.0) {
            return fail("event rate must lie in (0, 1]".into());
        }
        let (lo, hi) = self.beta_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return fail(format!("beta range must satisfy 0 < lo <= hi, got {:?}", self.beta_range));
        }
        Ok(())
    }

    /// Events per node.
    pub fn event_count(&self) -> usize {
        ((self.event_rate * self.length as f64).round() as usize).clamp(1, self.length)
    }
}

/// Latent factors that are not recoverable from the node table itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Decay rate of each node's event magnitudes.
    pub beta: Vec<f64>,
    /// Scale of the event-magnitude density: `event_count · β*`.
    pub alpha: Vec<f64>,
    /// Function-profile cluster of each node.
    pub cluster: Vec<usize>,
    /// Raw event magnitudes per node.
    pub events: Vec<Vec<f64>>,
}

fn normal(r: &mut Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(r)
}

fn standardise(rows: &mut [Vec<f64>]) {
    let count = rows.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let mean = rows.iter().flatten().sum::<f64>() / count;
    let var = rows.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    for v in rows.iter_mut().flatten() {
        *v = (*v - mean) / sd;
    }
}

fn row_normalise(m: &mut [Vec<f64>]) {
    for row in m {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

/// Simulates one diffusion field per node over relation `rel`.
fn diffuse(spec: &SyntheticSpec, rel: &[Vec<f64>], r: &mut Rng) -> Vec<Vec<f64>> {
    let n = spec.nodes;
    let (k, phi) = (spec.diffusion, spec.persistence);
    let innov = (1.0 - phi * phi).sqrt();
    let mut z: Vec<f64> = (0..n).map(|_| normal(r)).collect();
    let lag = spec.lag;
    let mut past: VecDeque<Vec<f64>> = std::iter::repeat_n(z.clone(), lag).collect();
    let mut out = vec![Vec::with_capacity(spec.length); n];
    for t in 0..BURN_IN.max(4 * lag) + spec.length {
        let lagged = past.pop_front().expect("lag >= 1");
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let mix: f64 = rel[i]
                    .iter()
                    .zip(z.iter().zip(&lagged))
                    .map(|(w, (now, then))| w * 0.5 * (now + then))
                    .sum();
                phi * ((1.0 - k) * z[i] + k * mix) + innov * normal(r)
            })
            .collect();
        z = next;
        past.push_back(z.clone());
        if t >= BURN_IN.max(4 * lag) {
            for (o, v) in out.iter_mut().zip(&z) {
                o.push(*v);
            }
        }
    }
    standardise(&mut out);
    out
}

/// Random ring over a shuffled node order plus distinct chords.
fn random_adjacency(n: usize, extra: usize, r: &mut Rng) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(r);
    if n >= 2 {
        for w in 0..n {
            let (a, b) = (order[w], order[(w + 1) % n]);
            if a != b {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
    }
    let free = n * (n - 1) / 2 - (0..n).map(|i| adj[i].iter().filter(|&&x| x).count()).sum::<usize>() / 2;
    let mut added = 0;
    while added < extra.min(free) {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a != b && !adj[a][b] {
            adj[a][b] = true;
            adj[b][a] = true;
            added += 1;
        }
    }
    adj
}

/// Generates a node table and its hidden factors; a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(NodeTable, GroundTruth)> {
    spec.validate()?;
    let (n, kf, p) = (spec.nodes, spec.functions, spec.length);
    let mut r = rng(spec.seed);

    let positions: Vec<(f64, f64)> = (0..n)
        .map(|_| (r.random_range(0.0..spec.extent), r.random_range(0.0..spec.extent)))
        .collect();
    let adj = random_adjacency(n, spec.extra_edges, &mut r);

    let clusters = spec.clusters.min(n);
    let gamma = Gamma::new(0.7, 1.0).expect("gamma");
    let prototypes: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..kf).map(|_| 20.0 * gamma.sample(&mut r)).collect())
        .collect();
    let cluster: Vec<usize> = (0..n).map(|_| r.random_range(0..clusters)).collect();
    let functions: Vec<Vec<f64>> = cluster
        .iter()
        .map(|&c| {
            prototypes[c]
                .iter()
                .map(|&m| {
                    let mean = m * r.random_range(0.7..1.3);
                    if mean > 0.0 {
                        Poisson::new(mean).map_or(0.0, |d| d.sample(&mut r))
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    // Relation matrices driving the two diffusion fields.
    let d2: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let (dx, dy) = (positions[i].0 - positions[j].0, positions[i].1 - positions[j].1);
                    dx * dx + dy * dy
                })
                .collect()
        })
        .collect();
    let pairs: Vec<f64> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| d2[i][j].sqrt()).collect();
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let sigma2 = pairs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / pairs.len() as f64;
    let mut kernel: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let w = (-d2[i][j] / sigma2.max(f64::MIN_POSITIVE)).exp();
                    if i != j && w >= 0.1 {
                        w
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    row_normalise(&mut kernel);
    let mut neigh: Vec<Vec<f64>> = adj.iter().map(|row| row.iter().map(|&b| f64::from(u8::from(b))).collect()).collect();
    row_normalise(&mut neigh);

    let z_dist = diffuse(spec, &kernel, &mut r);
    let z_neigh = diffuse(spec, &neigh, &mut r);

    // Seasonal patterns per function category, mixed by function shares.
    let patterns: Vec<Vec<f64>> = (0..kf)
        .map(|_| {
            let (a1, a2) = (r.random_range(0.5..1.0), r.random_range(0.0..0.5));
            let (p1, p2) = (r.random_range(0.0..std::f64::consts::TAU), r.random_range(0.0..std::f64::consts::TAU));
            (0..p)
                .map(|t| {
                    let w = std::f64::consts::TAU * t as f64 / spec.period as f64;
                    a1 * (w + p1).sin() + a2 * (2.0 * w + p2).sin()
                })
                .collect()
        })
        .collect();
    let mut seasonal: Vec<Vec<f64>> = functions
        .iter()
        .map(|f| {
            let total: f64 = f.iter().sum();
            let share: Vec<f64> = if total > 0.0 {
                f.iter().map(|v| v / total).collect()
            } else {
                vec![1.0 / kf as f64; kf]
            };
            (0..p).map(|t| (0..kf).map(|k| share[k] * patterns[k][t]).sum()).collect()
        })
        .collect();
    standardise(&mut seasonal);

    let m = spec.event_count();
    let (blo, bhi) = spec.beta_range;
    let beta: Vec<f64> = (0..n)
        .map(|_| if bhi > blo { r.random_range(blo..bhi) } else { blo })
        .collect();
    let mut events = Vec::with_capacity(n);
    let mut event_series = vec![vec![0.0; p]; n];
    for i in 0..n {
        let exp = Exp::new(beta[i]).expect("positive rate");
        let times = sample(&mut r, p, m);
        let mags: Vec<f64> = (0..m).map(|_| exp.sample(&mut r)).collect();
        for (t, &v) in times.iter().zip(&mags) {
            event_series[i][t] = v;
        }
        events.push(mags);
    }
    let alpha = beta.iter().map(|b| m as f64 * b).collect();

    let mut shared = vec![0.0; p];
    let mut g = normal(&mut r);
    let rho: f64 = 0.99;
    for _ in 0..BURN_IN {
        g = rho * g + (1.0 - rho * rho).sqrt() * normal(&mut r);
    }
    for v in shared.iter_mut() {
        g = rho * g + (1.0 - rho * rho).sqrt() * normal(&mut r);
        *v = g;
    }
    let mut shared = vec![shared];
    standardise(&mut shared);
    let shared = &shared[0];

    // Profile and event-shape relations carry diffusing signal too.
    let mut same_cluster: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i != j && cluster[i] == cluster[j]))).collect())
        .collect();
    row_normalise(&mut same_cluster);
    let spread = ((bhi - blo) / 4.0).max(1e-3);
    let mut similar_beta: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let w = (-(beta[i] - beta[j]).powi(2) / (2.0 * spread * spread)).exp();
                    if i != j && w >= 0.1 {
                        w
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    row_normalise(&mut similar_beta);
    let z_func = diffuse(spec, &same_cluster, &mut r);
    let z_heur = diffuse(spec, &similar_beta, &mut r);

    let l = spec.lambda;
    let series: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..p)
                .map(|t| {
                    l.distance * z_dist[i][t]
                        + l.neighbor * z_neigh[i][t]
                        + l.functionality * (seasonal[i][t] + z_func[i][t])
                        + l.heuristic * (event_series[i][t] + z_heur[i][t])
                        + l.temporal * shared[t]
                        + spec.noise * normal(&mut r)
                })
                .collect()
        })
        .collect();

    let width = (n.saturating_sub(1)).to_string().len().max(2);
    let ids: Vec<String> = (0..n).map(|i| format!("n{i:0width$}")).collect();
    let records = (0..n)
        .map(|i| NodeRecord {
            id: ids[i].clone(),
            position: Some(positions[i]),
            neighbors: (0..n).filter(|&j| adj[i][j]).map(|j| ids[j].clone()).collect(),
            functions: functions[i].clone(),
            series: series[i].clone(),
        })
        .collect();
    let table = NodeTable::new(records)?;
    table.validate()?;
    Ok((
        table,
        GroundTruth {
            beta,
            alpha,
            cluster,
            events,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            nodes: 8,
            length: 300,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, generate_synthetic(&small(4)).unwrap().0);
    }

    #[test]
    fn shapes_follow_spec() {
        let (t, g) = generate_synthetic(&small(0)).unwrap();
        assert_eq!((t.len(), t.function_count(), t.series_len()), (8, 8, 300));
        assert_eq!(g.events[0].len(), 45);
        assert!(g.alpha.iter().zip(&g.beta).all(|(a, b)| (a - 45.0 * b).abs() < 1e-12));
        assert!((0..8).all(|i| t.neighbors(i).len() >= 2));
    }

    #[test]
    fn invalid_weights_rejected() {
        let mut s = small(0);
        s.lambda = Lambdas {
            distance: 0.0,
            neighbor: 0.0,
            functionality: 0.0,
            heuristic: 0.0,
            temporal: 0.0,
        };
        assert!(generate_synthetic(&s).is_err());
        s.lambda.neighbor = -1.0;
        assert!(generate_synthetic(&s).is_err());
    }
}
