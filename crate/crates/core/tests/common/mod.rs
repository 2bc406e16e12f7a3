#![allow(dead_code)]

use mgfuse::graphs::{HeuristicMode, KernelConfig, NodeRecord, NodeTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_table(seed: u64, max_nodes: usize) -> NodeTable {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(2..=max_nodes);
    let k = r.random_range(2..=6);
    let p = r.random_range(40..=90);
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(0.3) {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    let records = (0..n)
        .map(|i| {
            let top = r.random_range(0.5..1.0);
            let decay = r.random_range(0.5..3.0);
            NodeRecord {
                id: format!("n{i}"),
                position: Some((r.random_range(0.0..1000.0), r.random_range(0.0..1000.0))),
                neighbors: (0..n).filter(|&j| adj[i][j]).map(|j| format!("n{j}")).collect(),
                functions: (0..k).map(|_| r.random_range(0..20) as f64).collect(),
                series: (0..p)
                    .map(|_| top * r.random_range(0.0f64..1.0).powf(decay))
                    .collect(),
            }
        })
        .collect();
    NodeTable::new(records).unwrap()
}

fn naive_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for p in 0..a.len() {
        sa += a[p];
        sb += b[p];
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for p in 0..a.len() {
        num += (a[p] - ma) * (b[p] - mb);
        da += (a[p] - ma) * (a[p] - ma);
        db += (b[p] - mb) * (b[p] - mb);
    }
    if da == 0.0 || db == 0.0 {
        0.0
    } else {
        (num / (da.sqrt() * db.sqrt())).clamp(-1.0, 1.0)
    }
}

fn upper_variance(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let mut vals = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            vals.push(d[i][j]);
        }
    }
    if vals.len() < 2 {
        return 1.0;
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

pub fn oracle_distance(t: &NodeTable, cfg: &KernelConfig) -> Vec<Vec<f64>> {
    let n = t.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (t.position(i).unwrap(), t.position(j).unwrap());
            d[i][j] = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        }
    }
    let s2 = cfg.sigma_d2.unwrap_or_else(|| upper_variance(&d));
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = (-(d[i][j] * d[i][j]) / s2).exp();
                w[i][j] = if k >= cfg.epsilon { k } else { 0.0 };
            }
        }
    }
    w
}

pub fn oracle_neighbor(t: &NodeTable) -> Vec<Vec<f64>> {
    let n = t.len();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && t.neighbors(i).contains(&j) {
                w[i][j] = 1.0;
            }
        }
    }
    w
}

fn pearson_matrix(n: usize, v: impl Fn(usize) -> Vec<f64>, clamp: bool) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = naive_pearson(&v(i), &v(j));
                w[i][j] = if clamp { r.max(0.0) } else { r };
            }
        }
    }
    w
}

pub fn oracle_functionality(t: &NodeTable, cfg: &KernelConfig) -> Vec<Vec<f64>> {
    pearson_matrix(t.len(), |i| t.functions(i).to_vec(), cfg.clamp_negative)
}

pub fn oracle_temporal(t: &NodeTable, cfg: &KernelConfig) -> Vec<Vec<f64>> {
    pearson_matrix(t.len(), |i| t.series(i).to_vec(), cfg.clamp_negative)
}

/// Bin counts over the shared value range.
pub fn oracle_histogram(t: &NodeTable, bins: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..t.len() {
        for &v in t.series(i) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let w = (hi - lo) / bins as f64;
    let centers = (0..bins).map(|b| lo + w * (b as f64 + 0.5)).collect();
    let counts = (0..t.len())
        .map(|i| {
            let mut c = vec![0.0; bins];
            for &v in t.series(i) {
                let mut b = ((v - lo) / w).floor() as i64;
                if b < 0 {
                    b = 0;
                }
                if b >= bins as i64 {
                    b = bins as i64 - 1;
                }
                c[b as usize] += 1.0;
            }
            c
        })
        .collect();
    (centers, counts)
}

/// Closed-form least squares of `ln h = a - beta x` over positive bins.
pub fn oracle_log_fit(x: &[f64], h: &[f64]) -> (f64, f64) {
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..x.len() {
        if h[k] > 0.0 {
            let y = h[k].ln();
            n += 1.0;
            sx += x[k];
            sy += y;
            sxx += x[k] * x[k];
            sxy += x[k] * y;
        }
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let icpt = (sy - slope * sx) / n;
    (icpt.exp(), -slope)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    let eps = 1e-10;
    let z = 1.0 + eps * q.len() as f64;
    let mut s = 0.0;
    for k in 0..p.len() {
        if p[k] > 0.0 {
            s += p[k] * (p[k] / ((q[k] + eps) / z)).ln();
        }
    }
    s
}

/// Heuristic graph from the given per-node `(alpha, beta)` fits (Euclidean
/// mode) or from the histograms alone (KL mode).
pub fn oracle_heuristic(t: &NodeTable, cfg: &KernelConfig, fits: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let n = t.len();
    let (_, counts) = oracle_histogram(t, cfg.bins);
    let probs: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| {
            let s: f64 = c.iter().sum();
            c.iter().map(|v| v / s).collect()
        })
        .collect();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i][j] = match cfg.heuristic_mode {
                    HeuristicMode::EuclideanParams => {
                        ((fits[i].0 - fits[j].0).powi(2) + (fits[i].1 - fits[j].1).powi(2)).sqrt()
                    }
                    HeuristicMode::KlDivergence => {
                        0.5 * (kl(&probs[i], &probs[j]) + kl(&probs[j], &probs[i]))
                    }
                };
            }
        }
    }
    let s2 = cfg.sigma_h2.unwrap_or_else(|| upper_variance(&d));
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[i][j] = (-(d[i][j] * d[i][j]) / s2).exp();
            }
        }
    }
    w
}

pub fn max_diff(lib: &[f64], oracle: &[Vec<f64>]) -> f64 {
    let n = oracle.len();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            m = m.max((lib[i * n + j] - oracle[i][j]).abs());
        }
    }
    m
}
