use crate::error::{Error, Result};
use crate::graphs::expfit::{fit_exponential_with, FitOptions};
use crate::graphs::stats::{histogram, pearson, symmetric_kl, variance};
use crate::graphs::{GraphKind, GraphMask, GraphSet, HeuristicMode, KernelConfig, NodeTable, WeightMatrix};

/// Fitted exponential histogram parameters for one node.
#[derive(Clone, Debug, PartialEq)]
pub struct HeuristicFit {
    pub alpha: f64,
    pub beta: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub residual: f64,
}

/// Fills a symmetric zero-diagonal matrix from an upper-triangle rule.
fn symmetric_from(n: usize, mut entry: impl FnMut(usize, usize) -> Result<f64>) -> Result<Vec<f64>> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = entry(i, j)?;
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    Ok(w)
}

/// Variance of the strict upper triangle of a pairwise table, falling back
/// to 1 when it is zero or undefined.
fn pairwise_bandwidth(n: usize, d: &[f64]) -> f64 {
    let vals: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| d[i * n + j])
        .collect();
    match variance(&vals) {
        Some(v) if v > 0.0 && v.is_finite() => v,
        _ => 1.0,
    }
}

fn graph_err(kind: GraphKind, msg: impl Into<String>) -> Error {
    Error::Graph {
        graph: kind.name(),
        msg: msg.into(),
    }
}

/// Thresholded Gaussian kernel over Euclidean distances.
pub fn build_distance_graph(nodes: &NodeTable, cfg: &KernelConfig) -> Result<WeightMatrix> {
    let n = nodes.len();
    let pos: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            nodes.position(i).ok_or_else(|| {
                graph_err(
                    GraphKind::Distance,
                    format!("node {} has no coordinates", nodes.ids()[i]),
                )
            })
        })
        .collect::<Result<_>>()?;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
            dist[i * n + j] = dx.hypot(dy);
        }
    }
    let sigma2 = cfg.sigma_d2.unwrap_or_else(|| pairwise_bandwidth(n, &dist));
    let w = symmetric_from(n, |i, j| {
        let d = dist[i * n + j];
        let k = (-(d * d) / sigma2).exp();
        Ok(if k >= cfg.epsilon { k } else { 0.0 })
    })?;
    WeightMatrix::new(GraphKind::Distance, n, w)
}

/// Binary adjacency; rejects asymmetric adjacency lists.
pub fn build_neighbor_graph(nodes: &NodeTable) -> Result<WeightMatrix> {
    if let Some((i, j)) = nodes.asymmetric_pair() {
        return Err(graph_err(
            GraphKind::Neighbor,
            format!(
                "asymmetric adjacency: {} lists {} but not vice versa",
                nodes.ids()[i],
                nodes.ids()[j]
            ),
        ));
    }
    let n = nodes.len();
    let w = symmetric_from(n, |i, j| Ok(if nodes.neighbors(i).contains(&j) { 1.0 } else { 0.0 }))?;
    WeightMatrix::new(GraphKind::Neighbor, n, w)
}

fn pearson_graph(
    kind: GraphKind,
    n: usize,
    vectors: impl Fn(usize) -> Vec<f64>,
    clamp: bool,
) -> Result<WeightMatrix> {
    let vs: Vec<Vec<f64>> = (0..n).map(vectors).collect();
    let w = symmetric_from(n, |i, j| {
        let r = pearson(&vs[i], &vs[j]).map_err(|e| graph_err(kind, e.to_string()))?;
        Ok(if clamp { r.max(0.0) } else { r })
    })?;
    WeightMatrix::new(kind, n, w)
}

/// Pearson correlation between function-count vectors, all functions
/// weighted equally.
pub fn build_functionality_graph(nodes: &NodeTable, cfg: &KernelConfig) -> Result<WeightMatrix> {
    pearson_graph(
        GraphKind::Functionality,
        nodes.len(),
        |i| nodes.functions(i).to_vec(),
        cfg.clamp_negative,
    )
}

/// Pearson correlation between the nodes' series.
pub fn build_temporal_graph(nodes: &NodeTable, cfg: &KernelConfig) -> Result<WeightMatrix> {
    pearson_graph(
        GraphKind::Temporal,
        nodes.len(),
        |i| nodes.series(i).to_vec(),
        cfg.clamp_negative,
    )
}

/// Minimum and maximum over every series value in the table.
pub fn global_range(nodes: &NodeTable) -> (f64, f64) {
    (0..nodes.len())
        .flat_map(|i| nodes.series(i).iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Histogram (shared bin edges across nodes) and exponential fit per node.
///
/// When every value in the table is identical the histogram degenerates to
/// one bin and each node gets the constant fit `(count, 0)`.
pub fn fit_heuristics(nodes: &NodeTable, cfg: &KernelConfig) -> Result<Vec<HeuristicFit>> {
    let (lo, hi) = global_range(nodes);
    let opts = FitOptions {
        refine: cfg.refine_fit,
    };
    (0..nodes.len())
        .map(|i| {
            let h = histogram(nodes.series(i), cfg.bins, lo, hi)?;
            let (alpha, beta, residual) = if h.degenerate {
                (h.heights[0], 0.0, 0.0)
            } else {
                let f = fit_exponential_with(&h.centers, &h.heights, opts).map_err(|e| {
                    graph_err(
                        GraphKind::Heuristic,
                        format!("fit failed for node {}: {e}", nodes.ids()[i]),
                    )
                })?;
                (f.alpha, f.beta, f.residual)
            };
            if !beta.is_finite() || !alpha.is_finite() {
                return Err(graph_err(
                    GraphKind::Heuristic,
                    format!("non-finite fit for node {}", nodes.ids()[i]),
                ));
            }
            Ok(HeuristicFit {
                alpha,
                beta,
                edges: h.edges,
                counts: h.heights,
                residual,
            })
        })
        .collect()
}

/// Gaussian kernel over distances between the nodes' value distributions.
pub fn build_heuristic_graph(nodes: &NodeTable, cfg: &KernelConfig) -> Result<WeightMatrix> {
    let fits = fit_heuristics(nodes, cfg)?;
    let n = nodes.len();
    let probs: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| {
            let total: f64 = f.counts.iter().sum();
            f.counts.iter().map(|c| c / total).collect()
        })
        .collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = match cfg.heuristic_mode {
                HeuristicMode::EuclideanParams => {
                    (fits[i].alpha - fits[j].alpha).hypot(fits[i].beta - fits[j].beta)
                }
                HeuristicMode::KlDivergence => symmetric_kl(&probs[i], &probs[j])
                    .map_err(|e| graph_err(GraphKind::Heuristic, e.to_string()))?,
            };
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let sigma2 = cfg.sigma_h2.unwrap_or_else(|| pairwise_bandwidth(n, &dist));
    let w = symmetric_from(n, |i, j| {
        let d = dist[i * n + j];
        Ok((-(d * d) / sigma2).exp())
    })?;
    WeightMatrix::new(GraphKind::Heuristic, n, w)
}

/// Builds every graph enabled in `mask`, in the fixed order.
pub fn assemble_graph_set(nodes: &NodeTable, cfg: &KernelConfig, mask: GraphMask) -> Result<GraphSet> {
    cfg.validate()?;
    nodes.validate()?;
    let mut out = Vec::with_capacity(mask.count());
    for kind in mask.kinds() {
        let m = match kind {
            GraphKind::Distance => build_distance_graph(nodes, cfg),
            GraphKind::Neighbor => build_neighbor_graph(nodes),
            GraphKind::Functionality => build_functionality_graph(nodes, cfg),
            GraphKind::Heuristic => build_heuristic_graph(nodes, cfg),
            GraphKind::Temporal => build_temporal_graph(nodes, cfg),
            GraphKind::Fused => unreachable!("mask never contains the fused kind"),
        }
        .map_err(|e| match e {
            e @ Error::Graph { .. } => e,
            other => graph_err(kind, other.to_string()),
        })?;
        m.check_invariants()?;
        out.push(m);
    }
    GraphSet::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::NodeRecord;

    fn node(id: &str, pos: (f64, f64), nbrs: &[&str], f: &[f64], s: &[f64]) -> NodeRecord {
        NodeRecord {
            id: id.into(),
            position: Some(pos),
            neighbors: nbrs.iter().map(|x| x.to_string()).collect(),
            functions: f.to_vec(),
            series: s.to_vec(),
        }
    }

    fn path3() -> NodeTable {
        NodeTable::new(vec![
            node("1", (0.0, 0.0), &["2"], &[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0, 3.0]),
            node("2", (3.0, 4.0), &["1", "3"], &[1.0, 2.0, 4.0], &[0.0, 1.0, 1.0, 3.0]),
            node("3", (3.0, 4.0), &["2"], &[3.0, 2.0, 1.0], &[3.0, 2.0, 1.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn distance_graph_examples() {
        let t = path3();
        let cfg = KernelConfig {
            sigma_d2: Some(25.0),
            epsilon: 0.1,
            ..KernelConfig::default()
        };
        let w = build_distance_graph(&t, &cfg).unwrap();
        assert_eq!(w.get(0, 0), 0.0);
        // coincident distinct nodes
        assert_eq!(w.get(1, 2), 1.0);
        // d = 5 = sigma
        assert!((w.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w.get(0, 1) - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn distance_threshold_zeroes_small_weights() {
        let t = path3();
        let cfg = KernelConfig {
            sigma_d2: Some(25.0),
            epsilon: 0.5,
            ..KernelConfig::default()
        };
        let w = build_distance_graph(&t, &cfg).unwrap();
        assert_eq!(w.get(0, 1), 0.0);
        assert_eq!(w.get(1, 2), 1.0);
    }

    #[test]
    fn missing_coordinates_name_the_node() {
        let mut recs = path3().records();
        recs[2].position = None;
        let t = NodeTable::new(recs).unwrap();
        let err = build_distance_graph(&t, &KernelConfig::default()).unwrap_err().to_string();
        assert!(err.contains("node 3"), "{err}");
    }

    #[test]
    fn neighbor_graph_of_path() {
        let w = build_neighbor_graph(&path3()).unwrap();
        assert_eq!(w.data(), &[0., 1., 0., 1., 0., 1., 0., 1., 0.]);
    }

    #[test]
    fn neighbor_graph_rejects_asymmetry() {
        let mut recs = path3().records();
        recs[2].neighbors.clear();
        let t = NodeTable::new(recs).unwrap();
        assert!(build_neighbor_graph(&t).is_err());
    }

    #[test]
    fn functionality_graph_examples() {
        let w = build_functionality_graph(&path3(), &KernelConfig::default()).unwrap();
        assert_eq!(w.get(1, 1), 0.0);
        assert!((w.get(0, 1) - 0.98198).abs() < 1e-5);
        assert!((w.get(0, 2) + 1.0).abs() < 1e-12);
        let clamped = KernelConfig {
            clamp_negative: true,
            ..KernelConfig::default()
        };
        let w = build_functionality_graph(&path3(), &clamped).unwrap();
        assert_eq!(w.get(0, 2), 0.0);
    }

    #[test]
    fn temporal_graph_sign_examples() {
        let w = build_temporal_graph(&path3(), &KernelConfig::default()).unwrap();
        assert!((w.get(0, 2) + 1.0).abs() < 1e-12);
        let mut recs = path3().records();
        recs[1].series = recs[0].series.clone();
        let w = build_temporal_graph(&NodeTable::new(recs).unwrap(), &KernelConfig::default()).unwrap();
        assert!((w.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn temporal_graph_orthogonal_sines() {
        let period = 48;
        let p = period * 10;
        let s1: Vec<f64> = (0..p)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin())
            .collect();
        let s2: Vec<f64> = (0..p)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / period as f64).cos())
            .collect();
        let t = NodeTable::new(vec![
            node("a", (0.0, 0.0), &[], &[1.0], &s1),
            node("b", (0.0, 0.0), &[], &[1.0], &s2),
        ])
        .unwrap();
        let w = build_temporal_graph(&t, &KernelConfig::default()).unwrap();
        assert!(w.get(0, 1).abs() < 1e-6);
    }

    #[test]
    fn heuristic_identical_histograms_give_one() {
        let s = [0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 0.0, 1.0];
        let t = NodeTable::new(vec![
            node("a", (0.0, 0.0), &[], &[1.0], &s),
            node("b", (0.0, 0.0), &[], &[1.0], &s),
        ])
        .unwrap();
        for mode in [HeuristicMode::EuclideanParams, HeuristicMode::KlDivergence] {
            let cfg = KernelConfig {
                bins: 3,
                heuristic_mode: mode,
                ..KernelConfig::default()
            };
            let w = build_heuristic_graph(&t, &cfg).unwrap();
            assert_eq!(w.get(0, 1), 1.0);
            assert_eq!(w.get(0, 0), 0.0);
        }
    }

    #[test]
    fn heuristic_fit_failure_names_node() {
        // node b only ever hits a single bin
        let t = NodeTable::new(vec![
            node("a", (0.0, 0.0), &[], &[1.0], &[0.0, 1.0, 2.0, 3.0]),
            node("b", (0.0, 0.0), &[], &[1.0], &[0.0, 0.0, 0.0, 0.0]),
        ])
        .unwrap();
        let cfg = KernelConfig {
            bins: 4,
            ..KernelConfig::default()
        };
        let err = build_heuristic_graph(&t, &cfg).unwrap_err().to_string();
        assert!(err.contains("node b"), "{err}");
    }

    #[test]
    fn heuristic_degenerate_range_uses_constant_fit() {
        let t = NodeTable::new(vec![
            node("a", (0.0, 0.0), &[], &[1.0], &[2.0, 2.0, 2.0]),
            node("b", (0.0, 0.0), &[], &[1.0], &[2.0, 2.0, 2.0]),
        ])
        .unwrap();
        let fits = fit_heuristics(&t, &KernelConfig::default()).unwrap();
        assert_eq!((fits[0].alpha, fits[0].beta), (3.0, 0.0));
        let w = build_heuristic_graph(&t, &KernelConfig::default()).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
    }

    #[test]
    fn assemble_respects_mask_and_order() {
        let t = path3();
        let cfg = KernelConfig {
            bins: 2,
            ..KernelConfig::default()
        };
        let full = assemble_graph_set(&t, &cfg, GraphMask::all()).unwrap();
        assert_eq!(full.kinds(), GraphKind::BUILT.to_vec());
        let no_h = assemble_graph_set(&t, &cfg, GraphMask::all().without(GraphKind::Heuristic)).unwrap();
        assert_eq!(
            no_h.kinds(),
            vec![
                GraphKind::Distance,
                GraphKind::Neighbor,
                GraphKind::Functionality,
                GraphKind::Temporal
            ]
        );
    }

    #[test]
    fn assemble_names_failing_graph() {
        let mut recs = path3().records();
        recs[0].position = None;
        let t = NodeTable::new(recs).unwrap();
        let cfg = KernelConfig {
            bins: 2,
            ..KernelConfig::default()
        };
        let err = assemble_graph_set(&t, &cfg, GraphMask::all()).unwrap_err();
        assert!(matches!(err, Error::Graph { graph: "distance", .. }), "{err}");
    }
}
