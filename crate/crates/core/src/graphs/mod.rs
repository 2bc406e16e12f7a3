//! Construction of the five node-relation weight matrices.
//!
//! Each builder is a pure function of a [`NodeTable`]. Every matrix is
//! symmetric with a zero diagonal:
//!
//! | kind          | entry (i != j)                                       |
//! |---------------|------------------------------------------------------|
//! | distance      | `exp(-d²/σ_D²)` when at least `ε`, else 0            |
//! | neighbor      | 1 when adjacent, else 0                              |
//! | functionality | Pearson correlation of function-count vectors        |
//! | heuristic     | `exp(-d_H²/σ_H²)`, `d_H` between histogram shapes    |
//! | temporal      | Pearson correlation of training series               |

mod builders;
mod export;
mod expfit;
mod node_table;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builders::{
    assemble_graph_set, build_distance_graph, build_functionality_graph, build_heuristic_graph,
    build_neighbor_graph, build_temporal_graph, fit_heuristics, global_range, HeuristicFit,
};
pub use export::{parse_matrix, read_matrix, render_matrix, write_matrix, MatrixFile};
pub use expfit::{fit_exponential, fit_exponential_with, ExpFit, FitOptions};
pub use node_table::{NodeRecord, NodeTable};
pub use stats::{histogram, kl_divergence, pearson, symmetric_kl, Histogram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Distance,
    Neighbor,
    Functionality,
    Heuristic,
    Temporal,
    /// Output of the fusion module; never part of a [`GraphSet`].
    Fused,
}

impl GraphKind {
    /// The five constructed graphs in their fixed order.
    pub const BUILT: [GraphKind; 5] = [
        GraphKind::Distance,
        GraphKind::Neighbor,
        GraphKind::Functionality,
        GraphKind::Heuristic,
        GraphKind::Temporal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Distance => "distance",
            GraphKind::Neighbor => "neighbor",
            GraphKind::Functionality => "functionality",
            GraphKind::Heuristic => "heuristic",
            GraphKind::Temporal => "temporal",
            GraphKind::Fused => "fused",
        }
    }

    pub fn letter(self) -> char {
        match self {
            GraphKind::Distance => 'D',
            GraphKind::Neighbor => 'N',
            GraphKind::Functionality => 'F',
            GraphKind::Heuristic => 'H',
            GraphKind::Temporal => 'T',
            GraphKind::Fused => '*',
        }
    }

    fn position(self) -> usize {
        Self::BUILT.iter().position(|&k| k == self).unwrap_or(usize::MAX)
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let all = GraphKind::BUILT.iter().chain(std::iter::once(&GraphKind::Fused));
        for &k in all {
            if t.eq_ignore_ascii_case(k.name()) || (t.len() == 1 && t.starts_with(k.letter())) {
                return Ok(k);
            }
        }
        Err(Error::Config(format!("unknown graph kind {s:?}")))
    }
}

/// Dense `N x N` weight matrix of one graph kind.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    kind: GraphKind,
    n: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(kind: GraphKind, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Graph {
                graph: kind.name(),
                msg: format!("expected {} entries, got {}", n * n, data.len()),
            });
        }
        Ok(Self { kind, n, data })
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0.0)
    }

    /// Fraction of off-diagonal entries that are nonzero.
    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let nz = (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j) != 0.0)
            .count();
        nz as f64 / (self.n * (self.n - 1)) as f64
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Checks the symmetry, zero-diagonal and value-range invariants for the
    /// matrix kind.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Error::Graph {
            graph: self.kind.name(),
            msg,
        };
        if !self.is_symmetric() {
            return Err(fail("matrix is not symmetric".into()));
        }
        if !self.has_zero_diagonal() {
            return Err(fail("diagonal is not zero".into()));
        }
        let ok = |v: f64| match self.kind {
            GraphKind::Distance | GraphKind::Heuristic => (0.0..=1.0).contains(&v),
            GraphKind::Neighbor => v == 0.0 || v == 1.0,
            GraphKind::Functionality | GraphKind::Temporal => (-1.0..=1.0).contains(&v),
            GraphKind::Fused => v.is_finite(),
        };
        if let Some(v) = self.data.iter().find(|&&v| !ok(v)) {
            return Err(fail(format!("entry {v} outside the allowed range")));
        }
        Ok(())
    }
}

/// Subset of the five graph kinds, always iterated in the fixed order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMask([bool; 5]);

impl GraphMask {
    pub fn all() -> Self {
        Self([true; 5])
    }

    pub fn only(kinds: &[GraphKind]) -> Self {
        let mut m = [false; 5];
        for k in kinds {
            if k.position() < 5 {
                m[k.position()] = true;
            }
        }
        Self(m)
    }

    pub fn without(self, kind: GraphKind) -> Self {
        let mut m = self.0;
        if kind.position() < 5 {
            m[kind.position()] = false;
        }
        Self(m)
    }

    pub fn contains(&self, kind: GraphKind) -> bool {
        kind.position() < 5 && self.0[kind.position()]
    }

    pub fn kinds(&self) -> Vec<GraphKind> {
        GraphKind::BUILT
            .iter()
            .copied()
            .filter(|k| self.contains(*k))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

impl Default for GraphMask {
    fn default() -> Self {
        Self::all()
    }
}

impl fmt::Display for GraphMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letters: Vec<String> = self.kinds().iter().map(|k| k.letter().to_string()).collect();
        f.write_str(&letters.join(","))
    }
}

impl FromStr for GraphMask {
    type Err = Error;

    /// Parses a comma-separated list such as `D,N,T` or `distance,temporal`.
    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(GraphKind::from_str)
            .collect::<Result<Vec<_>>>()?;
        if kinds.contains(&GraphKind::Fused) {
            return Err(Error::Config("the fused graph cannot be masked in".into()));
        }
        let mask = Self::only(&kinds);
        if mask.count() == 0 {
            return Err(Error::Config("graph mask selects no graphs".into()));
        }
        Ok(mask)
    }
}

/// How the heuristic graph measures the distance between two nodes'
/// value distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicMode {
    /// Euclidean distance between fitted `(alpha, beta)` pairs.
    EuclideanParams,
    /// Symmetrised KL divergence between normalised histograms.
    KlDivergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Distance kernel bandwidth σ_D². `None` uses the variance of all
    /// pairwise distances.
    pub sigma_d2: Option<f64>,
    /// Sparsity threshold on distance weights.
    pub epsilon: f64,
    /// Heuristic kernel bandwidth σ_H². `None` uses the variance of all
    /// pairwise heuristic distances.
    pub sigma_h2: Option<f64>,
    pub bins: usize,
    pub heuristic_mode: HeuristicMode,
    pub refine_fit: bool,
    /// Clamp Pearson-based graphs to `[0, 1]`.
    pub clamp_negative: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma_d2: None,
            epsilon: 0.1,
            sigma_h2: None,
            bins: 20,
            heuristic_mode: HeuristicMode::EuclideanParams,
            refine_fit: true,
            clamp_negative: false,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma_d2 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("sigma_d2 must be positive, got {s}")));
            }
        }
        if let Some(s) = self.sigma_h2 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("sigma_h2 must be positive, got {s}")));
            }
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must be in [0, 1), got {}", self.epsilon)));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!("histogram bins must be >= 2, got {}", self.bins)));
        }
        Ok(())
    }
}

/// Ordered collection of weight matrices over the same node set.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSet {
    matrices: Vec<WeightMatrix>,
}

impl GraphSet {
    /// Matrices must share `N` and appear in the fixed kind order without
    /// repeats.
    pub fn new(matrices: Vec<WeightMatrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::Config("empty graph set".into()))?;
        let n = first.n();
        for w in matrices.windows(2) {
            if w[0].kind().position() >= w[1].kind().position() {
                return Err(Error::Config(format!(
                    "graph set out of order: {} before {}",
                    w[0].kind(),
                    w[1].kind()
                )));
            }
        }
        if let Some(m) = matrices.iter().find(|m| m.n() != n) {
            return Err(Error::Graph {
                graph: m.kind().name(),
                msg: format!("dimension {} differs from {n}", m.n()),
            });
        }
        Ok(Self { matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn n(&self) -> usize {
        self.matrices[0].n()
    }

    pub fn matrices(&self) -> &[WeightMatrix] {
        &self.matrices
    }

    pub fn kinds(&self) -> Vec<GraphKind> {
        self.matrices.iter().map(WeightMatrix::kind).collect()
    }

    pub fn get(&self, kind: GraphKind) -> Option<&WeightMatrix> {
        self.matrices.iter().find(|m| m.kind() == kind)
    }
}
