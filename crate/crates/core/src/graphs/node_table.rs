use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One node as supplied by a loader or generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    /// Planar coordinates in meters.
    pub position: Option<(f64, f64)>,
    pub neighbors: Vec<String>,
    /// Function (point-of-interest) counts, one per function category.
    pub functions: Vec<f64>,
    /// Training time series at a fixed time step.
    pub series: Vec<f64>,
}

/// Immutable per-node inputs for graph construction.
///
/// Construction checks identifier uniqueness, neighbor references, self
/// loops and vector lengths. Adjacency symmetry is checked separately by
/// [`NodeTable::validate`], which loaders call before handing a table out.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTable {
    ids: Vec<String>,
    positions: Vec<Option<(f64, f64)>>,
    neighbors: Vec<BTreeSet<usize>>,
    functions: Vec<Vec<f64>>,
    series: Vec<Vec<f64>>,
}

impl NodeTable {
    pub fn new(records: Vec<NodeRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NodeTable("no nodes".into()));
        }
        let mut index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.id.is_empty() || r.id.contains(',') || r.id.chars().any(char::is_whitespace) {
                return Err(Error::NodeTable(format!(
                    "node id {:?} must be non-empty without commas or whitespace",
                    r.id
                )));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::NodeTable(format!("duplicate node id {}", r.id)));
            }
        }
        let k = records[0].functions.len();
        let p = records[0].series.len();
        if k < 1 {
            return Err(Error::NodeTable("function vectors must have K >= 1".into()));
        }
        if p < 2 {
            return Err(Error::NodeTable("series must have length P >= 2".into()));
        }

        let mut neighbors = Vec::with_capacity(records.len());
        for r in &records {
            if r.functions.len() != k {
                return Err(Error::NodeTable(format!(
                    "node {}: {} function counts, expected {k}",
                    r.id,
                    r.functions.len()
                )));
            }
            if r.functions.iter().any(|&f| !f.is_finite() || f < 0.0) {
                return Err(Error::NodeTable(format!(
                    "node {}: function counts must be finite and nonnegative",
                    r.id
                )));
            }
            if r.series.len() != p {
                return Err(Error::NodeTable(format!(
                    "node {}: series length {}, expected {p}",
                    r.id,
                    r.series.len()
                )));
            }
            if r.series.iter().any(|v| !v.is_finite()) {
                return Err(Error::NodeTable(format!("node {}: non-finite series value", r.id)));
            }
            if let Some((x, y)) = r.position {
                if !x.is_finite() || !y.is_finite() {
                    return Err(Error::NodeTable(format!("node {}: non-finite coordinates", r.id)));
                }
            }
            let mut set = BTreeSet::new();
            for nb in &r.neighbors {
                let &j = index.get(nb).ok_or_else(|| {
                    Error::NodeTable(format!("node {}: unknown neighbor {nb}", r.id))
                })?;
                if nb == &r.id {
                    return Err(Error::NodeTable(format!("node {}: self loop", r.id)));
                }
                set.insert(j);
            }
            neighbors.push(set);
        }

        let mut table = Self {
            ids: Vec::with_capacity(records.len()),
            positions: Vec::with_capacity(records.len()),
            neighbors,
            functions: Vec::with_capacity(records.len()),
            series: Vec::with_capacity(records.len()),
        };
        for r in records {
            table.ids.push(r.id);
            table.positions.push(r.position);
            table.functions.push(r.functions);
            table.series.push(r.series);
        }
        Ok(table)
    }

    /// Checks that adjacency is symmetric.
    pub fn validate(&self) -> Result<()> {
        match self.asymmetric_pair() {
            Some((i, j)) => Err(Error::NodeTable(format!(
                "adjacency is not symmetric: {} lists {} but not vice versa",
                self.ids[i], self.ids[j]
            ))),
            None => Ok(()),
        }
    }

    pub(crate) fn asymmetric_pair(&self) -> Option<(usize, usize)> {
        for (i, set) in self.neighbors.iter().enumerate() {
            for &j in set {
                if !self.neighbors[j].contains(&i) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, i: usize) -> Option<(f64, f64)> {
        self.positions[i]
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i]
    }

    pub fn functions(&self, i: usize) -> &[f64] {
        &self.functions[i]
    }

    pub fn series(&self, i: usize) -> &[f64] {
        &self.series[i]
    }

    pub fn function_count(&self) -> usize {
        self.functions[0].len()
    }

    pub fn series_len(&self) -> usize {
        self.series[0].len()
    }

    /// Records in table order.
    pub fn records(&self) -> Vec<NodeRecord> {
        (0..self.len())
            .map(|i| NodeRecord {
                id: self.ids[i].clone(),
                position: self.positions[i],
                neighbors: self.neighbors[i].iter().map(|&j| self.ids[j].clone()).collect(),
                functions: self.functions[i].clone(),
                series: self.series[i].clone(),
            })
            .collect()
    }

    /// Copy of the table keeping only the first `len` series values of every
    /// node (the training portion).
    pub fn with_series_prefix(&self, len: usize) -> Result<Self> {
        if len < 2 || len > self.series_len() {
            return Err(Error::NodeTable(format!(
                "series prefix {len} outside 2..={}",
                self.series_len()
            )));
        }
        let mut out = self.clone();
        for s in &mut out.series {
            s.truncate(len);
        }
        Ok(out)
    }

    /// Replaces every series (same node order, common length >= 2).
    pub fn with_series(&self, series: Vec<Vec<f64>>) -> Result<Self> {
        let mut records = self.records();
        if series.len() != records.len() {
            return Err(Error::NodeTable("series count does not match node count".into()));
        }
        for (r, s) in records.iter_mut().zip(series) {
            r.series = s;
        }
        Self::new(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, nbrs: &[&str]) -> NodeRecord {
        NodeRecord {
            id: id.into(),
            position: Some((0.0, 0.0)),
            neighbors: nbrs.iter().map(|s| s.to_string()).collect(),
            functions: vec![1.0, 2.0],
            series: vec![0.0, 1.0, 2.0],
        }
    }

    #[test]
    fn accepts_symmetric_path() {
        let t = NodeTable::new(vec![
            record("a", &["b"]),
            record("b", &["a", "c"]),
            record("c", &["b"]),
        ])
        .unwrap();
        t.validate().unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.neighbors(1).contains(&2));
    }

    #[test]
    fn rejects_duplicates_self_loops_and_unknowns() {
        assert!(NodeTable::new(vec![record("a", &[]), record("a", &[])]).is_err());
        assert!(NodeTable::new(vec![record("a", &["a"])]).is_err());
        assert!(NodeTable::new(vec![record("a", &["zz"])]).is_err());
    }

    #[test]
    fn asymmetric_adjacency_fails_validation() {
        let t = NodeTable::new(vec![record("a", &["b"]), record("b", &[])]).unwrap();
        let err = t.validate().unwrap_err().to_string();
        assert!(err.contains("not symmetric"), "{err}");
    }

    #[test]
    fn ragged_lengths_rejected() {
        let mut r = record("b", &[]);
        r.series.push(3.0);
        assert!(NodeTable::new(vec![record("a", &[]), r]).is_err());
        let mut r = record("b", &[]);
        r.functions.pop();
        assert!(NodeTable::new(vec![record("a", &[]), r]).is_err());
    }

    #[test]
    fn series_prefix() {
        let t = NodeTable::new(vec![record("a", &[])]).unwrap();
        let p = t.with_series_prefix(2).unwrap();
        assert_eq!(p.series(0), &[0.0, 1.0]);
        assert!(t.with_series_prefix(1).is_err());
    }
}
