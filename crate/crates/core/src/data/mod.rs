//! Dataset loading, saving, scaling and synthetic generation.

mod files;
mod scale;
mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::graphs::NodeTable;

pub use files::{read_node_table, write_node_table, DatasetFiles, FUNCTIONS_FILE, NODES_FILE, SERIES_FILE};
pub use scale::Scaler;
pub use synthetic::{generate_synthetic, GroundTruth, Lambdas, SyntheticSpec};

/// File written next to a synthetic dataset recording how it was made.
pub const PROVENANCE_FILE: &str = "provenance.json";

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Files(DatasetFiles),
    Synthetic {
        spec: SyntheticSpec,
        truth: GroundTruth,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub nodes: NodeTable,
    pub provenance: Provenance,
}

impl DatasetBundle {
    /// Series as a time-major `[P, N]` array.
    pub fn series_matrix(&self) -> Array {
        series_matrix(&self.nodes)
    }
}

pub fn series_matrix(nodes: &NodeTable) -> Array {
    let (n, p) = (nodes.len(), nodes.series_len());
    let mut data = vec![0.0; n * p];
    for i in 0..n {
        for (t, &v) in nodes.series(i).iter().enumerate() {
            data[t * n + i] = v;
        }
    }
    Array::new(vec![p, n], data).expect("rectangular series")
}

pub fn load_dataset(files: &DatasetFiles) -> Result<DatasetBundle> {
    Ok(DatasetBundle {
        nodes: read_node_table(files)?,
        provenance: Provenance::Files(files.clone()),
    })
}

/// Writes the three CSV files into `dir`, plus the provenance sidecar for
/// synthetic bundles.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<DatasetFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = DatasetFiles::in_dir(dir);
    write_node_table(&bundle.nodes, &files)?;
    if let Provenance::Synthetic { .. } = bundle.provenance {
        let path = dir.join(PROVENANCE_FILE);
        let text = serde_json::to_string_pretty(&bundle.provenance)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(files)
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    let (nodes, truth) = generate_synthetic(spec)?;
    Ok(DatasetBundle {
        nodes,
        provenance: Provenance::Synthetic {
            spec: spec.clone(),
            truth,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_roundtrip_through_files() {
        let spec = SyntheticSpec {
            nodes: 5,
            length: 60,
            ..SyntheticSpec::default()
        };
        let b = synthesize(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = save_dataset(&b, dir.path()).unwrap();
        let back = load_dataset(&files).unwrap();
        assert_eq!(back.nodes, b.nodes);
        let text = fs::read_to_string(dir.path().join(PROVENANCE_FILE)).unwrap();
        assert!(text.contains("\"neighbor\""));
        let prov: Provenance = serde_json::from_str(&text).unwrap();
        assert_eq!(prov, b.provenance);
    }

    #[test]
    fn series_matrix_is_time_major() {
        let spec = SyntheticSpec {
            nodes: 3,
            length: 10,
            ..SyntheticSpec::default()
        };
        let b = synthesize(&spec).unwrap();
        let m = b.series_matrix();
        assert_eq!(m.shape(), &[10, 3]);
        assert_eq!(m.get(&[4, 2]), b.nodes.series(2)[4]);
    }
}
