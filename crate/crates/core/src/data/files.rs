//! CSV node, function and series files.
//!
//! ```text
//! nodes.csv      id,x,y,neighbors        neighbors separated by ';'
//! functions.csv  id,f_1,...,f_K
//! series.csv     id,t_1,...,t_P
//! ```
//!
//! Coordinates may be left empty (both at once) for nodes without a
//! position. Rows of the function and series files may come in any order
//! but must cover exactly the node ids.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord};

use crate::error::{Error, Result};
use crate::graphs::{NodeRecord, NodeTable};

pub const NODES_FILE: &str = "nodes.csv";
pub const FUNCTIONS_FILE: &str = "functions.csv";
pub const SERIES_FILE: &str = "series.csv";

struct Rows {
    file: String,
    header: StringRecord,
    rows: Vec<(u64, StringRecord)>,
}

fn read_rows(path: &Path) -> Result<Rows> {
    let file = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let parse_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        Error::Parse {
            file: file.clone(),
            line,
            msg: e.to_string(),
        }
    };
    let header = rdr.headers().map_err(parse_err)?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec));
    }
    Ok(Rows { file, header, rows })
}

impl Rows {
    fn err(&self, line: u64, msg: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn number(&self, line: u64, field: &str, column: &str) -> Result<f64> {
        let v: f64 = field
            .parse()
            .map_err(|_| self.err(line, format!("{column}: {field:?} is not a number")))?;
        if !v.is_finite() {
            return Err(self.err(line, format!("{column}: non-finite value")));
        }
        Ok(v)
    }

    /// `id, v_1..v_W` rows keyed by id, checked against the known ids.
    fn vectors(&self, prefix: &str, ids: &HashMap<String, usize>) -> Result<Vec<Vec<f64>>> {
        let width = self.header.len().saturating_sub(1);
        if self.header.get(0) != Some("id") || width == 0 {
            return Err(self.err(1, format!("header must be id,{prefix}1,...")));
        }
        for (c, name) in self.header.iter().enumerate().skip(1) {
            if name != format!("{prefix}{c}") {
                return Err(self.err(1, format!("column {} should be {prefix}{c}, found {name:?}", c + 1)));
            }
        }
        let mut out: Vec<Option<Vec<f64>>> = vec![None; ids.len()];
        for (line, rec) in &self.rows {
            if rec.len() != width + 1 {
                return Err(self.err(*line, format!("expected {} columns, found {}", width + 1, rec.len())));
            }
            let id = &rec[0];
            let &i = ids
                .get(id)
                .ok_or_else(|| self.err(*line, format!("unknown node id {id:?}")))?;
            if out[i].is_some() {
                return Err(self.err(*line, format!("duplicate row for node {id:?}")));
            }
            let vals = rec
                .iter()
                .enumerate()
                .skip(1)
                .map(|(c, f)| self.number(*line, f, &self.header[c]))
                .collect::<Result<Vec<_>>>()?;
            out[i] = Some(vals);
        }
        let mut missing = ids.iter().filter(|(_, &i)| out[i].is_none()).map(|(id, _)| id.as_str()).collect::<Vec<_>>();
        if !missing.is_empty() {
            missing.sort_unstable();
            return Err(self.err(0, format!("no row for node(s) {}", missing.join(", "))));
        }
        Ok(out.into_iter().map(|v| v.expect("checked")).collect())
    }
}

/// Paths of the three dataset files.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DatasetFiles {
    pub nodes: PathBuf,
    pub functions: PathBuf,
    pub series: PathBuf,
}

impl DatasetFiles {
    /// The standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            nodes: dir.join(NODES_FILE),
            functions: dir.join(FUNCTIONS_FILE),
            series: dir.join(SERIES_FILE),
        }
    }
}

/// Reads and cross-checks the three files.
pub fn read_node_table(files: &DatasetFiles) -> Result<NodeTable> {
    let nodes = read_rows(&files.nodes)?;
    let expected = ["id", "x", "y", "neighbors"];
    if nodes.header.iter().ne(expected.iter().copied()) {
        return Err(nodes.err(1, "header must be id,x,y,neighbors"));
    }
    let mut ids = HashMap::new();
    let mut partial = Vec::with_capacity(nodes.rows.len());
    for (line, rec) in &nodes.rows {
        if rec.len() != 4 {
            return Err(nodes.err(*line, format!("expected 4 columns, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() || id.contains(';') {
            return Err(nodes.err(*line, format!("invalid node id {id:?}")));
        }
        if ids.insert(id.clone(), partial.len()).is_some() {
            return Err(nodes.err(*line, format!("duplicate node id {id:?}")));
        }
        let position = match (&rec[1], &rec[2]) {
            ("", "") => None,
            (x, y) => Some((nodes.number(*line, x, "x")?, nodes.number(*line, y, "y")?)),
        };
        let neighbors: Vec<String> = rec[3]
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        partial.push((*line, id, position, neighbors));
    }
    if partial.is_empty() {
        return Err(nodes.err(1, "no nodes"));
    }
    for (line, id, _, nbrs) in &partial {
        if let Some(nb) = nbrs.iter().find(|nb| !ids.contains_key(*nb)) {
            return Err(nodes.err(*line, format!("node {id:?} lists unknown neighbor {nb:?}")));
        }
    }

    let functions = read_rows(&files.functions)?.vectors("f_", &ids)?;
    let series = read_rows(&files.series)?.vectors("t_", &ids)?;

    let records = partial
        .into_iter()
        .zip(functions)
        .zip(series)
        .map(|(((_, id, position, neighbors), functions), series)| NodeRecord {
            id,
            position,
            neighbors,
            functions,
            series,
        })
        .collect();
    let table = NodeTable::new(records)?;
    table.validate()?;
    Ok(table)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the three files; values use shortest round-trip formatting.
pub fn write_node_table(table: &NodeTable, files: &DatasetFiles) -> Result<()> {
    if let Some(id) = table.ids().iter().find(|id| id.contains(';')) {
        return Err(Error::NodeTable(format!("node id {id:?} contains ';'")));
    }
    let mut nodes = String::from("id,x,y,neighbors\n");
    let mut functions = String::from("id");
    let mut series = String::from("id");
    for c in 1..=table.function_count() {
        functions.push_str(&format!(",f_{c}"));
    }
    for c in 1..=table.series_len() {
        series.push_str(&format!(",t_{c}"));
    }
    functions.push('\n');
    series.push('\n');
    for r in table.records() {
        let (x, y) = r.position.map_or((String::new(), String::new()), |(x, y)| (x.to_string(), y.to_string()));
        nodes.push_str(&format!("{},{x},{y},{}\n", r.id, r.neighbors.join(";")));
        functions.push_str(&format!("{},{}\n", r.id, join(&r.functions)));
        series.push_str(&format!("{},{}\n", r.id, join(&r.series)));
    }
    write(&files.nodes, nodes)?;
    write(&files.functions, functions)?;
    write(&files.series, series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, series: &str) -> DatasetFiles {
        fs::write(dir.join(NODES_FILE), "id,x,y,neighbors\na,0,0,b\nb,3,4,a;c\nc,,,b\n").unwrap();
        fs::write(dir.join(FUNCTIONS_FILE), "id,f_1,f_2\nc,1,0\na,2,5\nb,0,1\n").unwrap();
        fs::write(dir.join(SERIES_FILE), series).unwrap();
        DatasetFiles::in_dir(dir)
    }

    const SERIES: &str = "id,t_1,t_2,t_3\na,1,2,3\nb,0.5,0.25,1e-3\nc,3,2,1\n";

    #[test]
    fn loads_three_node_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let t = read_node_table(&fixture(dir.path(), SERIES)).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.ids(), &["a", "b", "c"]);
        assert!(t.neighbors(1).contains(&0) && t.neighbors(0).contains(&1));
        assert_eq!(t.position(2), None);
        assert_eq!(t.functions(0), &[2.0, 5.0]);
        assert_eq!(t.series(1), &[0.5, 0.25, 1e-3]);
    }

    #[test]
    fn wrong_column_count_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let files = fixture(dir.path(), "id,t_1,t_2,t_3\na,1,2,3\nb,0.5,0.25\nc,3,2,1\n");
        let err = read_node_table(&files).unwrap_err().to_string();
        assert!(err.contains("series.csv:3:"), "{err}");
        assert!(err.contains("expected 4 columns"), "{err}");
    }

    #[test]
    fn unknown_id_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let files = fixture(dir.path(), "id,t_1,t_2,t_3\na,1,2,3\nb,0.5,0.25,1\nz,3,2,1\n");
        let err = read_node_table(&files).unwrap_err().to_string();
        assert!(err.contains("series.csv:4:") && err.contains("\"z\""), "{err}");
    }

    #[test]
    fn bad_number_and_asymmetry() {
        let dir = tempfile::tempdir().unwrap();
        let files = fixture(dir.path(), "id,t_1,t_2,t_3\na,1,x,3\nb,0.5,0.25,1\nc,3,2,1\n");
        let err = read_node_table(&files).unwrap_err().to_string();
        assert!(err.contains("series.csv:2:") && err.contains("t_2"), "{err}");
        fs::write(dir.path().join(NODES_FILE), "id,x,y,neighbors\na,0,0,b\nb,3,4,\nc,,,\n").unwrap();
        fs::write(dir.path().join(SERIES_FILE), SERIES).unwrap();
        assert!(read_node_table(&files).unwrap_err().to_string().contains("not symmetric"));
    }

    #[test]
    fn save_then_load_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let t = read_node_table(&fixture(dir.path(), SERIES)).unwrap();
        let out = tempfile::tempdir().unwrap();
        let files = DatasetFiles::in_dir(out.path());
        write_node_table(&t, &files).unwrap();
        assert_eq!(read_node_table(&files).unwrap(), t);
    }
}
