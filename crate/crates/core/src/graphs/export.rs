//! Plain-text matrix files.
//!
//! ```text
//! # kind=distance n=3 order=a,b,c
//! 0,0.36787944117144233,0
//! 0.36787944117144233,0,1
//! 0,1,0
//! ```
//!
//! Values are written with Rust's shortest round-trip `f64` formatting, so
//! reading a file back reproduces every entry bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graphs::{GraphKind, WeightMatrix};

/// A matrix file's contents.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub matrix: WeightMatrix,
    pub order: Vec<String>,
}

pub fn render_matrix(matrix: &WeightMatrix, order: &[String]) -> Result<String> {
    if order.len() != matrix.n() {
        return Err(Error::invalid(
            "write_matrix",
            format!("{} ids for a {}-node matrix", order.len(), matrix.n()),
        ));
    }
    let mut out = String::new();
    writeln!(
        out,
        "# kind={} n={} order={}",
        matrix.kind().name(),
        matrix.n(),
        order.join(",")
    )
    .expect("write to string");
    for i in 0..matrix.n() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(",")).expect("write to string");
    }
    Ok(out)
}

pub fn write_matrix(path: &Path, matrix: &WeightMatrix, order: &[String]) -> Result<()> {
    let text = render_matrix(matrix, order)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, &path.display().to_string())
}

pub fn parse_matrix(text: &str, file: &str) -> Result<MatrixFile> {
    let perr = |line: u64, msg: String| Error::Parse {
        file: file.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| perr(1, "empty file".into()))?
        .strip_prefix("# ")
        .ok_or_else(|| perr(1, "missing '# ' header".into()))?;

    let (mut kind, mut n, mut order) = (None, None, None);
    for field in header.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| perr(1, format!("malformed header field {field:?}")))?;
        match k {
            "kind" => kind = Some(v.parse::<GraphKind>().map_err(|e| perr(1, e.to_string()))?),
            "n" => n = Some(v.parse::<usize>().map_err(|e| perr(1, format!("n: {e}")))?),
            "order" => order = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
            _ => return Err(perr(1, format!("unknown header field {k:?}"))),
        }
    }
    let kind = kind.ok_or_else(|| perr(1, "header lacks kind".into()))?;
    let n = n.ok_or_else(|| perr(1, "header lacks n".into()))?;
    let order = order.ok_or_else(|| perr(1, "header lacks order".into()))?;
    if order.len() != n {
        return Err(perr(1, format!("order lists {} ids, n={n}", order.len())));
    }

    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (idx, line) in lines.enumerate() {
        let lineno = idx as u64 + 2;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| perr(lineno, format!("bad value: {e}")))?;
        if vals.len() != n {
            return Err(perr(lineno, format!("expected {n} values, got {}", vals.len())));
        }
        data.extend(vals);
        rows += 1;
    }
    if rows != n {
        return Err(perr(rows as u64 + 1, format!("expected {n} rows, got {rows}")));
    }
    Ok(MatrixFile {
        matrix: WeightMatrix::new(kind, n, data)?,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let vals = vec![0.0, 0.1 + 0.2, std::f64::consts::PI, -1e-300];
        let m = WeightMatrix::new(GraphKind::Temporal, 2, vals).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let text = render_matrix(&m, &ids).unwrap();
        assert!(text.starts_with("# kind=temporal n=2 order=a,b\n"));
        let back = parse_matrix(&text, "mem").unwrap();
        assert_eq!(back.matrix, m);
        assert_eq!(back.order, ids);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let text = "# kind=fused n=2 order=a,b\n0,1\n1\n";
        let err = parse_matrix(text, "w.txt").unwrap_err().to_string();
        assert!(err.starts_with("w.txt:3:"), "{err}");
    }
}
