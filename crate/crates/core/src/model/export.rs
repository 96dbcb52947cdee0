//! Plain-text embedding dump: `<kind> <index> <v_0> ... <v_{d-1}>`, one node
//! per line, values with 17 significant digits so they parse back exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::NodeKind;
use crate::numerics::Matrix;

const KINDS: [NodeKind; 3] = [NodeKind::User, NodeKind::Group, NodeKind::Item];

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    for kind in KINDS {
        let m = table.kind(kind);
        for i in 0..m.rows() {
            write!(out, "{} {i}", kind.as_str()).unwrap();
            for v in m.row(i) {
                write!(out, " {v:.16e}").unwrap();
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows: [Vec<(usize, Vec<f64>)>; 3] = Default::default();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let mut fields = line.split_ascii_whitespace();
        let Some(kind) = fields.next() else { continue };
        let kind = NodeKind::parse(kind)
            .ok_or_else(|| parse_err(lineno, format!("unknown node kind {kind:?}")))?;
        let index: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(lineno, "missing or bad node index".into()))?;
        let values = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        if *dim.get_or_insert(values.len()) != values.len() {
            return Err(parse_err(lineno, "inconsistent vector length".into()));
        }
        rows[kind as usize].push((index, values));
    }
    let dim = dim.unwrap_or(0);
    let mut table = EmbeddingTable::zeros(0, 0, 0, dim);
    for (kind, mut list) in KINDS.into_iter().zip(rows) {
        list.sort_by_key(|r| r.0);
        if list.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(parse_err(0, format!("{} indices are not dense", kind.as_str())));
        }
        let n = list.len();
        let data = list.into_iter().flat_map(|r| r.1).collect();
        *table.kind_mut(kind) = Matrix::from_vec(n, dim, data)?;
    }
    Ok(table)
}
