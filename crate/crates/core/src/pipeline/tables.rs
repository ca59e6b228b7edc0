//! Per-tool signature tables: one row per wafer in time order, one column
//! group per (sensor, step) holding the seven parameters, ssr and the anomaly
//! score.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::oscillator::{ShapeSignature, NPARAM};

use super::ingest::Dataset;
use super::run::RunOutput;

/// Names of the nine values stored per column group.
pub const CELL_NAMES: [&str; 9] = ["gamma", "R", "omega", "y", "phi", "c", "x", "ssr", "anom"];
pub const CELL_SSR: usize = NPARAM;
pub const CELL_ANOM: usize = NPARAM + 1;

const ID_COLUMNS: [&str; 4] = ["tool", "wafer", "lot", "seq"];

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub wafer: String,
    pub lot: String,
    /// Position of the wafer in the tool's time order.
    pub seq: usize,
    /// One entry per column group; `None` when the wafer has no result there.
    pub cells: Vec<Option<[f64; 9]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureTable {
    pub tool: String,
    /// `(sensor, step)` per column group, sorted.
    pub groups: Vec<(String, String)>,
    pub rows: Vec<TableRow>,
}

impl SignatureTable {
    pub fn group_index(&self, sensor: &str, step: &str) -> Option<usize> {
        self.groups.iter().position(|(s, p)| s == sensor && p == step)
    }

    /// Wafers with a result in the given column group, in time order.
    pub fn column(&self, group: usize) -> Vec<(&TableRow, [f64; 9])> {
        self.rows
            .iter()
            .filter_map(|r| r.cells.get(group).copied().flatten().map(|c| (r, c)))
            .collect()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ID_COLUMNS.iter().map(|s| s.to_string()).collect();
        for (sensor, step) in &self.groups {
            h.extend(CELL_NAMES.iter().map(|n| format!("{sensor}:{step}:{n}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![self.tool.clone(), r.wafer.clone(), r.lot.clone(), r.seq.to_string()];
            for c in &r.cells {
                match c {
                    Some(v) => rec.extend(v.iter().map(|x| x.to_string())),
                    None => rec.extend(std::iter::repeat_n(String::new(), CELL_NAMES.len())),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assembles one table per tool. Every wafer of the dataset gets exactly one
/// row in its tool's table; triples that were skipped leave empty cells.
pub fn build_tables(ds: &Dataset, run: &RunOutput) -> Vec<SignatureTable> {
    let mut lot_of: HashMap<(&str, &str), &str> = HashMap::new();
    for t in ds.traces() {
        lot_of.insert((t.tool_id.as_str(), t.wafer_id.as_str()), t.lot_id.as_str());
    }
    let mut values: HashMap<(&str, &str, &str, &str), [f64; 9]> = HashMap::new();
    for tr in &run.triples {
        for r in &tr.records {
            let mut cell = [0.0; 9];
            cell[..NPARAM].copy_from_slice(&r.signature.to_array());
            cell[CELL_SSR] = r.ssr;
            cell[CELL_ANOM] = r.score;
            values.insert(
                (&tr.triple.tool, &tr.triple.sensor, &tr.triple.step, r.wafer_id.as_str()),
                cell,
            );
        }
    }

    ds.tools()
        .map(|tool| {
            let mut groups: Vec<(String, String)> = ds
                .triples()
                .filter(|k| &k.tool == tool)
                .map(|k| (k.sensor.clone(), k.step.clone()))
                .collect();
            groups.sort();
            let rows = ds
                .tool_wafers(tool)
                .iter()
                .enumerate()
                .map(|(seq, wafer)| TableRow {
                    wafer: wafer.clone(),
                    lot: lot_of.get(&(tool.as_str(), wafer.as_str())).map_or(String::new(), |l| l.to_string()),
                    seq,
                    cells: groups
                        .iter()
                        .map(|(s, p)| values.get(&(tool.as_str(), s.as_str(), p.as_str(), wafer.as_str())).copied())
                        .collect(),
                })
                .collect();
            SignatureTable {
                tool: tool.clone(),
                groups,
                rows,
            }
        })
        .collect()
}

/// File-system friendly version of a tool name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Writes `<tool>.csv` for every table into `dir`, returning the paths.
pub fn export_tables(tables: &[SignatureTable], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tables
        .iter()
        .map(|t| {
            let path = dir.join(format!("{}.csv", file_stem(&t.tool)));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            t.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            Ok(path)
        })
        .collect()
}

pub fn read_table(path: &Path) -> Result<SignatureTable> {
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_owned).collect();
    if header.len() < ID_COLUMNS.len() || header[..ID_COLUMNS.len()] != ID_COLUMNS {
        return Err(bad(format!("table must start with columns {}", ID_COLUMNS.join(","))));
    }
    let value_cols = &header[ID_COLUMNS.len()..];
    if value_cols.len() % CELL_NAMES.len() != 0 {
        return Err(bad("column count is not a multiple of the group size".into()));
    }
    let mut groups = Vec::new();
    for chunk in value_cols.chunks(CELL_NAMES.len()) {
        let (prefix, _) = chunk[0]
            .rsplit_once(':')
            .ok_or_else(|| bad(format!("malformed column {:?}", chunk[0])))?;
        let (sensor, step) = prefix
            .split_once(':')
            .ok_or_else(|| bad(format!("malformed column {:?}", chunk[0])))?;
        for (col, name) in chunk.iter().zip(CELL_NAMES) {
            if *col != format!("{prefix}:{name}") {
                return Err(bad(format!("expected column {prefix}:{name}, found {col:?}")));
            }
        }
        groups.push((sensor.to_owned(), step.to_owned()));
    }

    let mut tool = None;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(bad(format!("line {line}: expected {} fields", header.len())));
        }
        if tool.get_or_insert_with(|| rec[0].to_owned()) != &rec[0] {
            return Err(bad(format!("line {line}: table mixes tools")));
        }
        let seq = rec[3].parse().map_err(|_| bad(format!("line {line}: bad seq")))?;
        let mut cells = Vec::with_capacity(groups.len());
        for g in 0..groups.len() {
            let start = ID_COLUMNS.len() + g * CELL_NAMES.len();
            let fields: Vec<&str> = (start..start + CELL_NAMES.len()).map(|j| &rec[j]).collect();
            if fields.iter().all(|f| f.is_empty()) {
                cells.push(None);
                continue;
            }
            let mut cell = [0.0; 9];
            for (c, f) in cell.iter_mut().zip(&fields) {
                *c = f.parse().map_err(|_| bad(format!("line {line}: bad number {f:?}")))?;
            }
            cells.push(Some(cell));
        }
        rows.push(TableRow {
            wafer: rec[1].to_owned(),
            lot: rec[2].to_owned(),
            seq,
            cells,
        });
    }
    Ok(SignatureTable {
        tool: tool.unwrap_or_default(),
        groups,
        rows,
    })
}

/// Signature stored in a cell.
pub fn cell_signature(cell: &[f64; 9]) -> ShapeSignature {
    let mut a = [0.0; NPARAM];
    a.copy_from_slice(&cell[..NPARAM]);
    ShapeSignature::from_array(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_round_trip() {
        let table = SignatureTable {
            tool: "T 1".into(),
            groups: vec![("S".into(), "P1".into()), ("S".into(), "P2".into())],
            rows: vec![
                TableRow {
                    wafer: "W0".into(),
                    lot: "L0".into(),
                    seq: 0,
                    cells: vec![Some([0.1, 2.0, 1.5, 10.0, 0.2, 1.0 / 3.0, 0.0, 0.5, -100.25]), None],
                },
                TableRow {
                    wafer: "W1".into(),
                    lot: "L0".into(),
                    seq: 1,
                    cells: vec![None, Some([1.0; 9])],
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = export_tables(std::slice::from_ref(&table), dir.path()).unwrap();
        assert!(paths[0].ends_with("T_1.csv"));
        assert_eq!(read_table(&paths[0]).unwrap(), table);
        assert_eq!(table.header().len(), 4 + 2 * 9);
        assert_eq!(table.column(1).len(), 1);
    }
}
