//! Reading and writing the trace CSV schema
//! `tool,sensor,step,wafer,lot,seq,timestamp,value`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::error::{Error, Result};
use crate::oscillator::{TraceSeries, TripleKey};

pub const CSV_COLUMNS: [&str; 8] = ["tool", "sensor", "step", "wafer", "lot", "seq", "timestamp", "value"];

/// Share of rejected rows above which ingestion fails unless forced.
pub const MAX_REJECTED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Accept the file even when more than 1% of rows are rejected.
    pub force: bool,
    /// Group consecutive wafers into lots of this size when `lot` is empty.
    pub lot_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_accepted: usize,
    /// `(line number, reason)` for every rejected row.
    pub rejected: Vec<(u64, String)>,
}

/// Validated traces grouped by triple, each triple in wafer time order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    traces: Vec<TraceSeries>,
    ranges: BTreeMap<TripleKey, Range<usize>>,
    /// Wafers of each tool in time order.
    tool_order: BTreeMap<String, Vec<String>>,
    pub report: IngestReport,
}

impl Dataset {
    /// Builds a dataset from labeled traces. Wafer time order follows each
    /// trace's `sequence_index` (ties broken by wafer id) and is renumbered
    /// densely within every triple.
    pub fn from_traces(traces: Vec<TraceSeries>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut problems = Vec::new();
        for t in &traces {
            if let Err(e) = t.validate() {
                problems.push(format!("{} wafer {}: {e}", t.triple(), t.wafer_id));
            }
            if !seen.insert((t.triple(), t.wafer_id.clone())) {
                problems.push(format!("{} wafer {} appears twice", t.triple(), t.wafer_id));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }

        let mut first_seq: BTreeMap<(String, String), usize> = BTreeMap::new();
        for t in &traces {
            let e = first_seq
                .entry((t.tool_id.clone(), t.wafer_id.clone()))
                .or_insert(t.sequence_index);
            *e = (*e).min(t.sequence_index);
        }
        let mut per_tool: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for ((tool, wafer), seq) in first_seq {
            per_tool.entry(tool).or_default().push((seq, wafer));
        }
        let tool_order: BTreeMap<String, Vec<String>> = per_tool
            .into_iter()
            .map(|(tool, mut w)| {
                w.sort();
                (tool, w.into_iter().map(|(_, id)| id).collect())
            })
            .collect();
        let rank: HashMap<(&str, &str), usize> = tool_order
            .iter()
            .flat_map(|(tool, ws)| ws.iter().enumerate().map(move |(i, w)| ((tool.as_str(), w.as_str()), i)))
            .collect();

        let mut keyed: Vec<(TripleKey, usize, TraceSeries)> = traces
            .into_iter()
            .map(|t| {
                let r = rank[&(t.tool_id.as_str(), t.wafer_id.as_str())];
                (t.triple(), r, t)
            })
            .collect();
        keyed.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));

        let mut out = Vec::with_capacity(keyed.len());
        let mut ranges = BTreeMap::new();
        let mut i = 0;
        while i < keyed.len() {
            let key = keyed[i].0.clone();
            let start = i;
            while i < keyed.len() && keyed[i].0 == key {
                let mut t = keyed[i].2.clone();
                t.sequence_index = i - start;
                out.push(t);
                i += 1;
            }
            ranges.insert(key, start..i);
        }
        Ok(Dataset {
            traces: out,
            ranges,
            tool_order,
            report: IngestReport::default(),
        })
    }

    pub fn traces(&self) -> &[TraceSeries] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<TraceSeries> {
        self.traces
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = &TripleKey> {
        self.ranges.keys()
    }

    pub fn triple_count(&self) -> usize {
        self.ranges.len()
    }

    /// Traces of one triple ordered by `sequence_index`.
    pub fn triple_traces(&self, key: &TripleKey) -> &[TraceSeries] {
        self.ranges.get(key).map_or(&[], |r| &self.traces[r.clone()])
    }

    pub fn tools(&self) -> impl Iterator<Item = &String> {
        self.tool_order.keys()
    }

    /// Wafers of a tool in time order.
    pub fn tool_wafers(&self, tool: &str) -> &[String] {
        self.tool_order.get(tool).map_or(&[], |v| v.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stamp {
    Seconds(f64),
    Instant(DateTime<Utc>),
}

impl Stamp {
    fn parse(s: &str) -> Option<Stamp> {
        let s = s.trim();
        if let Ok(v) = s.parse::<f64>() {
            return v.is_finite().then_some(Stamp::Seconds(v));
        }
        if let Ok(t) = DateTime::parse_from_rfc3339(s) {
            return Some(Stamp::Instant(t.with_timezone(&Utc)));
        }
        ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
            .map(|t| Stamp::Instant(t.and_utc()))
    }

    fn is_iso(&self) -> bool {
        matches!(self, Stamp::Instant(_))
    }

    fn key(&self) -> i128 {
        match self {
            Stamp::Seconds(v) => v.to_bits() as i128,
            Stamp::Instant(t) => t.timestamp_nanos_opt().map_or(i128::MAX, i128::from),
        }
    }

    fn order(&self, other: &Stamp) -> std::cmp::Ordering {
        match (self, other) {
            (Stamp::Seconds(a), Stamp::Seconds(b)) => a.total_cmp(b),
            (Stamp::Instant(a), Stamp::Instant(b)) => a.cmp(b),
            _ => std::cmp::Ordering::Equal,
        }
    }
}

struct Row {
    triple: TripleKey,
    wafer: String,
    lot: Option<String>,
    seq: usize,
    stamp: Stamp,
    value: f64,
}

fn parse_row(rec: &csv::StringRecord, idx: &[usize; 8]) -> std::result::Result<Row, String> {
    let field = |i: usize| rec.get(idx[i]).map(str::trim).unwrap_or("");
    for (i, name) in CSV_COLUMNS.iter().enumerate() {
        if i != 4 && field(i).is_empty() {
            return Err(format!("empty {name}"));
        }
    }
    let seq = field(5)
        .parse::<usize>()
        .map_err(|_| format!("seq {:?} is not a non-negative integer", field(5)))?;
    let stamp = Stamp::parse(field(6)).ok_or_else(|| format!("unreadable timestamp {:?}", field(6)))?;
    let value = field(7)
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("value {:?} is not a finite number", field(7)))?;
    Ok(Row {
        triple: TripleKey::new(field(0), field(1), field(2)),
        wafer: field(3).to_owned(),
        lot: (!field(4).is_empty()).then(|| field(4).to_owned()),
        seq,
        stamp,
        value,
    })
}

/// Reads a trace CSV from any reader.
pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::validation(format!("unreadable header: {e}")))?
        .clone();
    let mut idx = [0usize; 8];
    let mut missing = Vec::new();
    for (i, name) in CSV_COLUMNS.iter().enumerate() {
        match headers.iter().position(|h| h.trim() == *name) {
            Some(p) => idx[i] = p,
            None => missing.push(format!("missing required column {name:?}")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(missing));
    }

    let mut report = IngestReport::default();
    let mut rows: Vec<Row> = Vec::new();
    let mut seen: HashSet<(TripleKey, String, i128)> = HashSet::new();
    let mut wafer_info: HashMap<(String, String), (Option<String>, usize)> = HashMap::new();
    let mut iso: Option<bool> = None;

    for rec in rdr.records() {
        report.rows_read += 1;
        let (line, parsed) = match rec {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                if rec.len() != headers.len() {
                    (line, Err(format!("expected {} fields, found {}", headers.len(), rec.len())))
                } else {
                    (line, parse_row(&rec, &idx))
                }
            }
            Err(e) => (e.position().map_or(0, |p| p.line()), Err(e.to_string())),
        };
        let checked = parsed.and_then(|row| {
            let kind = *iso.get_or_insert(row.stamp.is_iso());
            if kind != row.stamp.is_iso() {
                return Err("timestamp format differs from earlier rows".to_owned());
            }
            if row.lot.is_none() && opts.lot_size.is_none() {
                return Err("empty lot (supply a lot size to group wafers)".to_owned());
            }
            let wkey = (row.triple.tool.clone(), row.wafer.clone());
            if let Some((lot, seq)) = wafer_info.get(&wkey) {
                if *lot != row.lot {
                    return Err(format!("wafer {} already belongs to lot {:?}", row.wafer, lot));
                }
                if *seq != row.seq {
                    return Err(format!("wafer {} already has seq {seq}", row.wafer));
                }
            }
            if !seen.insert((row.triple.clone(), row.wafer.clone(), row.stamp.key())) {
                return Err("duplicate timestamp for this tool/sensor/step/wafer".to_owned());
            }
            wafer_info.insert(wkey, (row.lot.clone(), row.seq));
            Ok(row)
        });
        match checked {
            Ok(row) => rows.push(row),
            Err(reason) => report.rejected.push((line, reason)),
        }
    }
    report.rows_accepted = rows.len();

    if report.rows_read > 0 {
        let frac = report.rejected.len() as f64 / report.rows_read as f64;
        if frac > MAX_REJECTED_FRACTION && !opts.force {
            let mut problems = vec![format!(
                "{} of {} rows rejected (more than {}%)",
                report.rejected.len(),
                report.rows_read,
                MAX_REJECTED_FRACTION * 100.0
            )];
            problems.extend(report.rejected.iter().take(10).map(|(l, r)| format!("line {l}: {r}")));
            return Err(Error::Validation(problems));
        }
    }

    // ISO timestamps become seconds since the wafer's first reading on the tool.
    let mut origin: HashMap<(String, String), DateTime<Utc>> = HashMap::new();
    for r in &rows {
        if let Stamp::Instant(t) = r.stamp {
            let e = origin.entry((r.triple.tool.clone(), r.wafer.clone())).or_insert(t);
            *e = (*e).min(t);
        }
    }

    let mut grouped: BTreeMap<(TripleKey, String), Vec<&Row>> = BTreeMap::new();
    for r in &rows {
        grouped.entry((r.triple.clone(), r.wafer.clone())).or_default().push(r);
    }

    // Lot fallback groups wafers by their position in the tool's time order.
    let mut tool_wafers: BTreeMap<&str, Vec<(usize, &str)>> = BTreeMap::new();
    for ((tool, wafer), (_, seq)) in &wafer_info {
        tool_wafers.entry(tool.as_str()).or_default().push((*seq, wafer.as_str()));
    }
    let mut auto_lot: HashMap<(String, String), String> = HashMap::new();
    if let Some(size) = opts.lot_size {
        for (tool, ws) in tool_wafers.iter_mut() {
            ws.sort();
            for (rank, (_, w)) in ws.iter().enumerate() {
                auto_lot.insert(
                    (tool.to_string(), w.to_string()),
                    format!("{tool}-G{:03}", rank / size.max(1)),
                );
            }
        }
    }

    let mut traces = Vec::with_capacity(grouped.len());
    for ((triple, wafer), mut pts) in grouped {
        pts.sort_by(|a, b| a.stamp.order(&b.stamp));
        let times: Vec<f64> = pts
            .iter()
            .map(|r| match r.stamp {
                Stamp::Seconds(v) => v,
                Stamp::Instant(t) => {
                    let base = origin[&(triple.tool.clone(), wafer.clone())];
                    (t - base).num_nanoseconds().map_or(f64::NAN, |n| n as f64 * 1e-9)
                }
            })
            .collect();
        let values = pts.iter().map(|r| r.value).collect();
        let first = pts[0];
        let lot = match &first.lot {
            Some(l) => l.clone(),
            None => auto_lot[&(triple.tool.clone(), wafer.clone())].clone(),
        };
        let trace = TraceSeries::new(times, values)?.with_ids(
            &triple.tool,
            &triple.sensor,
            &triple.step,
            &wafer,
            &lot,
            first.seq,
        );
        traces.push(trace);
    }

    let mut ds = Dataset::from_traces(traces)?;
    ds.report = report;
    Ok(ds)
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(std::io::BufReader::new(file), opts).map_err(|e| match e {
        Error::Validation(problems) => Error::Parse {
            path: path.to_path_buf(),
            message: problems.join("; "),
        },
        other => other,
    })
}

/// Writes traces in the ingestion schema, one row per observation. Numbers
/// use the shortest representation that reads back to the same value.
pub fn write_dataset_csv<W: Write>(traces: &[TraceSeries], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for t in traces {
        let seq = t.sequence_index.to_string();
        for (time, value) in t.times.iter().zip(&t.values) {
            w.write_record([
                t.tool_id.as_str(),
                &t.sensor_id,
                &t.step_id,
                &t.wafer_id,
                &t.lot_id,
                &seq,
                &time.to_string(),
                &value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "tool,sensor,step,wafer,lot,seq,timestamp,value\n";

    fn ingest(text: &str, opts: IngestOptions) -> Result<Dataset> {
        ingest_reader(text.as_bytes(), &opts)
    }

    #[test]
    fn header_only_is_empty() {
        let ds = ingest(HEADER, IngestOptions::default()).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.triple_count(), 0);
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = ingest("tool,sensor,step,wafer,seq,timestamp,value\n", IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("\"lot\""));
    }

    #[test]
    fn duplicate_timestamp_rejected() {
        let mut text = HEADER.to_owned();
        for i in 0..200 {
            text.push_str(&format!("T,S,P,W1,L1,0,{},{}\n", i as f64 * 0.1, i));
        }
        text.push_str("T,S,P,W1,L1,0,0.5,99\n");
        let ds = ingest(&text, IngestOptions::default()).unwrap();
        assert_eq!(ds.report.rejected.len(), 1);
        assert_eq!(ds.report.rejected[0].0, 202);
        assert_eq!(ds.traces()[0].len(), 200);
    }

    #[test]
    fn too_many_rejections_need_force() {
        let text = format!("{HEADER}T,S,P,W1,L1,0,0,1\nT,S,P,W1,L1,0,1,oops\n");
        assert!(matches!(ingest(&text, IngestOptions::default()), Err(Error::Validation(_))));
        let ds = ingest(&text, IngestOptions { force: true, ..Default::default() }).unwrap();
        assert_eq!(ds.report.rows_accepted, 1);
    }

    #[test]
    fn iso_timestamps_rebased_per_wafer() {
        let text = format!(
            "{HEADER}T,S,P2,W1,L1,3,2024-01-01T00:00:10Z,2\n\
             T,S,P1,W1,L1,3,2024-01-01T00:00:00Z,1\n\
             T,S,P1,W1,L1,3,2024-01-01 00:00:01.5,1\n"
        );
        let ds = ingest(&text, IngestOptions::default()).unwrap();
        let p1 = ds.triple_traces(&TripleKey::new("T", "S", "P1"));
        assert_eq!(p1[0].times, vec![0.0, 1.5]);
        let p2 = ds.triple_traces(&TripleKey::new("T", "S", "P2"));
        assert_eq!(p2[0].times, vec![10.0]);
        assert_eq!(p2[0].sequence_index, 0);
    }

    #[test]
    fn lot_size_fallback_and_dense_order() {
        let mut text = HEADER.to_owned();
        for (w, seq) in [("A", 10), ("B", 20), ("C", 30)] {
            text.push_str(&format!("T,S,P,{w},,{seq},0,1\nT,S,P,{w},,{seq},1,2\n"));
        }
        assert!(ingest(&text, IngestOptions::default()).is_err());
        let ds = ingest(&text, IngestOptions { lot_size: Some(2), ..Default::default() }).unwrap();
        let lots: Vec<&str> = ds.traces().iter().map(|t| t.lot_id.as_str()).collect();
        assert_eq!(lots, ["T-G000", "T-G000", "T-G001"]);
        let seqs: Vec<usize> = ds.traces().iter().map(|t| t.sequence_index).collect();
        assert_eq!(seqs, [0, 1, 2]);
        assert_eq!(ds.tool_wafers("T"), ["A", "B", "C"]);
    }

    #[test]
    fn round_trip() {
        let t = TraceSeries::new(vec![0.0, 0.1, 0.30000000000000004], vec![1.0 / 3.0, -2e-17, 5.0])
            .unwrap()
            .with_ids("T", "S", "P", "W", "L", 0);
        let mut buf = Vec::new();
        write_dataset_csv(std::slice::from_ref(&t), &mut buf).unwrap();
        let ds = ingest_reader(buf.as_slice(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.traces(), &[t]);
    }
}
