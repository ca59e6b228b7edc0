//! Anomaly record files and plain-text reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::anomaly::{detect_changepoints, detect_spikes, rank_contributors, standardize, AnomalyRecord};
use crate::error::{Error, Result};
use crate::oscillator::{Param, ShapeSignature, TripleKey, NPARAM};

use super::config::PipelineConfig;
use super::run::RunOutput;

fn records_header() -> Vec<String> {
    let mut h: Vec<String> = ["tool", "sensor", "step", "wafer", "lot", "seq", "score", "ssr"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(Param::ALL.iter().map(|p| format!("grad_{}", p.name())));
    h.extend(Param::ALL.iter().map(|p| p.name().to_owned()));
    h
}

/// Writes one row per scored wafer, triples in order, wafers in time order.
pub fn write_records<'a, W, I>(records: I, out: W) -> csv::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a TripleKey, &'a AnomalyRecord)>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(records_header())?;
    for (k, r) in records {
        let mut rec = vec![
            k.tool.clone(),
            k.sensor.clone(),
            k.step.clone(),
            r.wafer_id.clone(),
            r.lot_id.clone(),
            r.sequence_index.to_string(),
            r.score.to_string(),
            r.ssr.to_string(),
        ];
        rec.extend(r.gradient.iter().map(|v| v.to_string()));
        rec.extend(r.signature.to_array().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_records(run: &RunOutput) -> impl Iterator<Item = (&TripleKey, &AnomalyRecord)> {
    run.triples
        .iter()
        .flat_map(|t| t.records.iter().map(move |r| (&t.triple, r)))
}

pub fn read_records(path: &Path) -> Result<Vec<(TripleKey, AnomalyRecord)>> {
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_owned).collect();
    if header != records_header() {
        return Err(bad("unexpected header for an anomaly record file".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| bad(format!("line {line}: bad number {:?}", &rec[j])))
        };
        let mut gradient = [0.0; NPARAM];
        let mut sig = [0.0; NPARAM];
        for d in 0..NPARAM {
            gradient[d] = num(8 + d)?;
            sig[d] = num(8 + NPARAM + d)?;
        }
        out.push((
            TripleKey::new(&rec[0], &rec[1], &rec[2]),
            AnomalyRecord {
                wafer_id: rec[3].to_owned(),
                lot_id: rec[4].to_owned(),
                sequence_index: rec[5].parse().map_err(|_| bad(format!("line {line}: bad seq")))?,
                score: num(6)?,
                ssr: num(7)?,
                gradient,
                signature: ShapeSignature::from_array(sig),
            },
        ));
    }
    Ok(out)
}

fn contributors_line(gradient: &[f64; NPARAM], n: usize) -> String {
    rank_contributors(gradient)
        .iter()
        .take(n)
        .map(|(p, v)| format!("{} {v:+.3e}", p.name()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Per-triple summary: top anomalies with their leading contributors, and
/// detected spikes and change points.
pub fn summarize<'a, I>(records: I, cfg: &PipelineConfig, top: usize) -> String
where
    I: IntoIterator<Item = (&'a TripleKey, &'a AnomalyRecord)>,
{
    let mut grouped: BTreeMap<&TripleKey, Vec<&AnomalyRecord>> = BTreeMap::new();
    for (k, r) in records {
        grouped.entry(k).or_default().push(r);
    }
    let mut s = String::new();
    for (key, mut recs) in grouped {
        recs.sort_by_key(|r| r.sequence_index);
        let scores: Vec<f64> = recs.iter().map(|r| r.score).collect();
        let z: Vec<f64> = standardize(&scores.iter().map(|v| vec![*v]).collect::<Vec<_>>())
            .into_iter()
            .map(|r| r[0])
            .collect();
        let _ = writeln!(s, "{key}: {} wafers", recs.len());

        let mut order: Vec<usize> = (0..recs.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let _ = writeln!(s, "  top anomalies:");
        for (rank, &i) in order.iter().take(top).enumerate() {
            let r = recs[i];
            let _ = writeln!(
                s,
                "    {}. {} (lot {}) score {:.4} z {:+.2}; contributors: {}",
                rank + 1,
                r.wafer_id,
                r.lot_id,
                r.score,
                z[i],
                contributors_line(&r.gradient, 3)
            );
        }
        let spikes = detect_spikes(&scores, cfg.spike_z);
        let names = |idx: &[usize]| {
            if idx.is_empty() {
                "none".to_owned()
            } else {
                idx.iter().map(|&i| recs[i].wafer_id.as_str()).collect::<Vec<_>>().join(", ")
            }
        };
        let _ = writeln!(s, "  spikes: {}", names(&spikes));
        let cps = detect_changepoints(&scores, cfg.changepoint_window, cfg.changepoint_z);
        let _ = writeln!(s, "  change points (first wafer after): {}", names(&cps));
    }
    s
}

/// Ranked gradient report for one wafer. The first line names the top
/// contributor.
pub fn deconstruct_text(title: &str, gradient: &[f64; NPARAM]) -> String {
    let ranked = rank_contributors(gradient);
    let (p0, v0) = ranked[0];
    let mut s = format!("top contributor: {} ({}) {v0:+.6e}\n", p0.name(), p0.describe());
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{:<5}{:<8}{:<20}{:>16}", "rank", "param", "meaning", "d anom / d param");
    for (i, (p, v)) in ranked.iter().enumerate() {
        let _ = writeln!(s, "{:<5}{:<8}{:<20}{:>16.6e}", i + 1, p.name(), p.describe(), v);
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize, score: f64) -> AnomalyRecord {
        AnomalyRecord {
            wafer_id: format!("W{i:02}"),
            lot_id: "L".into(),
            sequence_index: i,
            score,
            ssr: 0.5,
            gradient: [1.0, -2.0, 0.0, 0.0, 0.0, 3.0, 0.0],
            signature: ShapeSignature::from_array([0.1, 1.0, 2.0, 3.0, 0.0, 0.01, 0.0]),
        }
    }

    #[test]
    fn records_round_trip() {
        let k = TripleKey::new("T", "S", "P");
        let recs: Vec<AnomalyRecord> = (0..3).map(|i| record(i, i as f64 / 3.0)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let mut buf = Vec::new();
        write_records(recs.iter().map(|r| (&k, r)), &mut buf).unwrap();
        std::fs::write(&path, buf).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].1, recs[2]);
        assert_eq!(back[0].0, k);
    }

    #[test]
    fn summary_lists_spike_first() {
        let k = TripleKey::new("T", "S", "P");
        let recs: Vec<AnomalyRecord> = (0..20)
            .map(|i| record(i, if i == 7 { 50.0 } else { (i % 3) as f64 }))
            .collect();
        let text = summarize(recs.iter().map(|r| (&k, r)), &PipelineConfig::default(), 3);
        assert!(text.contains("1. W07"), "{text}");
        assert!(text.contains("spikes: W07"), "{text}");
        assert!(text.contains("contributors: c +3.000e0, R -2.000e0, gamma +1.000e0"), "{text}");
    }

    #[test]
    fn deconstruct_first_line() {
        let text = deconstruct_text("wafer W", &[0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0]);
        assert!(text.lines().next().unwrap().starts_with("top contributor: c (slope)"));
    }
}
