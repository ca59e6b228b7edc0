//! End-to-end pipeline: CSV round trips, run directories, tables and heatmaps.

mod common;

use std::collections::BTreeMap;
use std::path::Path;

use greybox::anomaly::standardize;
use greybox::pipeline::{
    build_tables, heatmap_matrix, ingest_csv, ingest_reader, read_table, render_heatmap, run_fit, run_report,
    write_dataset_csv, write_run, Dataset, IngestOptions, PipelineConfig, CELL_NAMES,
};
use greybox::simulate::{make_dataset, wafer_id, GenerationPlan, SignatureModel, TriplePlan};
use greybox::ShapeSignature;

use common::*;

/// Two sensors on one tool, five lots of ten wafers.
fn small_plan() -> GenerationPlan {
    let triple = |sensor: &str, y: f64| TriplePlan {
        tool: "T1".into(),
        sensor: sensor.into(),
        step: "P".into(),
        lots: 5,
        wafers_per_lot: 10,
        noise_sigma: NOISE,
        signature: Some(SignatureModel {
            base: ShapeSignature::from_array(BASE).with(greybox::Param::Y, y),
            jitter: JITTER,
            start: 0.0,
            duration: 12.0,
            points: 80,
            start_jitter: 0.0,
        }),
        control: None,
        anomalies: Vec::new(),
    };
    GenerationPlan { seed: 5, triples: vec![triple("pressure", 3.0), triple("temp", 10.0)] }
}

fn small_dataset() -> Dataset {
    Dataset::from_traces(make_dataset(&small_plan()).unwrap().traces).unwrap()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn csv_round_trip_preserves_traces() {
    let synth = make_dataset(&small_plan()).unwrap();
    let mut buf = Vec::new();
    write_dataset_csv(&synth.traces, &mut buf).unwrap();
    let ds = ingest_reader(buf.as_slice(), &IngestOptions::default()).unwrap();
    assert!(ds.report.rejected.is_empty());
    let mut expected = synth.traces.clone();
    let mut got = ds.traces().to_vec();
    let key = |t: &greybox::TraceSeries| (t.triple(), t.wafer_id.clone());
    expected.sort_by_key(key);
    got.sort_by_key(key);
    assert_eq!(got.len(), expected.len());
    for (a, b) in got.iter().zip(&expected) {
        assert_eq!((&a.wafer_id, &a.lot_id, a.triple()), (&b.wafer_id, &b.lot_id, b.triple()));
        assert_eq!(a.times, b.times);
        assert_eq!(a.values, b.values);
    }
}

#[test]
fn tables_have_one_row_per_wafer_and_nine_columns_per_pair() {
    let ds = small_dataset();
    let run = run_fit(&ds, &PipelineConfig { workers: 1, ..PipelineConfig::default() }).unwrap();
    let tables = build_tables(&ds, &run);
    assert_eq!(tables.len(), 1);
    let t = &tables[0];
    assert_eq!(t.header().len(), 4 + 2 * CELL_NAMES.len());
    let mut wafers: Vec<&str> = t.rows.iter().map(|r| r.wafer.as_str()).collect();
    assert_eq!(wafers.len(), 50);
    wafers.dedup();
    assert_eq!(wafers.len(), 50);
    assert!(t.rows.iter().all(|r| r.cells.iter().all(Option::is_some)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    t.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_table(&path).unwrap();
    assert_eq!(back.groups, t.groups);
    assert_eq!(back.rows.len(), t.rows.len());
}

#[test]
fn run_directories_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset_csv(small_dataset().traces(), std::fs::File::create(&csv).unwrap()).unwrap();
    let mut trees = Vec::new();
    for workers in [1, 8] {
        let cfg = PipelineConfig { workers, ..PipelineConfig::default() };
        let ds = ingest_csv(&csv, &IngestOptions::default()).unwrap();
        let out = dir.path().join(format!("run{workers}"));
        write_run(&ds, &run_fit(&ds, &cfg).unwrap(), &cfg, &out).unwrap();
        trees.push(tree(&out));
    }
    assert!(trees[0].len() >= 4, "{:?}", trees[0].keys());
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn heatmaps_are_stable_under_restandardization_and_rerendering() {
    let ds = small_dataset();
    let run = run_fit(&ds, &PipelineConfig { workers: 1, ..PipelineConfig::default() }).unwrap();
    let table = &build_tables(&ds, &run)[0];
    let h = heatmap_matrix(table, "temp", "P", None).unwrap();
    let rows: Vec<Vec<f64>> = (0..h.wafers.len()).map(|w| h.z.iter().map(|r| r[w]).collect()).collect();
    let again = standardize(&rows);
    for (a, b) in rows.iter().flatten().zip(again.iter().flatten()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    let dir = tempfile::tempdir().unwrap();
    let first = render_heatmap(table, "temp", "P", &dir.path().join("a"), None).unwrap();
    let second = render_heatmap(table, "temp", "P", &dir.path().join("b"), None).unwrap();
    assert_eq!(std::fs::read(&first.0).unwrap(), std::fs::read(&second.0).unwrap());
    assert_eq!(std::fs::read(&first.1).unwrap(), std::fs::read(&second.1).unwrap());
}

#[test]
fn shifted_heatmap_rows_are_larger_after_the_change() {
    let synth = make_dataset(&shift_plan(3)).unwrap();
    let ds = Dataset::from_traces(synth.traces).unwrap();
    let run = run_fit(&ds, &PipelineConfig { workers: 1, ..PipelineConfig::default() }).unwrap();
    let h = heatmap_matrix(&build_tables(&ds, &run)[0], "S", "P", None).unwrap();
    let c = &h.z[greybox::Param::C.index()];
    let mean_abs = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
    let (before, after) = (mean_abs(&c[..SHIFT_WAFER]), mean_abs(&c[SHIFT_WAFER..]));
    assert!(after > 2.0 * before, "mean |z| before {before}, after {after}");
}

#[test]
fn injected_spike_tops_the_report() {
    let synth = make_dataset(&spike_plan(1)).unwrap();
    let ds = Dataset::from_traces(synth.traces).unwrap();
    let cfg = PipelineConfig { workers: 1, ..PipelineConfig::default() };
    let run = run_fit(&ds, &cfg).unwrap();
    let report = run_report(&ds, &run, &cfg);
    let top = report.lines().find(|l| l.trim_start().starts_with("1. ")).unwrap();
    let spiked = wafer_id("T1", SPIKE_WAFER);
    assert!(top.contains(&spiked), "{top}");
    assert!(top.contains("contributors: c"), "{top}");
    assert!(report.lines().any(|l| l.contains("spikes:") && l.contains(&spiked)), "{report}");
}
