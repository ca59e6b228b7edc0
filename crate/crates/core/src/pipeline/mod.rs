//! End-to-end orchestration: CSV ingestion, batch fitting and scoring,
//! signature tables, reports and heatmaps.
//!
//! A run directory written by [`write_run`] contains
//!
//! ```text
//! tables/<tool>.csv                 signature tables
//! normal/<tool>__<sensor>__<step>.txt  normal models
//! anomalies.csv                     one record per scored wafer
//! report.txt                        summary, warnings and skipped triples
//! ```

mod config;
mod heatmap;
mod ingest;
mod report;
mod run;
mod tables;

pub use config::{
    normal_model_to_string, parse_kv, parse_normal_model, read_normal_model, write_normal_model,
    PipelineConfig, CONFIG_KEYS,
};
pub use heatmap::{diverging, heatmap_matrix, render_heatmap, Heatmap, Z_CLIP};
pub use ingest::{
    ingest_csv, ingest_reader, write_dataset_csv, Dataset, IngestOptions, IngestReport, CSV_COLUMNS,
    MAX_REJECTED_FRACTION,
};
pub use report::{deconstruct_text, read_records, run_records, summarize, write_records, write_text};
pub use run::{run_fit, score_with_model, LotSummary, RunOutput, TripleResult};
pub use tables::{
    build_tables, cell_signature, export_tables, file_stem, read_table, SignatureTable, TableRow,
    CELL_ANOM, CELL_NAMES, CELL_SSR,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::oscillator::TripleKey;

pub const TABLES_DIR: &str = "tables";
pub const NORMAL_DIR: &str = "normal";
pub const RECORDS_FILE: &str = "anomalies.csv";
pub const REPORT_FILE: &str = "report.txt";

/// Number of anomalies listed per triple in reports.
pub const REPORT_TOP: usize = 5;

pub fn normal_model_path(run_dir: &Path, key: &TripleKey) -> PathBuf {
    run_dir.join(NORMAL_DIR).join(format!(
        "{}__{}__{}.txt",
        file_stem(&key.tool),
        file_stem(&key.sensor),
        file_stem(&key.step)
    ))
}

/// Full text report of a run.
pub fn run_report(ds: &Dataset, run: &RunOutput, cfg: &PipelineConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "triples: {} fitted, {} skipped; wafers scored: {}",
        run.triples.len(),
        run.skipped.len(),
        run.triples.iter().map(|t| t.records.len()).sum::<usize>()
    );
    let rep = &ds.report;
    if rep.rows_read > 0 {
        let _ = writeln!(s, "rows: {} read, {} rejected", rep.rows_read, rep.rejected.len());
    }
    for (k, why) in &run.skipped {
        let _ = writeln!(s, "skipped {k}: {why}");
    }
    for w in &run.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s.push('\n');
    s.push_str(&summarize(run_records(run), cfg, REPORT_TOP));
    s
}

/// Writes tables, normal models, anomaly records and the report for a run.
pub fn write_run(ds: &Dataset, run: &RunOutput, cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    export_tables(&build_tables(ds, run), &out_dir.join(TABLES_DIR))?;
    let normal_dir = out_dir.join(NORMAL_DIR);
    std::fs::create_dir_all(&normal_dir).map_err(|e| Error::io(&normal_dir, e))?;
    for t in &run.triples {
        write_normal_model(&t.normal_model, &normal_model_path(out_dir, &t.triple))?;
    }
    let path = out_dir.join(RECORDS_FILE);
    let mut buf = Vec::new();
    write_records(run_records(run), &mut buf).map_err(|e| Error::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    write_text(&out_dir.join(REPORT_FILE), &run_report(ds, run, cfg))
}
