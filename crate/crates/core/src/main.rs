use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use greybox::anomaly::{changepoint_gradient, fit_normal_model, score_wafer, AnomalyRecord, NormalModel};
use greybox::error::{Error, Result};
use greybox::fit::PriorExponent;
use greybox::pipeline::{self as pl, Dataset, IngestOptions, PipelineConfig, SignatureTable};
use greybox::simulate::{make_dataset, write_ground_truth, write_injections, GenerationPlan};
use greybox::{ShapeSignature, TraceSeries, TripleKey};

const DEMO_PLAN: &str = include_str!("../plans/demo.toml");

#[derive(Parser)]
#[command(name = "greybox", version, about = "Grey-box process-control mining for sensor traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a generation plan
    Simulate(SimulateArgs),
    /// Fit and score every triple of a dataset into a run directory
    Fit(FitArgs),
    /// Learn the normal model of one triple
    Normal(NormalArgs),
    /// Score the wafers of one triple against a normal model
    Score(ScoreArgs),
    /// Rank the parameters driving one wafer's score or a change point
    Deconstruct(DeconstructArgs),
    /// Render z-score heatmaps from a signature table
    Heatmap(HeatmapArgs),
    /// Summarize the anomaly records of a run directory
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Generation plan (TOML)
    #[arg(long, conflicts_with = "demo", required_unless_present = "demo")]
    plan: Option<PathBuf>,
    /// Use the bundled demo plan
    #[arg(long)]
    demo: bool,
    /// Dataset CSV to write
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth CSV (default: <out stem>.truth.csv)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Injected-anomaly CSV (default: <out stem>.injections.csv when the plan has any)
    #[arg(long)]
    injections: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunOpts {
    /// Flat key-value configuration file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Lots pooled into each normal model
    #[arg(long)]
    initial_lots: Option<usize>,
    /// Group consecutive wafers into lots of this size when the lot column is empty
    #[arg(long)]
    lot_size: Option<usize>,
    /// Accept inputs with more than 1% rejected rows
    #[arg(long)]
    force: bool,
    /// Prior weighting: variance or std
    #[arg(long, value_parser = parse_exponent)]
    prior_exponent: Option<PriorExponent>,
}

fn parse_exponent(s: &str) -> std::result::Result<PriorExponent, String> {
    PriorExponent::parse(s).ok_or_else(|| format!("expected `variance` or `std`, got {s:?}"))
}

impl RunOpts {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(n) = self.initial_lots {
            cfg.initial_lots = n;
        }
        if let Some(n) = self.lot_size {
            cfg.lot_size = Some(n);
        }
        if self.force {
            cfg.force = true;
        }
        if let Some(e) = self.prior_exponent {
            cfg.fit.prior_exponent = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Run directory to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Args, Clone)]
struct TripleArgs {
    #[arg(long)]
    tool: String,
    #[arg(long)]
    sensor: String,
    #[arg(long)]
    step: String,
}

impl TripleArgs {
    fn key(&self) -> TripleKey {
        TripleKey::new(&self.tool, &self.sensor, &self.step)
    }
}

#[derive(Args)]
struct NormalArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    triple: TripleArgs,
    /// Normal-model file to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    /// Normal-model file; it names the triple to score
    #[arg(long)]
    normal: PathBuf,
    /// Signature table to take fitted signatures from instead of refitting
    #[arg(long)]
    table: Option<PathBuf>,
    /// Anomaly record CSV to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Args)]
struct DeconstructArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory from `fit`
    #[arg(long, required_unless_present_all = ["normal", "table"])]
    run: Option<PathBuf>,
    /// Normal-model file (with --table, instead of --run)
    #[arg(long, requires = "table")]
    normal: Option<PathBuf>,
    /// Signature table (with --normal, instead of --run)
    #[arg(long, requires = "normal")]
    table: Option<PathBuf>,
    /// Sensor; optional when the wafer's tool has a single sensor/step
    #[arg(long)]
    sensor: Option<String>,
    #[arg(long)]
    step: Option<String>,
    /// Wafer to deconstruct
    #[arg(long, conflicts_with_all = ["before", "after"], required_unless_present_all = ["before", "after"])]
    wafer: Option<String>,
    /// Last wafer before a change point
    #[arg(long, requires = "after")]
    before: Option<String>,
    /// First wafer after a change point
    #[arg(long, requires = "before")]
    after: Option<String>,
    #[arg(long)]
    lot_size: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Signature table CSV
    #[arg(long)]
    table: PathBuf,
    /// Restrict to one sensor/step pair (both required together)
    #[arg(long, requires = "step")]
    sensor: Option<String>,
    #[arg(long, requires = "sensor")]
    step: Option<String>,
    /// Output prefix; `.csv` and `.svg` are appended
    #[arg(long)]
    out: PathBuf,
    /// Trailing standardization window (default: whole period)
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory from `fit`
    #[arg(long)]
    run: PathBuf,
    /// Anomalies listed per triple
    #[arg(long, default_value_t = pl::REPORT_TOP)]
    top: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn ingest(path: &Path, cfg: &PipelineConfig) -> Result<Dataset> {
    let ds = pl::ingest_csv(
        path,
        &IngestOptions {
            force: cfg.force,
            lot_size: cfg.lot_size,
        },
    )?;
    if !ds.report.rejected.is_empty() {
        eprintln!(
            "{}: {} of {} rows rejected",
            path.display(),
            ds.report.rejected.len(),
            ds.report.rows_read
        );
        for (line, why) in ds.report.rejected.iter().take(10) {
            eprintln!("  line {line}: {why}");
        }
    }
    Ok(ds)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.with_extension("").into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    pl::write_text(path, &String::from_utf8_lossy(&buf))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let text = match &a.plan {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => DEMO_PLAN.to_owned(),
    };
    let plan = GenerationPlan::from_toml(&text)?;
    let ds = make_dataset(&plan)?;
    write_csv_file(&a.out, |b| pl::write_dataset_csv(&ds.traces, b))?;
    let truth = a.truth.unwrap_or_else(|| sibling(&a.out, ".truth.csv"));
    write_csv_file(&truth, |b| write_ground_truth(&ds, b))?;
    if !ds.injected_anomalies.is_empty() || a.injections.is_some() {
        let inj = a.injections.unwrap_or_else(|| sibling(&a.out, ".injections.csv"));
        write_csv_file(&inj, |b| write_injections(&ds, b))?;
    }
    for w in &ds.unstable {
        eprintln!("warning: wafer {w} was simulated with an unstable loop");
    }
    eprintln!("wrote {} traces to {}", ds.traces.len(), a.out.display());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let ds = ingest(&a.data, &cfg)?;
    let run = pl::run_fit(&ds, &cfg)?;
    pl::write_run(&ds, &run, &cfg, &a.out)?;
    for (k, why) in &run.skipped {
        eprintln!("skipped {k}: {why}");
    }
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "fitted {} triple(s); results in {}",
        run.triples.len(),
        a.out.display()
    );
    Ok(())
}

/// Traces of the first `initial_lots` lots of a triple.
fn initial_traces(traces: &[TraceSeries], initial_lots: usize) -> Vec<TraceSeries> {
    let mut lots: Vec<&str> = Vec::new();
    traces
        .iter()
        .filter(|t| {
            if !lots.contains(&t.lot_id.as_str()) {
                lots.push(&t.lot_id);
            }
            lots.iter().position(|l| *l == t.lot_id).is_some_and(|i| i < initial_lots)
        })
        .cloned()
        .collect()
}

fn triple_traces<'a>(ds: &'a Dataset, key: &TripleKey) -> Result<&'a [TraceSeries]> {
    let t = ds.triple_traces(key);
    if t.is_empty() {
        return Err(Error::validation(format!("dataset has no traces for {key}")));
    }
    Ok(t)
}

fn cmd_normal(a: NormalArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let ds = ingest(&a.data, &cfg)?;
    let key = a.triple.key();
    let init = initial_traces(triple_traces(&ds, &key)?, cfg.initial_lots);
    let nm = fit_normal_model(&init, &cfg.fit)?;
    pl::write_normal_model(&nm, &a.out)?;
    eprintln!(
        "normal model for {key} from lots {} written to {}",
        nm.source_lots.join(","),
        a.out.display()
    );
    Ok(())
}

/// Signatures of one triple from a table, keyed by wafer.
fn table_signatures(table: &SignatureTable, key: &TripleKey) -> Result<Vec<(String, ShapeSignature)>> {
    let g = table.group_index(&key.sensor, &key.step).ok_or_else(|| {
        Error::validation(format!("table for {} has no {}:{} columns", table.tool, key.sensor, key.step))
    })?;
    Ok(table
        .column(g)
        .into_iter()
        .map(|(r, c)| (r.wafer.clone(), pl::cell_signature(&c)))
        .collect())
}

fn score_from_table(traces: &[TraceSeries], sigs: &[(String, ShapeSignature)], nm: &NormalModel) -> Vec<AnomalyRecord> {
    traces
        .iter()
        .filter_map(|t| {
            sigs.iter()
                .find(|(w, _)| *w == t.wafer_id)
                .map(|(_, s)| score_wafer(s, t, nm))
        })
        .collect()
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let nm = pl::read_normal_model(&a.normal)?;
    let ds = ingest(&a.data, &cfg)?;
    let traces = triple_traces(&ds, &nm.triple)?;
    let records = match &a.table {
        Some(p) => {
            let table = pl::read_table(p)?;
            score_from_table(traces, &table_signatures(&table, &nm.triple)?, &nm)
        }
        None => pl::score_with_model(traces, &nm, &cfg)?,
    };
    write_csv_file(&a.out, |b| pl::write_records(records.iter().map(|r| (&nm.triple, r)), b))?;
    print!("{}", pl::summarize(records.iter().map(|r| (&nm.triple, r)), &cfg, pl::REPORT_TOP));
    Ok(())
}

fn cmd_deconstruct(a: DeconstructArgs) -> Result<()> {
    let opts = IngestOptions {
        force: a.force,
        lot_size: a.lot_size,
    };
    let ds = pl::ingest_csv(&a.data, &opts)?;
    let probe = a.wafer.as_deref().or(a.before.as_deref()).expect("clap enforces a wafer");
    let tool = ds
        .traces()
        .iter()
        .find(|t| t.wafer_id == probe)
        .map(|t| t.tool_id.clone())
        .ok_or_else(|| Error::validation(format!("wafer {probe} is not in the dataset")))?;

    let table = match (&a.run, &a.table) {
        (_, Some(p)) => pl::read_table(p)?,
        (Some(run), None) => pl::read_table(&run.join(pl::TABLES_DIR).join(format!("{}.csv", pl::file_stem(&tool))))?,
        (None, None) => unreachable!("clap requires --run or --table"),
    };
    let key = match (&a.sensor, &a.step) {
        (Some(s), Some(p)) => TripleKey::new(&tool, s, p),
        _ if table.groups.len() == 1 => TripleKey::new(&tool, &table.groups[0].0, &table.groups[0].1),
        _ => {
            let names: Vec<String> = table.groups.iter().map(|(s, p)| format!("{s}:{p}")).collect();
            return Err(Error::validation(format!(
                "tool {tool} has several sensor/step pairs ({}); pass --sensor and --step",
                names.join(", ")
            )));
        }
    };
    let nm = match (&a.normal, &a.run) {
        (Some(p), _) => pl::read_normal_model(p)?,
        (None, Some(run)) => pl::read_normal_model(&pl::normal_model_path(run, &key))?,
        (None, None) => unreachable!("clap requires --run or --normal"),
    };
    if nm.triple != key {
        return Err(Error::validation(format!("normal model is for {}, not {key}", nm.triple)));
    }
    let sigs = table_signatures(&table, &key)?;
    let traces = triple_traces(&ds, &key)?;
    let lookup = |w: &str| -> Result<(&TraceSeries, ShapeSignature)> {
        let t = traces
            .iter()
            .find(|t| t.wafer_id == w)
            .ok_or_else(|| Error::validation(format!("wafer {w} has no trace for {key}")))?;
        let s = sigs
            .iter()
            .find(|(id, _)| id == w)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::validation(format!("wafer {w} has no fitted signature for {key}")))?;
        Ok((t, s))
    };

    let text = if let Some(w) = &a.wafer {
        let (t, s) = lookup(w)?;
        let rec = score_wafer(&s, t, &nm);
        pl::deconstruct_text(&format!("wafer {w} on {key}: score {:.6}", rec.score), &rec.gradient)
    } else {
        let (b, a_) = (a.before.as_deref().unwrap(), a.after.as_deref().unwrap());
        let (tb, sb) = lookup(b)?;
        let (_, sa) = lookup(a_)?;
        let g = changepoint_gradient(&sb, &sa, tb, &nm);
        pl::deconstruct_text(&format!("change point between {b} and {a_} on {key} (Taylor estimate at the midpoint)"), &g)
    };
    print!("{text}");
    Ok(())
}

fn cmd_heatmap(a: HeatmapArgs) -> Result<()> {
    let table = pl::read_table(&a.table)?;
    let groups: Vec<(String, String)> = match (&a.sensor, &a.step) {
        (Some(s), Some(p)) => vec![(s.clone(), p.clone())],
        _ => table.groups.clone(),
    };
    let single = groups.len() == 1;
    for (s, p) in groups {
        let prefix = if single {
            a.out.clone()
        } else {
            let mut o = a.out.clone().into_os_string();
            o.push(format!("_{}_{}", pl::file_stem(&s), pl::file_stem(&p)));
            PathBuf::from(o)
        };
        let (csv, svg) = pl::render_heatmap(&table, &s, &p, &prefix, a.window)?;
        eprintln!("wrote {} and {}", csv.display(), svg.display());
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    let records = pl::read_records(&a.run.join(pl::RECORDS_FILE))?;
    let text = pl::summarize(records.iter().map(|(k, r)| (k, r)), &cfg, a.top);
    match &a.out {
        Some(p) => pl::write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Normal(a) => cmd_normal(a),
        Command::Score(a) => cmd_score(a),
        Command::Deconstruct(a) => cmd_deconstruct(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
