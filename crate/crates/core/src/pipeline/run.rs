//! Batch fitting and scoring over every triple of a dataset.

use rayon::prelude::*;

use crate::anomaly::{fit_normal_model_detailed, score_wafer, AnomalyRecord, NormalModel, MIN_NORMAL_WAFERS};
use crate::error::{Error, Result};
use crate::fit::{fit_lot, LotFit};
use crate::oscillator::{ShapeSignature, TraceSeries, TripleKey};

use super::config::PipelineConfig;
use super::ingest::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct LotSummary {
    pub lot: String,
    pub wafers: usize,
    pub rounds: usize,
    pub converged: bool,
    pub objective: f64,
    /// Set when the lot could not be fitted; its wafers have no records.
    pub error: Option<String>,
}

/// Everything produced for one triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleResult {
    pub triple: TripleKey,
    pub normal_model: NormalModel,
    /// One record per fitted wafer, in time order.
    pub records: Vec<AnomalyRecord>,
    /// The pooled initial fit first, then every later lot.
    pub lots: Vec<LotSummary>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub triples: Vec<TripleResult>,
    /// Triples that could not be processed, with the reason.
    pub skipped: Vec<(TripleKey, String)>,
    pub warnings: Vec<String>,
}

/// Lots of a triple in order of their first wafer.
fn split_lots(traces: &[TraceSeries]) -> Vec<(String, Vec<TraceSeries>)> {
    let mut lots: Vec<(String, Vec<TraceSeries>)> = Vec::new();
    for t in traces {
        match lots.iter_mut().find(|(l, _)| *l == t.lot_id) {
            Some((_, v)) => v.push(t.clone()),
            None => lots.push((t.lot_id.clone(), vec![t.clone()])),
        }
    }
    lots
}

fn summary(lot: &str, wafers: usize, fit: &LotFit) -> LotSummary {
    LotSummary {
        lot: lot.to_owned(),
        wafers,
        rounds: fit.rounds,
        converged: fit.converged,
        objective: *fit.objective_history.last().unwrap_or(&f64::NAN),
        error: None,
    }
}

struct Prepared {
    triple: TripleKey,
    nm: NormalModel,
    initial: Vec<(TraceSeries, ShapeSignature)>,
    initial_summary: LotSummary,
    later: Vec<(String, Vec<TraceSeries>)>,
    warnings: Vec<String>,
}

fn prepare(ds: &Dataset, key: &TripleKey, cfg: &PipelineConfig) -> std::result::Result<Prepared, String> {
    let mut lots = split_lots(ds.triple_traces(key));
    let mut warnings = Vec::new();
    let take = if lots.len() <= cfg.initial_lots {
        warnings.push(format!(
            "{key}: only {} lot(s); all of them form the normal model and nothing is left to monitor",
            lots.len()
        ));
        lots.len()
    } else {
        cfg.initial_lots
    };
    let later = lots.split_off(take);
    let initial: Vec<TraceSeries> = lots.into_iter().flat_map(|(_, v)| v).collect();
    if initial.len() < MIN_NORMAL_WAFERS {
        return Err(format!(
            "initial lots hold {} wafers, fewer than the {MIN_NORMAL_WAFERS} required",
            initial.len()
        ));
    }
    let (nm, fit) = fit_normal_model_detailed(&initial, &cfg.fit).map_err(|e| e.to_string())?;
    if !fit.converged {
        warnings.push(format!("{key}: initial fit stopped after {} rounds without converging", fit.rounds));
    }
    let initial_summary = summary(&nm.source_lots.join("+"), initial.len(), &fit);
    Ok(Prepared {
        triple: key.clone(),
        nm,
        initial: initial.into_iter().zip(fit.signatures).collect(),
        initial_summary,
        later,
        warnings,
    })
}

fn run_inner(ds: &Dataset, cfg: &PipelineConfig) -> RunOutput {
    let keys: Vec<TripleKey> = ds.triples().cloned().collect();
    let prepared: Vec<std::result::Result<Prepared, String>> =
        keys.par_iter().map(|k| prepare(ds, k, cfg)).collect();

    let mut out = RunOutput::default();
    let mut ready = Vec::new();
    for (key, p) in keys.into_iter().zip(prepared) {
        match p {
            Ok(p) => {
                out.warnings.extend(p.warnings.iter().cloned());
                ready.push(p);
            }
            Err(reason) => out.skipped.push((key, reason)),
        }
    }

    // Later lots of every triple are independent jobs.
    let jobs: Vec<(usize, usize)> = ready
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.later.len()).map(move |j| (i, j)))
        .collect();
    let fits: Vec<Result<LotFit>> = jobs
        .par_iter()
        .map(|&(i, j)| fit_lot(&ready[i].later[j].1, &cfg.fit, Some(&ready[i].nm.hyper())))
        .collect();
    let mut fits = fits.into_iter();

    for p in ready {
        let nm = p.nm;
        let mut records: Vec<AnomalyRecord> = p
            .initial
            .iter()
            .map(|(t, s)| score_wafer(s, t, &nm))
            .collect();
        let mut lots = vec![p.initial_summary];
        for (lot, traces) in &p.later {
            match fits.next().expect("one fit per job") {
                Ok(fit) => {
                    if !fit.converged {
                        out.warnings.push(format!(
                            "{}: lot {lot} stopped after {} rounds without converging",
                            p.triple, fit.rounds
                        ));
                    }
                    lots.push(summary(lot, traces.len(), &fit));
                    records.extend(traces.iter().zip(&fit.signatures).map(|(t, s)| score_wafer(s, t, &nm)));
                }
                Err(e) => {
                    out.warnings.push(format!("{}: lot {lot} failed: {e}", p.triple));
                    lots.push(LotSummary {
                        lot: lot.clone(),
                        wafers: traces.len(),
                        rounds: 0,
                        converged: false,
                        objective: f64::NAN,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        records.sort_by_key(|r| r.sequence_index);
        out.triples.push(TripleResult {
            triple: p.triple,
            normal_model: nm,
            records,
            lots,
        });
    }
    out
}

/// Fits and scores every triple. For each triple the first
/// `cfg.initial_lots` lots are pooled into the normal model; every later lot
/// is fitted on its own, warm-started from the normal model. Results do not
/// depend on the number of workers.
pub fn run_fit(ds: &Dataset, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::validation("dataset has no traces"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| run_inner(ds, cfg)))
}

/// Fits the wafers of one triple lot by lot against a given normal model and
/// scores them.
pub fn score_with_model(traces: &[TraceSeries], nm: &NormalModel, cfg: &PipelineConfig) -> Result<Vec<AnomalyRecord>> {
    let lots = split_lots(traces);
    let fits: Vec<Result<LotFit>> = lots
        .par_iter()
        .map(|(_, t)| fit_lot(t, &cfg.fit, Some(&nm.hyper())))
        .collect();
    let mut records = Vec::with_capacity(traces.len());
    for ((_, t), fit) in lots.iter().zip(fits) {
        let fit = fit?;
        records.extend(t.iter().zip(&fit.signatures).map(|(t, s)| score_wafer(s, t, nm)));
    }
    records.sort_by_key(|r| r.sequence_index);
    Ok(records)
}
