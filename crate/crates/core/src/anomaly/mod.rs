//! Normal model, anomaly score and its deconstruction into per-parameter
//! contributions.
//!
//! The anomaly score of a fitted signature `s` with trace `z` is the
//! single-wafer negative log joint under the frozen normal model
//! `(sigma*, mu*, sigma_S*)`:
//!
//! ```text
//! anom(s) = ln(sigma*^2)/2 * n + ssr(s, z) / (2 sigma*^2) + sum_d ln(sigma*_S,d) + prior(s)
//! ```

mod monitor;

pub use monitor::{detect_changepoints, detect_spikes, standardize, standardize_rolling};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{
    data_term, fit_lot, prior_neg_log, FitConfig, Hyperparams, LotFit, PriorExponent,
    WaferObjective,
};
use crate::oscillator::{ssr, Param, ShapeSignature, TraceSeries, TripleKey, NPARAM};

/// Smallest pool of wafers accepted for the initial fit.
pub const MIN_NORMAL_WAFERS: usize = 8;

/// Frozen hyperparameters defining normal operation of one triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalModel {
    pub sigma_star: f64,
    pub mu_star: [f64; NPARAM],
    pub sigma_star_s: [f64; NPARAM],
    pub source_lots: Vec<String>,
    pub triple: TripleKey,
    pub prior_exponent: PriorExponent,
}

impl NormalModel {
    pub fn from_hyper(
        hyper: &Hyperparams,
        triple: TripleKey,
        source_lots: Vec<String>,
        prior_exponent: PriorExponent,
    ) -> Self {
        NormalModel {
            sigma_star: hyper.sigma,
            mu_star: hyper.mu_s,
            sigma_star_s: hyper.sigma_s,
            source_lots,
            triple,
            prior_exponent,
        }
    }

    pub fn hyper(&self) -> Hyperparams {
        Hyperparams {
            sigma: self.sigma_star,
            mu_s: self.mu_star,
            sigma_s: self.sigma_star_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper().validate()?;
        if self.source_lots.is_empty() {
            return Err(Error::domain("normal model lists no source lots"));
        }
        Ok(())
    }

    /// Score of a perfect fit at the prior mean:
    /// `ln(sigma*^2)/2 * n + sum_d ln(sigma*_S,d)`.
    pub fn baseline(&self, n: usize) -> f64 {
        data_term(self.sigma_star, n, 0.0) + self.sigma_star_s.iter().map(|v| v.ln()).sum::<f64>()
    }

    fn objective<'a>(&self, trace: &'a TraceSeries) -> WaferObjective<'a> {
        WaferObjective {
            trace,
            inv_sigma2: 1.0 / (self.sigma_star * self.sigma_star),
            prior: Some(self.hyper().prior_term(self.prior_exponent)),
        }
    }
}

/// Per-wafer monitoring output.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyRecord {
    pub wafer_id: String,
    pub lot_id: String,
    pub sequence_index: usize,
    pub score: f64,
    pub ssr: f64,
    /// `d anom / d(gamma, R, omega, y, phi, c, x)`.
    pub gradient: [f64; NPARAM],
    pub signature: ShapeSignature,
}

/// Learns the normal model from the initial wafers of one triple. The wafers
/// are pooled into a single fit regardless of lot membership.
pub fn fit_normal_model(initial_traces: &[TraceSeries], cfg: &FitConfig) -> Result<NormalModel> {
    Ok(fit_normal_model_detailed(initial_traces, cfg)?.0)
}

/// As [`fit_normal_model`], also returning the pooled fit.
pub fn fit_normal_model_detailed(
    initial_traces: &[TraceSeries],
    cfg: &FitConfig,
) -> Result<(NormalModel, LotFit)> {
    if initial_traces.len() < MIN_NORMAL_WAFERS {
        return Err(Error::validation(format!(
            "the initial fit needs at least {MIN_NORMAL_WAFERS} wafers, got {}",
            initial_traces.len()
        )));
    }
    let triple = initial_traces[0].triple();
    if let Some(other) = initial_traces.iter().find(|t| t.triple() != triple) {
        return Err(Error::validation(format!(
            "initial wafers mix triples {triple} and {}",
            other.triple()
        )));
    }
    let mut ordered: Vec<&TraceSeries> = initial_traces.iter().collect();
    ordered.sort_by_key(|t| t.sequence_index);
    let mut seen = BTreeSet::new();
    let source_lots: Vec<String> = ordered
        .iter()
        .filter(|t| seen.insert(t.lot_id.clone()))
        .map(|t| t.lot_id.clone())
        .collect();

    let fit = fit_lot(initial_traces, cfg, None)?;
    let nm = NormalModel::from_hyper(&fit.hyper, triple, source_lots, cfg.prior_exponent);
    Ok((nm, fit))
}

pub fn score(s: &ShapeSignature, trace: &TraceSeries, nm: &NormalModel) -> f64 {
    data_term(nm.sigma_star, trace.len(), ssr(s, trace))
        + prior_neg_log(s, &nm.mu_star, &nm.sigma_star_s, nm.prior_exponent)
}

pub fn score_gradient(s: &ShapeSignature, trace: &TraceSeries, nm: &NormalModel) -> [f64; NPARAM] {
    nm.objective(trace).derivatives(s).1
}

pub fn score_hessian(
    s: &ShapeSignature,
    trace: &TraceSeries,
    nm: &NormalModel,
) -> [[f64; NPARAM]; NPARAM] {
    nm.objective(trace).derivatives(s).2
}

/// Gradient at the (unobserved) change point, approximated by a first-order
/// expansion about the wafer before it, evaluated halfway to the wafer after:
/// `grad(s_bef) + hess(s_bef) (s_aft - s_bef) / 2`.
pub fn changepoint_gradient(
    s_bef: &ShapeSignature,
    s_aft: &ShapeSignature,
    trace_bef: &TraceSeries,
    nm: &NormalModel,
) -> [f64; NPARAM] {
    let (_, g, h) = nm.objective(trace_bef).derivatives(s_bef);
    let (a, b) = (s_aft.to_array(), s_bef.to_array());
    let mut out = g;
    for i in 0..NPARAM {
        for j in 0..NPARAM {
            out[i] += h[i][j] * (a[j] - b[j]) / 2.0;
        }
    }
    out
}

pub fn score_wafer(s: &ShapeSignature, trace: &TraceSeries, nm: &NormalModel) -> AnomalyRecord {
    AnomalyRecord {
        wafer_id: trace.wafer_id.clone(),
        lot_id: trace.lot_id.clone(),
        sequence_index: trace.sequence_index,
        score: score(s, trace, nm),
        ssr: ssr(s, trace),
        gradient: score_gradient(s, trace, nm),
        signature: *s,
    }
}

/// Parameters ordered by decreasing gradient magnitude, signs preserved.
/// Ties keep the canonical parameter order.
pub fn rank_contributors(gradient: &[f64; NPARAM]) -> Vec<(Param, f64)> {
    let mut ranked: Vec<(Param, f64)> = Param::ALL.iter().map(|p| (*p, gradient[p.index()])).collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    ranked
}
