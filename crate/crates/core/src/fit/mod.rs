//! Lot-wise MAP estimation of shape signatures.
//!
//! For a lot of wafers the negative log joint
//!
//! ```text
//! sum_m [ ln(sigma^2)/2 * n_m + ssr_m / (2 sigma^2) + sum_d ln(sigma_S,d) + prior_m ]
//! ```
//!
//! is minimized by block coordinate descent: each wafer's signature is refined
//! by box-constrained modified Newton with the hyperparameters fixed, then the
//! hyperparameters are set to their closed-form minimizers.

mod init;
mod newton;
mod objective;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oscillator::{ssr, Param, ShapeSignature, TraceSeries, NPARAM};

pub use init::init_signature;
pub(crate) use objective::{PriorTerm, WaferObjective};

use init::start_candidates;
use newton::{minimize, minimize_multistart};

/// How the prior quadratic is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorExponent {
    /// `0.5 * sum_d (s_d - mu_d)^2 / sigma_S,d^2`, the Gaussian-consistent form.
    #[default]
    Variance,
    /// `0.5 * sum_d (s_d - mu_d)^2 / sigma_S,d`, the literal diag(sigma_S)^-1 norm.
    Std,
}

impl PriorExponent {
    pub fn name(self) -> &'static str {
        match self {
            PriorExponent::Variance => "variance",
            PriorExponent::Std => "std",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "variance" => Some(PriorExponent::Variance),
            "std" => Some(PriorExponent::Std),
            _ => None,
        }
    }
}

/// Noise std and the diagonal Gaussian prior over signatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub sigma: f64,
    pub mu_s: [f64; NPARAM],
    pub sigma_s: [f64; NPARAM],
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be positive (got {})", self.sigma)));
        }
        if self.mu_s.iter().any(|v| !v.is_finite())
            || self.sigma_s.iter().any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::domain("prior mean must be finite and prior stds positive"));
        }
        Ok(())
    }

    pub(crate) fn prior_term(&self, exponent: PriorExponent) -> PriorTerm {
        PriorTerm::new(self.mu_s, self.sigma_s, exponent)
    }

    pub fn mean_signature(&self) -> ShapeSignature {
        ShapeSignature::from_array(self.mu_s).project()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub bcd_tol: f64,
    pub bcd_max_rounds: usize,
    pub damping_init: f64,
    pub sigma_floor: f64,
    pub sigma_s_floor: f64,
    pub multistart_count: usize,
    pub prior_exponent: PriorExponent,
    /// Widening factor for the prior used in the first BCD round when no warm
    /// hyperparameters are supplied.
    pub init_prior_inflation: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            newton_tol: 1e-8,
            newton_max_iters: 200,
            bcd_tol: 1e-6,
            bcd_max_rounds: 50,
            damping_init: 1e-3,
            sigma_floor: 1e-6,
            sigma_s_floor: 1e-4,
            multistart_count: 3,
            prior_exponent: PriorExponent::Variance,
            init_prior_inflation: 10.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("newton_tol", self.newton_tol),
            ("bcd_tol", self.bcd_tol),
            ("damping_init", self.damping_init),
            ("sigma_floor", self.sigma_floor),
            ("sigma_s_floor", self.sigma_s_floor),
            ("init_prior_inflation", self.init_prior_inflation),
        ];
        let mut problems: Vec<String> = positive
            .iter()
            .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
            .map(|(k, v)| format!("{k} must be positive (got {v})"))
            .collect();
        for (k, v) in [
            ("newton_max_iters", self.newton_max_iters),
            ("bcd_max_rounds", self.bcd_max_rounds),
            ("multistart_count", self.multistart_count),
        ] {
            if v == 0 {
                problems.push(format!("{k} must be >= 1"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Result of fitting one lot.
#[derive(Debug, Clone, PartialEq)]
pub struct LotFit {
    /// One signature per input trace, in input order.
    pub signatures: Vec<ShapeSignature>,
    pub hyper: Hyperparams,
    /// Objective after initialization and after every block update.
    pub objective_history: Vec<f64>,
    pub per_wafer_ssr: Vec<f64>,
    pub converged: bool,
    pub rounds: usize,
}

/// Per-wafer data term `ln(sigma^2)/2 * n + ssr / (2 sigma^2)`.
pub(crate) fn data_term(sigma: f64, n: usize, ssr: f64) -> f64 {
    (sigma * sigma).ln() / 2.0 * n as f64 + ssr / (2.0 * sigma * sigma)
}

/// Per-wafer prior term `sum_d ln(sigma_S,d) + quadratic`.
pub(crate) fn prior_neg_log(s: &ShapeSignature, mu: &[f64; NPARAM], sd: &[f64; NPARAM], e: PriorExponent) -> f64 {
    let logs: f64 = sd.iter().map(|v| v.ln()).sum();
    logs + PriorTerm::new(*mu, *sd, e).value(&s.to_array())
}

/// Negative log joint of a lot, dropping the `2 pi` constants.
pub fn neg_log_joint(
    signatures: &[ShapeSignature],
    hyper: &Hyperparams,
    traces: &[TraceSeries],
    exponent: PriorExponent,
) -> Result<f64> {
    if !(hyper.sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive (got {})", hyper.sigma)));
    }
    if signatures.len() != traces.len() {
        return Err(Error::domain(format!(
            "{} signatures for {} traces",
            signatures.len(),
            traces.len()
        )));
    }
    Ok(signatures
        .iter()
        .zip(traces)
        .map(|(s, tr)| {
            data_term(hyper.sigma, tr.len(), ssr(s, tr))
                + prior_neg_log(s, &hyper.mu_s, &hyper.sigma_s, exponent)
        })
        .sum())
}

/// Closed-form minimizer of [`neg_log_joint`] over the hyperparameters with
/// signatures held fixed, subject to the configured floors.
pub fn update_hyperparams(
    signatures: &[ShapeSignature],
    traces: &[TraceSeries],
    cfg: &FitConfig,
) -> Result<Hyperparams> {
    if signatures.is_empty() || signatures.len() != traces.len() {
        return Err(Error::domain("need at least one wafer and one trace per signature"));
    }
    let m = signatures.len() as f64;
    let total_ssr: f64 = signatures.iter().zip(traces).map(|(s, t)| ssr(s, t)).sum();
    let total_n: usize = traces.iter().map(|t| t.len()).sum();
    let sigma = (total_ssr / total_n as f64).sqrt().max(cfg.sigma_floor);

    let mut mu_s = [0.0; NPARAM];
    for s in signatures {
        for (acc, v) in mu_s.iter_mut().zip(s.to_array()) {
            *acc += v;
        }
    }
    mu_s.iter_mut().for_each(|v| *v /= m);

    let mut sq = [0.0; NPARAM];
    for s in signatures {
        for (d, v) in s.to_array().iter().enumerate() {
            sq[d] += (v - mu_s[d]) * (v - mu_s[d]);
        }
    }
    let mut sigma_s = [0.0; NPARAM];
    for d in 0..NPARAM {
        let optimum = match cfg.prior_exponent {
            PriorExponent::Variance => (sq[d] / m).sqrt(),
            PriorExponent::Std => sq[d] / (2.0 * m),
        };
        sigma_s[d] = optimum.max(cfg.sigma_s_floor);
    }
    Ok(Hyperparams { sigma, mu_s, sigma_s })
}

/// Refines one wafer's signature with the hyperparameters fixed. The
/// horizontal shift `x` is held at its value in `s0`.
pub fn newton_refine(
    s0: &ShapeSignature,
    trace: &TraceSeries,
    hyper: &Hyperparams,
    cfg: &FitConfig,
) -> Result<ShapeSignature> {
    hyper.validate()?;
    let obj = WaferObjective {
        trace,
        inv_sigma2: 1.0 / (hyper.sigma * hyper.sigma),
        prior: Some(hyper.prior_term(cfg.prior_exponent)),
    };
    minimize(&obj, s0, cfg).map(|r| r.signature)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceFit {
    pub signature: ShapeSignature,
    pub ssr: f64,
}

/// Fits one trace on its own with a flat prior (plain constrained least squares).
pub fn fit_trace(trace: &TraceSeries, cfg: &FitConfig) -> Result<TraceFit> {
    let base = init_signature(trace)?;
    let starts = start_candidates(trace, &base, cfg.multistart_count);
    let obj = WaferObjective {
        trace,
        inv_sigma2: 1.0,
        prior: None,
    };
    let best = minimize_multistart(&obj, &starts, cfg)?;
    Ok(TraceFit {
        signature: best.signature,
        ssr: ssr(&best.signature, trace),
    })
}

/// Wafers below this many observations borrow the lot's prior mean as an
/// extra starting point.
const SPARSE_OBSERVATIONS: usize = 12;

fn initial_hyper(
    inits: &[ShapeSignature],
    traces: &[TraceSeries],
    informative: &[bool],
    cfg: &FitConfig,
) -> Hyperparams {
    let (sigs, trs): (Vec<ShapeSignature>, Vec<TraceSeries>) = inits
        .iter()
        .zip(traces)
        .zip(informative)
        .filter(|(_, ok)| **ok)
        .map(|((s, t), _)| (*s, t.clone()))
        .unzip();
    let (sigs, trs) = if sigs.is_empty() {
        (inits.to_vec(), traces.to_vec())
    } else {
        (sigs, trs)
    };
    let loose = FitConfig {
        prior_exponent: PriorExponent::Variance,
        ..*cfg
    };
    let mut h = update_hyperparams(&sigs, &trs, &loose).expect("nonempty lot");
    for d in 0..NPARAM {
        let scale = h.sigma_s[d].max(0.1 * h.mu_s[d].abs()).max(0.1);
        let sd = cfg.init_prior_inflation * scale;
        h.sigma_s[d] = match cfg.prior_exponent {
            PriorExponent::Variance => sd,
            // Same quadratic weight under the literal convention.
            PriorExponent::Std => sd * sd,
        };
    }
    h
}

fn hyper_change(old: &Hyperparams, new: &Hyperparams) -> f64 {
    let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / scale.max(f64::MIN_POSITIVE);
    let mut worst = rel(old.sigma, new.sigma, old.sigma);
    for d in 0..NPARAM {
        worst = worst.max(rel(old.sigma_s[d], new.sigma_s[d], old.sigma_s[d]));
        worst = worst.max(rel(old.mu_s[d], new.mu_s[d], old.mu_s[d].abs().max(old.sigma_s[d])));
    }
    worst
}

/// Fits all wafers of one lot by block coordinate descent.
///
/// Signatures start from [`init_signature`] (plus multistart candidates in the
/// first round). Hyperparameters start from `warm_hyper` when given, otherwise
/// from a widened prior around the initial signatures.
pub fn fit_lot(
    traces: &[TraceSeries],
    cfg: &FitConfig,
    warm_hyper: Option<&Hyperparams>,
) -> Result<LotFit> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::domain("cannot fit an empty lot"));
    }
    for t in traces {
        t.validate()?;
    }
    if let Some(h) = warm_hyper {
        h.validate()?;
    }

    let inits: Vec<Option<ShapeSignature>> = traces
        .par_iter()
        .map(|t| init_signature(t).ok())
        .collect();
    let informative: Vec<bool> = traces
        .iter()
        .zip(&inits)
        .map(|(t, s)| s.is_some() && t.len() >= SPARSE_OBSERVATIONS)
        .collect();

    let fallback_mu = warm_hyper.map(|h| h.mean_signature()).or_else(|| {
        let usable: Vec<&ShapeSignature> = inits.iter().flatten().collect();
        (!usable.is_empty()).then(|| {
            let mut a = [0.0; NPARAM];
            for s in &usable {
                for (acc, v) in a.iter_mut().zip(s.to_array()) {
                    *acc += v / usable.len() as f64;
                }
            }
            ShapeSignature::from_array(a).project()
        })
    });
    let Some(fallback_mu) = fallback_mu else {
        return Err(Error::domain(
            "no wafer in the lot has two observations and no prior mean is available",
        ));
    };
    let mut current: Vec<ShapeSignature> = inits
        .iter()
        .zip(traces)
        .map(|(s, t)| s.unwrap_or_else(|| fallback_mu.with(Param::X, t.start_time())))
        .collect();

    let mut hyper = match warm_hyper {
        Some(h) => *h,
        None => initial_hyper(&current, traces, &informative, cfg),
    };
    let prior_start = hyper.mean_signature();

    let mut history = vec![neg_log_joint(&current, &hyper, traces, cfg.prior_exponent)?];
    let mut converged = false;
    let mut rounds = 0;

    while rounds < cfg.bcd_max_rounds {
        rounds += 1;
        let first_round = rounds == 1;
        let inv_sigma2 = 1.0 / (hyper.sigma * hyper.sigma);
        let prior = hyper.prior_term(cfg.prior_exponent);

        current = traces
            .par_iter()
            .zip(current.par_iter())
            .zip(informative.par_iter())
            .map(|((trace, incumbent), informative)| {
                let obj = WaferObjective {
                    trace,
                    inv_sigma2,
                    prior: Some(prior),
                };
                let mut starts = vec![*incumbent];
                if first_round {
                    if trace.len() >= 2 {
                        starts.extend(start_candidates(trace, incumbent, cfg.multistart_count).into_iter().skip(1));
                    }
                    if !informative {
                        starts.push(prior_start.with(Param::X, trace.start_time()));
                    }
                }
                // A failed refinement keeps the incumbent.
                let incumbent_value = obj.value(incumbent);
                match minimize_multistart(&obj, &starts, cfg) {
                    Ok(r) if r.objective <= incumbent_value => r.signature,
                    _ => *incumbent,
                }
            })
            .collect();
        history.push(neg_log_joint(&current, &hyper, traces, cfg.prior_exponent)?);

        let next = update_hyperparams(&current, traces, cfg)?;
        let change = hyper_change(&hyper, &next);
        hyper = next;
        history.push(neg_log_joint(&current, &hyper, traces, cfg.prior_exponent)?);
        if change < cfg.bcd_tol {
            converged = true;
            break;
        }
    }

    let per_wafer_ssr = current.iter().zip(traces).map(|(s, t)| ssr(s, t)).collect();
    Ok(LotFit {
        signatures: current,
        hyper,
        objective_history: history,
        per_wafer_ssr,
        converged,
        rounds,
    })
}
