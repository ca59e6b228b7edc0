//! Flat `key = value` documents: the run configuration and the normal-model
//! file.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::anomaly::NormalModel;
use crate::error::{Error, Result};
use crate::fit::{FitConfig, PriorExponent};
use crate::oscillator::{Param, TripleKey, NPARAM};

/// Parses a flat key-value document into `(line, key, value)` entries.
pub fn parse_kv(text: &str) -> std::result::Result<Vec<(usize, String, String)>, Vec<String>> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    let mut keys = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            problems.push(format!("line {}: expected `key = value`", i + 1));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            problems.push(format!("line {}: empty key", i + 1));
        } else if !keys.insert(k.to_owned()) {
            problems.push(format!("line {}: duplicate key {k:?}", i + 1));
        } else {
            out.push((i + 1, k.to_owned(), v.to_owned()));
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(problems)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, problems: Vec<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: problems.join("; "),
    }
}

/// Options of a batch run: fitting settings plus orchestration knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fit: FitConfig,
    /// Lots pooled into the normal model of each triple.
    pub initial_lots: usize,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    pub lot_size: Option<usize>,
    pub force: bool,
    /// Trailing window for standardization; `None` uses the whole period.
    pub standardize_window: Option<usize>,
    pub spike_z: f64,
    pub changepoint_window: usize,
    pub changepoint_z: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fit: FitConfig::default(),
            initial_lots: 4,
            workers: 0,
            lot_size: None,
            force: false,
            standardize_window: None,
            spike_z: 3.0,
            changepoint_window: 8,
            changepoint_z: 3.0,
        }
    }
}

/// Keys accepted in a configuration file, with a one-line description each.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("newton_tol", "relative objective decrease that stops Newton refinement"),
    ("newton_max_iters", "Newton iteration cap per wafer"),
    ("bcd_tol", "relative hyperparameter change that ends block coordinate descent"),
    ("bcd_max_rounds", "block coordinate descent round cap"),
    ("damping_init", "initial Hessian shift when it is not positive definite"),
    ("sigma_floor", "lower bound on the noise std"),
    ("sigma_s_floor", "lower bound on every prior std"),
    ("multistart_count", "spectral peaks tried as starting frequencies"),
    ("prior_exponent", "`variance` (default) or `std`"),
    ("init_prior_inflation", "prior widening for the first round of a cold fit"),
    ("initial_lots", "lots pooled into each normal model"),
    ("workers", "worker threads, 0 for all cores"),
    ("lot_size", "wafers per lot when the lot column is empty"),
    ("force", "accept inputs with more than 1% rejected rows"),
    ("standardize_window", "trailing window for z-scores, 0 for the whole period"),
    ("spike_z", "z threshold of the spike detector"),
    ("changepoint_window", "window of the change-point detector"),
    ("changepoint_z", "z threshold of the change-point detector"),
];

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        let f = &mut self.fit;
        match key {
            "newton_tol" => f.newton_tol = num(key, value)?,
            "newton_max_iters" => f.newton_max_iters = num(key, value)?,
            "bcd_tol" => f.bcd_tol = num(key, value)?,
            "bcd_max_rounds" => f.bcd_max_rounds = num(key, value)?,
            "damping_init" => f.damping_init = num(key, value)?,
            "sigma_floor" => f.sigma_floor = num(key, value)?,
            "sigma_s_floor" => f.sigma_s_floor = num(key, value)?,
            "multistart_count" => f.multistart_count = num(key, value)?,
            "prior_exponent" => {
                f.prior_exponent = PriorExponent::parse(value)
                    .ok_or_else(|| format!("prior_exponent: expected `variance` or `std`, got {value:?}"))?
            }
            "init_prior_inflation" => f.init_prior_inflation = num(key, value)?,
            "initial_lots" => self.initial_lots = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "lot_size" => {
                let n: usize = num(key, value)?;
                self.lot_size = (n > 0).then_some(n);
            }
            "force" => self.force = num(key, value)?,
            "standardize_window" => {
                let n: usize = num(key, value)?;
                self.standardize_window = (n > 0).then_some(n);
            }
            "spike_z" => self.spike_z = num(key, value)?,
            "changepoint_window" => self.changepoint_window = num(key, value)?,
            "changepoint_z" => self.changepoint_z = num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> std::result::Result<Self, Vec<String>> {
        let mut cfg = PipelineConfig::default();
        let mut problems = Vec::new();
        for (line, k, v) in parse_kv(text)? {
            if let Err(e) = cfg.set(&k, &v) {
                problems.push(format!("line {line}: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(problems)
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg = Self::parse(&read_text(path)?).map_err(|p| parse_error(path, p))?;
        cfg.validate().map_err(|e| match e {
            Error::Validation(p) => parse_error(path, p),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = match self.fit.validate() {
            Ok(()) => Vec::new(),
            Err(Error::Validation(p)) => p,
            Err(e) => vec![e.to_string()],
        };
        if self.initial_lots == 0 {
            problems.push("initial_lots must be >= 1".into());
        }
        if self.changepoint_window < 2 {
            problems.push("changepoint_window must be >= 2".into());
        }
        for (k, v) in [("spike_z", self.spike_z), ("changepoint_z", self.changepoint_z)] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{k} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Serializes a normal model as a flat key-value document.
pub fn normal_model_to_string(nm: &NormalModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "tool = {}", nm.triple.tool);
    let _ = writeln!(s, "sensor = {}", nm.triple.sensor);
    let _ = writeln!(s, "step = {}", nm.triple.step);
    let _ = writeln!(s, "prior_exponent = {}", nm.prior_exponent.name());
    let _ = writeln!(s, "source_lots = {}", nm.source_lots.join(","));
    let _ = writeln!(s, "sigma_star = {}", nm.sigma_star);
    for p in Param::ALL {
        let _ = writeln!(s, "mu_star.{} = {}", p.name(), nm.mu_star[p.index()]);
    }
    for p in Param::ALL {
        let _ = writeln!(s, "sigma_star_s.{} = {}", p.name(), nm.sigma_star_s[p.index()]);
    }
    s
}

pub fn parse_normal_model(text: &str) -> std::result::Result<NormalModel, Vec<String>> {
    let entries = parse_kv(text)?;
    let get = |k: &str| entries.iter().find(|e| e.1 == k).map(|e| e.2.as_str());
    let mut problems = Vec::new();
    let mut text_field = |k: &str| match get(k) {
        Some(v) if !v.is_empty() => v.to_owned(),
        _ => {
            problems.push(format!("missing {k}"));
            String::new()
        }
    };
    let triple = TripleKey {
        tool: text_field("tool"),
        sensor: text_field("sensor"),
        step: text_field("step"),
    };
    let lots = text_field("source_lots");
    let mut number = |k: &str| match get(k).map(str::parse::<f64>) {
        Some(Ok(v)) => v,
        Some(Err(_)) => {
            problems.push(format!("{k}: not a number"));
            f64::NAN
        }
        None => {
            problems.push(format!("missing {k}"));
            f64::NAN
        }
    };
    let sigma_star = number("sigma_star");
    let mut mu_star = [0.0; NPARAM];
    let mut sigma_star_s = [0.0; NPARAM];
    for p in Param::ALL {
        mu_star[p.index()] = number(&format!("mu_star.{}", p.name()));
        sigma_star_s[p.index()] = number(&format!("sigma_star_s.{}", p.name()));
    }
    let prior_exponent = match get("prior_exponent") {
        None => PriorExponent::default(),
        Some(v) => PriorExponent::parse(v).unwrap_or_else(|| {
            problems.push(format!("prior_exponent: unknown value {v:?}"));
            PriorExponent::default()
        }),
    };
    let known: BTreeSet<String> = ["tool", "sensor", "step", "prior_exponent", "source_lots", "sigma_star"]
        .iter()
        .map(|s| s.to_string())
        .chain(Param::ALL.iter().flat_map(|p| {
            [format!("mu_star.{}", p.name()), format!("sigma_star_s.{}", p.name())]
        }))
        .collect();
    for (line, k, _) in &entries {
        if !known.contains(k) {
            problems.push(format!("line {line}: unknown key {k:?}"));
        }
    }
    let nm = NormalModel {
        sigma_star,
        mu_star,
        sigma_star_s,
        source_lots: lots.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect(),
        triple,
        prior_exponent,
    };
    if problems.is_empty() {
        if let Err(e) = nm.validate() {
            problems.push(e.to_string());
        }
    }
    if problems.is_empty() {
        Ok(nm)
    } else {
        Err(problems)
    }
}

pub fn read_normal_model(path: &Path) -> Result<NormalModel> {
    parse_normal_model(&read_text(path)?).map_err(|p| parse_error(path, p))
}

pub fn write_normal_model(nm: &NormalModel, path: &Path) -> Result<()> {
    std::fs::write(path, normal_model_to_string(nm)).map_err(|e| Error::io(path, e))
}
