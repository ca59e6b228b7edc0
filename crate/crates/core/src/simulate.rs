//! White-box closed-loop simulation and synthetic dataset generation.
//!
//! The closed loop is integrated numerically with classical RK4 on the
//! augmented state `(v, I)` where `I' = e = r - v`. It never evaluates the
//! oscillator closed form, so it can serve as an independent check of it.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control_map::ControlParams;
use crate::error::{Error, Result};
use crate::oscillator::{eval_vec, Param, ShapeSignature, TraceSeries, NPARAM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cp: ControlParams,
    pub v0: f64,
    pub i0: f64,
    pub dt: f64,
    pub duration: f64,
    pub sample_every: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(cp: ControlParams) -> Self {
        SimConfig {
            cp,
            v0: 0.0,
            i0: 0.0,
            dt: 0.01,
            duration: 15.0,
            sample_every: 10,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cp.validate()?;
        let mut problems = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            problems.push(format!("duration must be >= dt (got {})", self.duration));
        }
        if self.sample_every == 0 {
            problems.push("sample_every must be >= 1".to_owned());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            problems.push(format!("noise_sigma must be >= 0 (got {})", self.noise_sigma));
        }
        if !(self.v0.is_finite() && self.i0.is_finite()) {
            problems.push("initial conditions must be finite".to_owned());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    /// Controlled output `v`.
    pub v: TraceSeries,
    /// Manipulated input `u`, from the control law at each sample.
    pub u: TraceSeries,
    /// `k_p k_c > 0`; unstable configurations are simulated anyway.
    pub stable: bool,
    /// Noise-free state `(v, I)` at the last integration step.
    pub final_state: (f64, f64),
}

struct ClosedLoop {
    cp: ControlParams,
}

impl ClosedLoop {
    fn set_point(&self, t: f64) -> f64 {
        self.cp.q1 * t + self.cp.q2
    }

    fn control(&self, t: f64, v: f64, integral: f64) -> f64 {
        let e = self.set_point(t) - v;
        ControlParams::U0 + self.cp.k_c * e + self.cp.k_c / self.cp.tau_i * integral
    }

    fn rhs(&self, t: f64, v: f64, integral: f64) -> (f64, f64) {
        let u = self.control(t, v, integral);
        let dv = (-v + self.cp.k_p * u) / self.cp.tau_p;
        (dv, self.set_point(t) - v)
    }

    fn rk4_step(&self, t: f64, (v, i): (f64, f64), h: f64) -> (f64, f64) {
        let k1 = self.rhs(t, v, i);
        let k2 = self.rhs(t + h / 2.0, v + h / 2.0 * k1.0, i + h / 2.0 * k1.1);
        let k3 = self.rhs(t + h / 2.0, v + h / 2.0 * k2.0, i + h / 2.0 * k2.1);
        let k4 = self.rhs(t + h, v + h * k3.0, i + h * k3.1);
        (
            v + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            i + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        )
    }
}

pub fn simulate_closed_loop(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let sys = ClosedLoop { cp: cfg.cp };
    let n_steps = (cfg.duration / cfg.dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::domain(e.to_string()))?;

    let capacity = n_steps / cfg.sample_every + 1;
    let mut times = Vec::with_capacity(capacity);
    let mut vs = Vec::with_capacity(capacity);
    let mut us = Vec::with_capacity(capacity);

    let mut state = (cfg.v0, cfg.i0);
    for step in 0..=n_steps {
        let t = step as f64 * cfg.dt;
        if step % cfg.sample_every == 0 {
            let u = sys.control(t, state.0, state.1);
            times.push(t);
            vs.push(state.0 + noise.sample(&mut rng));
            us.push(u + noise.sample(&mut rng));
        }
        if step < n_steps {
            state = sys.rk4_step(t, state, cfg.dt);
        }
    }

    Ok(SimResult {
        v: TraceSeries::new(times.clone(), vs)?,
        u: TraceSeries::new(times, us)?,
        stable: cfg.cp.loop_gain() > 0.0,
        final_state: state,
    })
}

/// Samples the oscillator at `times` and adds seeded Gaussian noise.
pub fn synth_from_signature(
    s: &ShapeSignature,
    times: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<TraceSeries> {
    let mut values = eval_vec(s, times)?;
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::domain(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in values.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    } else if noise_sigma < 0.0 || noise_sigma.is_nan() {
        return Err(Error::domain("noise_sigma must be >= 0"));
    }
    TraceSeries::new(times.to_vec(), values)
}

/// Derives an independent RNG seed from a base seed and a string key, so that
/// every trace gets its own stream regardless of generation order.
pub fn stream_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a over the key, then a splitmix64 finalizer over (seed ^ hash).
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Generation plans

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub seed: u64,
    #[serde(rename = "triple")]
    pub triples: Vec<TriplePlan>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriplePlan {
    pub tool: String,
    pub sensor: String,
    pub step: String,
    pub lots: usize,
    pub wafers_per_lot: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub signature: Option<SignatureModel>,
    #[serde(default)]
    pub control: Option<ControlModel>,
    #[serde(default, rename = "anomaly")]
    pub anomalies: Vec<Injection>,
}

/// Traces sampled directly from a jittered oscillator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignatureModel {
    pub base: ShapeSignature,
    /// Per-wafer absolute jitter std for each component, `gamma..x` order.
    #[serde(default)]
    pub jitter: [f64; NPARAM],
    pub start: f64,
    pub duration: f64,
    pub points: usize,
    /// Std of a per-wafer offset added to the step start time.
    #[serde(default)]
    pub start_jitter: f64,
}

/// Traces from the RK4 closed loop with jittered control parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlModel {
    pub cp: ControlParams,
    #[serde(default)]
    pub v0: f64,
    #[serde(default)]
    pub i0: f64,
    pub dt: f64,
    pub duration: f64,
    pub sample_every: usize,
    /// Samples earlier than this are dropped from the emitted trace.
    #[serde(default)]
    pub discard: f64,
    /// Absolute jitter std for `k_p, k_c, tau_p, tau_i, q1, q2`.
    #[serde(default)]
    pub jitter: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    /// Applied to one wafer only.
    Spike,
    /// Applied from the given wafer onward.
    ChangePoint,
}

impl InjectionKind {
    pub fn name(self) -> &'static str {
        match self {
            InjectionKind::Spike => "spike",
            InjectionKind::ChangePoint => "change_point",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Injection {
    /// Sequence index of the (first) affected wafer within the triple.
    pub wafer: usize,
    pub param: String,
    pub delta: f64,
    pub kind: InjectionKind,
}

pub const CONTROL_PARAM_NAMES: [&str; 6] = ["k_p", "k_c", "tau_p", "tau_i", "q1", "q2"];

fn control_to_array(cp: &ControlParams) -> [f64; 6] {
    [cp.k_p, cp.k_c, cp.tau_p, cp.tau_i, cp.q1, cp.q2]
}

fn control_from_array(a: [f64; 6]) -> ControlParams {
    ControlParams {
        k_p: a[0],
        k_c: a[1],
        tau_p: a[2],
        tau_i: a[3],
        q1: a[4],
        q2: a[5],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TruthParams {
    Signature(ShapeSignature),
    Control(ControlParams),
}

impl TruthParams {
    /// `(name, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        match self {
            TruthParams::Signature(s) => Param::ALL
                .iter()
                .map(|p| (p.name(), s.get(*p)))
                .collect(),
            TruthParams::Control(cp) => CONTROL_PARAM_NAMES
                .iter()
                .copied()
                .zip(control_to_array(cp))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tool: String,
    pub sensor: String,
    pub step: String,
    pub wafer_id: String,
    pub params: TruthParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectedAnomaly {
    pub tool: String,
    pub sensor: String,
    pub step: String,
    pub wafer_id: String,
    pub param: String,
    pub delta: f64,
    pub kind: InjectionKind,
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticDataset {
    /// Sorted by (tool, sensor, step, sequence index).
    pub traces: Vec<TraceSeries>,
    pub ground_truth: Vec<GroundTruth>,
    pub injected_anomalies: Vec<InjectedAnomaly>,
    /// Wafers whose (jittered) control parameters are unstable.
    pub unstable: Vec<String>,
}

pub fn wafer_id(tool: &str, seq: usize) -> String {
    format!("{tool}-W{seq:04}")
}

pub fn lot_id(tool: &str, lot: usize) -> String {
    format!("{tool}-L{lot:03}")
}

impl GenerationPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("generation plan: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        let mut tool_shape: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for (i, t) in self.triples.iter().enumerate() {
            let tag = format!("triple[{i}] ({}, {}, {})", t.tool, t.sensor, t.step);
            if !seen.insert((&t.tool, &t.sensor, &t.step)) {
                problems.push(format!("{tag}: duplicate triple"));
            }
            if t.lots == 0 || t.wafers_per_lot == 0 {
                problems.push(format!("{tag}: lots and wafers_per_lot must be >= 1"));
            }
            match tool_shape.get(t.tool.as_str()) {
                Some(&shape) if shape != (t.lots, t.wafers_per_lot) => problems.push(format!(
                    "{tag}: tool {} already declared with {} lots x {} wafers",
                    t.tool, shape.0, shape.1
                )),
                _ => {
                    tool_shape.insert(&t.tool, (t.lots, t.wafers_per_lot));
                }
            }
            if !(t.noise_sigma >= 0.0 && t.noise_sigma.is_finite()) {
                problems.push(format!("{tag}: noise_sigma must be >= 0"));
            }
            let names: &[&str] = match (&t.signature, &t.control) {
                (Some(m), None) => {
                    if m.points == 0 || !(m.duration > 0.0) {
                        problems.push(format!("{tag}: need points >= 1 and duration > 0"));
                    }
                    if !m.base.is_finite() || !m.base.in_box() {
                        problems.push(format!("{tag}: base signature invalid"));
                    }
                    if m.jitter.iter().chain([&m.start_jitter]).any(|j| !(*j >= 0.0)) {
                        problems.push(format!("{tag}: jitter stds must be >= 0"));
                    }
                    &["gamma", "R", "omega", "y", "phi", "c", "x"]
                }
                (None, Some(m)) => {
                    if let Err(e) = m.cp.validate() {
                        problems.push(format!("{tag}: {e}"));
                    }
                    if !(m.dt > 0.0) || !(m.duration >= m.dt) || m.sample_every == 0 {
                        problems.push(format!("{tag}: need dt > 0, duration >= dt, sample_every >= 1"));
                    }
                    if m.discard >= m.duration {
                        problems.push(format!("{tag}: discard leaves no samples"));
                    }
                    if m.jitter.iter().any(|j| !(*j >= 0.0)) {
                        problems.push(format!("{tag}: jitter stds must be >= 0"));
                    }
                    &CONTROL_PARAM_NAMES
                }
                _ => {
                    problems.push(format!("{tag}: exactly one of `signature` or `control` is required"));
                    &[]
                }
            };
            let n_wafers = t.lots * t.wafers_per_lot;
            for (j, a) in t.anomalies.iter().enumerate() {
                if a.wafer >= n_wafers {
                    problems.push(format!(
                        "{tag}: anomaly[{j}] references wafer {} but the triple has {n_wafers}",
                        a.wafer
                    ));
                }
                if !names.is_empty() && !names.contains(&a.param.as_str()) {
                    problems.push(format!("{tag}: anomaly[{j}] has unknown parameter {:?}", a.param));
                }
                if !a.delta.is_finite() {
                    problems.push(format!("{tag}: anomaly[{j}] delta must be finite"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

fn injected_delta(anomalies: &[Injection], seq: usize, name: &str) -> f64 {
    anomalies
        .iter()
        .filter(|a| a.param == name)
        .filter(|a| match a.kind {
            InjectionKind::Spike => a.wafer == seq,
            InjectionKind::ChangePoint => seq >= a.wafer,
        })
        .map(|a| a.delta)
        .sum()
}

struct WaferOutput {
    trace: TraceSeries,
    truth: GroundTruth,
    unstable: bool,
}

fn generate_wafer(seed: u64, t: &TriplePlan, seq: usize) -> Result<WaferOutput> {
    let wafer = wafer_id(&t.tool, seq);
    let lot = lot_id(&t.tool, seq / t.wafers_per_lot);
    let key = format!("{}\u{1f}{}\u{1f}{}\u{1f}{}", t.tool, t.sensor, t.step, wafer);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("jitter\u{1f}{key}")));
    let noise_seed = stream_seed(seed, &format!("noise\u{1f}{key}"));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let (trace, params, unstable) = if let Some(m) = &t.signature {
        let mut a = m.base.to_array();
        for (p, v) in Param::ALL.iter().zip(a.iter_mut()) {
            *v += m.jitter[p.index()] * std_normal.sample(&mut rng);
            *v += injected_delta(&t.anomalies, seq, p.name());
        }
        let offset = m.start_jitter * std_normal.sample(&mut rng);
        a[Param::X.index()] += offset;
        let s = ShapeSignature::from_array(a).project();
        let start = m.start + offset;
        let step = if m.points > 1 { m.duration / (m.points - 1) as f64 } else { 0.0 };
        let times: Vec<f64> = (0..m.points).map(|i| start + i as f64 * step).collect();
        let trace = synth_from_signature(&s, &times, t.noise_sigma, noise_seed)?;
        (trace, TruthParams::Signature(s), false)
    } else if let Some(m) = &t.control {
        let mut a = control_to_array(&m.cp);
        for (i, v) in a.iter_mut().enumerate() {
            *v += m.jitter[i] * std_normal.sample(&mut rng);
            *v += injected_delta(&t.anomalies, seq, CONTROL_PARAM_NAMES[i]);
        }
        let cp = control_from_array(a);
        let sim = simulate_closed_loop(&SimConfig {
            cp,
            v0: m.v0,
            i0: m.i0,
            dt: m.dt,
            duration: m.duration,
            sample_every: m.sample_every,
            noise_sigma: t.noise_sigma,
            seed: noise_seed,
        })?;
        let keep: Vec<usize> = (0..sim.v.len())
            .filter(|&i| sim.v.times[i] >= m.discard)
            .collect();
        let trace = TraceSeries::new(
            keep.iter().map(|&i| sim.v.times[i]).collect(),
            keep.iter().map(|&i| sim.v.values[i]).collect(),
        )?;
        (trace, TruthParams::Control(cp), !sim.stable)
    } else {
        return Err(Error::validation("triple has no model"));
    };

    Ok(WaferOutput {
        trace: trace.with_ids(&t.tool, &t.sensor, &t.step, &wafer, &lot, seq),
        truth: GroundTruth {
            tool: t.tool.clone(),
            sensor: t.sensor.clone(),
            step: t.step.clone(),
            wafer_id: wafer,
            params,
        },
        unstable,
    })
}

/// Builds a reproducible dataset from a generation plan. Output depends only
/// on the plan, never on thread scheduling.
pub fn make_dataset(plan: &GenerationPlan) -> Result<SyntheticDataset> {
    plan.validate()?;
    let mut jobs: Vec<(&TriplePlan, usize)> = Vec::new();
    let mut order: Vec<&TriplePlan> = plan.triples.iter().collect();
    order.sort_by(|a, b| (&a.tool, &a.sensor, &a.step).cmp(&(&b.tool, &b.sensor, &b.step)));
    for t in &order {
        for seq in 0..t.lots * t.wafers_per_lot {
            jobs.push((t, seq));
        }
    }
    let outputs: Vec<WaferOutput> = jobs
        .par_iter()
        .map(|(t, seq)| generate_wafer(plan.seed, t, *seq))
        .collect::<Result<_>>()?;

    let mut ds = SyntheticDataset::default();
    for out in outputs {
        if out.unstable {
            ds.unstable.push(out.trace.wafer_id.clone());
        }
        ds.traces.push(out.trace);
        ds.ground_truth.push(out.truth);
    }
    for t in order {
        for a in &t.anomalies {
            ds.injected_anomalies.push(InjectedAnomaly {
                tool: t.tool.clone(),
                sensor: t.sensor.clone(),
                step: t.step.clone(),
                wafer_id: wafer_id(&t.tool, a.wafer),
                param: a.param.clone(),
                delta: a.delta,
                kind: a.kind,
            });
        }
    }
    Ok(ds)
}

/// Writes the ground-truth sidecar: `wafer,param,true_value`, with `param`
/// qualified as `sensor:step:name` so that several triples can share a file.
pub fn write_ground_truth<W: std::io::Write>(ds: &SyntheticDataset, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["wafer", "param", "true_value"])?;
    for g in &ds.ground_truth {
        for (name, value) in g.params.entries() {
            w.write_record([
                g.wafer_id.as_str(),
                &format!("{}:{}:{}", g.sensor, g.step, name),
                &value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the injected anomalies: `tool,sensor,step,wafer,param,delta,kind`.
pub fn write_injections<W: std::io::Write>(ds: &SyntheticDataset, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tool", "sensor", "step", "wafer", "param", "delta", "kind"])?;
    for a in &ds.injected_anomalies {
        w.write_record([
            a.tool.as_str(),
            &a.sensor,
            &a.step,
            &a.wafer_id,
            &a.param,
            &a.delta.to_string(),
            a.kind.name(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
