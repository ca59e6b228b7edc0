//! Scenario builders shared by the integration and acceptance tests.
#![allow(dead_code)]

use greybox::anomaly::{AnomalyRecord, NormalModel};
use greybox::control_map::ControlParams;
use greybox::fit::{Hyperparams, PriorExponent};
use greybox::oscillator::{eval_vec, NPARAM};
use greybox::pipeline::{run_fit, Dataset, PipelineConfig};
use greybox::simulate::{GenerationPlan, Injection, InjectionKind, SignatureModel, TriplePlan};
use greybox::{ShapeSignature, TraceSeries, TripleKey};
use proptest::test_runner::{Config as ProptestConfig, RngSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BASE: [f64; NPARAM] = [0.5, 2.0, 1.5, 10.0, 0.2, 0.1, 0.0];
pub const JITTER: [f64; NPARAM] = [0.015, 0.06, 0.045, 0.3, 0.05, 0.003, 0.0];
pub const NOISE: f64 = 0.05;
/// Observation noise of the spike scenario. At [`NOISE`] the data term's
/// chi-square spread rivals a ten-std spike and the fitted gamma prior can
/// collapse onto its floor.
pub const SPIKE_NOISE: f64 = 0.02;
pub const LOTS: usize = 8;
pub const WAFERS_PER_LOT: usize = 25;
pub const SPIKE_WAFER: usize = 110;
pub const SHIFT_WAFER: usize = 160;
/// Wafer-to-wafer variation in the change-point scenario, relative to [`JITTER`].
pub const SHIFT_JITTER_SCALE: f64 = 0.3;

pub fn reference_cp() -> ControlParams {
    ControlParams { k_p: 1.0, k_c: 1.0, tau_p: 1.0, tau_i: 0.5, q1: 0.0, q2: 1.0 }
}

fn triple_plan(jitter: [f64; NPARAM], noise: f64, anomalies: Vec<Injection>) -> TriplePlan {
    TriplePlan {
        tool: "T1".into(),
        sensor: "S".into(),
        step: "P".into(),
        lots: LOTS,
        wafers_per_lot: WAFERS_PER_LOT,
        noise_sigma: noise,
        signature: Some(SignatureModel {
            base: ShapeSignature::from_array(BASE),
            jitter,
            start: 0.0,
            duration: 15.0,
            points: 150,
            start_jitter: 0.0,
        }),
        control: None,
        anomalies,
    }
}

/// One wafer's slope raised by ten wafer-to-wafer standard deviations.
pub fn spike_plan(seed: u64) -> GenerationPlan {
    let inj = Injection { wafer: SPIKE_WAFER, param: "c".into(), delta: 10.0 * JITTER[5], kind: InjectionKind::Spike };
    GenerationPlan { seed, triples: vec![triple_plan(JITTER, SPIKE_NOISE, vec![inj])] }
}

/// Persistent shift of gamma by -20%, c by +20% and R by +20%.
pub fn shift_plan(seed: u64) -> GenerationPlan {
    let jitter = JITTER.map(|v| v * SHIFT_JITTER_SCALE);
    let shift = |param: &str, delta: f64| Injection {
        wafer: SHIFT_WAFER,
        param: param.into(),
        delta,
        kind: InjectionKind::ChangePoint,
    };
    let anomalies = vec![shift("gamma", -0.2 * BASE[0]), shift("c", 0.2 * BASE[5]), shift("R", 0.2 * BASE[1])];
    GenerationPlan { seed, triples: vec![triple_plan(jitter, NOISE, anomalies)] }
}

/// Runs fit and score for a single-triple dataset on one worker.
pub fn monitor(traces: Vec<TraceSeries>) -> (Dataset, NormalModel, Vec<AnomalyRecord>) {
    let ds = Dataset::from_traces(traces).expect("valid dataset");
    let cfg = PipelineConfig { workers: 1, ..PipelineConfig::default() };
    let mut run = run_fit(&ds, &cfg).expect("run");
    assert_eq!(run.triples.len(), 1, "skipped: {:?}", run.skipped);
    let t = run.triples.remove(0);
    (ds, t.normal_model, t.records)
}

/// Draws a signature inside the oscillating region with moderate values.
pub fn random_signature(rng: &mut ChaCha8Rng) -> ShapeSignature {
    ShapeSignature::from_array([
        rng.gen_range(0.1..1.0),
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.5..3.0),
        rng.gen_range(-5.0..15.0),
        rng.gen_range(-1.2..1.2),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.5..0.5),
    ])
}

/// A noisy trace of `truth` on `[0, 12)`.
pub fn random_trace(rng: &mut ChaCha8Rng, truth: &ShapeSignature, n: usize, noise: f64) -> TraceSeries {
    let times: Vec<f64> = (0..n).map(|i| 12.0 * i as f64 / n as f64).collect();
    let mut values = eval_vec(truth, &times).unwrap();
    for v in &mut values {
        *v += noise * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    TraceSeries::new(times, values).unwrap()
}

pub fn random_normal_model(rng: &mut ChaCha8Rng, mu: &ShapeSignature) -> NormalModel {
    let mut sigma_s = [0.0; NPARAM];
    for v in &mut sigma_s {
        *v = rng.gen_range(0.01..0.5);
    }
    let hyper = Hyperparams { sigma: rng.gen_range(0.02..0.3), mu_s: mu.to_array(), sigma_s };
    NormalModel::from_hyper(&hyper, TripleKey::new("T", "S", "P"), vec!["L".into()], PriorExponent::Variance)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Property-test settings with a fixed seed, so every run checks the same cases.
pub fn fixed_cases(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, rng_seed: RngSeed::Fixed(0x6b0c), failure_persistence: None, ..ProptestConfig::default() }
}
