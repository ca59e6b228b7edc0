//! Damped, linearly driven harmonic oscillator used as the parametric model
//! for a single sensor trace:
//!
//! ```text
//! alpha(t, s) = R * exp(-gamma * (t - x) / 2) * cos(omega * (t - x) - phi) + c * (t - x) + y
//! ```
//!
//! Derivatives with respect to the seven signature components are hand-derived
//! closed forms; the unit tests check them against finite differences.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of components in a [`ShapeSignature`].
pub const NPARAM: usize = 7;

/// Component index of a shape signature, in the fixed order
/// `gamma, R, omega, y, phi, c, x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    Gamma,
    R,
    Omega,
    Y,
    Phi,
    C,
    X,
}

impl Param {
    pub const ALL: [Param; NPARAM] = [
        Param::Gamma,
        Param::R,
        Param::Omega,
        Param::Y,
        Param::Phi,
        Param::C,
        Param::X,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Gamma => "gamma",
            Param::R => "R",
            Param::Omega => "omega",
            Param::Y => "y",
            Param::Phi => "phi",
            Param::C => "c",
            Param::X => "x",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Param::Gamma => "damping coefficient",
            Param::R => "amplitude",
            Param::Omega => "frequency",
            Param::Y => "vertical shift",
            Param::Phi => "phase shift",
            Param::C => "slope",
            Param::X => "horizontal shift",
        }
    }

    /// Accepts the canonical names plus a few spelled-out aliases.
    pub fn parse(name: &str) -> Option<Param> {
        let p = match name.trim() {
            "gamma" | "γ" => Param::Gamma,
            "R" | "r" | "amplitude" => Param::R,
            "omega" | "ω" => Param::Omega,
            "y" => Param::Y,
            "phi" | "φ" => Param::Phi,
            "c" | "slope" => Param::C,
            "x" => Param::X,
            _ => return None,
        };
        Some(p)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The seven oscillator parameters summarizing one trace.
///
/// `r` may be negative and `gamma` is unconstrained in sign. The box
/// constraints are `omega >= 0` and `phi` in `[-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapeSignature {
    pub gamma: f64,
    #[serde(alias = "R")]
    pub r: f64,
    pub omega: f64,
    pub y: f64,
    pub phi: f64,
    pub c: f64,
    pub x: f64,
}

impl ShapeSignature {
    pub fn from_array(a: [f64; NPARAM]) -> Self {
        ShapeSignature {
            gamma: a[0],
            r: a[1],
            omega: a[2],
            y: a[3],
            phi: a[4],
            c: a[5],
            x: a[6],
        }
    }

    pub fn to_array(&self) -> [f64; NPARAM] {
        [
            self.gamma, self.r, self.omega, self.y, self.phi, self.c, self.x,
        ]
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }

    pub fn set(&mut self, p: Param, value: f64) {
        let mut a = self.to_array();
        a[p.index()] = value;
        *self = Self::from_array(a);
    }

    pub fn with(mut self, p: Param, value: f64) -> Self {
        self.set(p, value);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn in_box(&self) -> bool {
        self.omega >= 0.0 && (-FRAC_PI_2..=FRAC_PI_2).contains(&self.phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::domain(format!("non-finite shape signature {self:?}")));
        }
        if !self.in_box() {
            return Err(Error::domain(format!(
                "shape signature outside its box (omega >= 0, |phi| <= pi/2): {self:?}"
            )));
        }
        Ok(())
    }

    /// Clamp onto the feasible box.
    pub fn project(mut self) -> Self {
        self.omega = self.omega.max(0.0);
        self.phi = self.phi.clamp(-FRAC_PI_2, FRAC_PI_2);
        self
    }
}

/// Identifies one monitored (tool, sensor, step) combination.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripleKey {
    pub tool: String,
    pub sensor: String,
    pub step: String,
}

impl TripleKey {
    pub fn new(tool: &str, sensor: &str, step: &str) -> Self {
        TripleKey {
            tool: tool.to_owned(),
            sensor: sensor.to_owned(),
            step: step.to_owned(),
        }
    }
}

impl fmt::Display for TripleKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.tool, self.sensor, self.step)
    }
}

/// Timestamped readings of one (tool, sensor, step, wafer) quadruple.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub tool_id: String,
    pub sensor_id: String,
    pub step_id: String,
    pub wafer_id: String,
    pub lot_id: String,
    pub sequence_index: usize,
}

impl TraceSeries {
    /// Builds an unlabeled trace, checking the time axis.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let trace = TraceSeries {
            times,
            values,
            tool_id: String::new(),
            sensor_id: String::new(),
            step_id: String::new(),
            wafer_id: String::new(),
            lot_id: String::new(),
            sequence_index: 0,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn with_ids(
        mut self,
        tool: &str,
        sensor: &str,
        step: &str,
        wafer: &str,
        lot: &str,
        sequence_index: usize,
    ) -> Self {
        self.tool_id = tool.to_owned();
        self.sensor_id = sensor.to_owned();
        self.step_id = step.to_owned();
        self.wafer_id = wafer.to_owned();
        self.lot_id = lot.to_owned();
        self.sequence_index = sequence_index;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::domain("trace has no observations"));
        }
        if self.times.len() != self.values.len() {
            return Err(Error::domain(format!(
                "trace has {} times but {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        if self.times.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(Error::domain("trace contains non-finite entries"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("trace times are not strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn triple(&self) -> TripleKey {
        TripleKey::new(&self.tool_id, &self.sensor_id, &self.step_id)
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }
}

/// Value, gradient and Hessian of `alpha` at one time point.
#[derive(Debug, Clone, Copy)]
pub struct Derivatives {
    pub value: f64,
    pub grad: [f64; NPARAM],
    pub hess: [[f64; NPARAM]; NPARAM],
}

#[inline]
pub(crate) fn value_unchecked(s: &ShapeSignature, t: f64) -> f64 {
    let tau = t - s.x;
    s.r * (-0.5 * s.gamma * tau).exp() * (s.omega * tau - s.phi).cos() + s.c * tau + s.y
}

#[inline]
pub(crate) fn value_grad_unchecked(s: &ShapeSignature, t: f64) -> (f64, [f64; NPARAM]) {
    let tau = t - s.x;
    let e = (-0.5 * s.gamma * tau).exp();
    let (sn, cs) = (s.omega * tau - s.phi).sin_cos();
    let re = s.r * e;
    let value = re * cs + s.c * tau + s.y;
    let grad = [
        -0.5 * tau * re * cs,
        e * cs,
        -tau * re * sn,
        1.0,
        re * sn,
        tau,
        re * (0.5 * s.gamma * cs + s.omega * sn) - s.c,
    ];
    (value, grad)
}

pub(crate) fn derivatives_unchecked(s: &ShapeSignature, t: f64) -> Derivatives {
    const G: usize = 0;
    const R: usize = 1;
    const W: usize = 2;
    const P: usize = 4;
    const C: usize = 5;
    const X: usize = 6;

    let tau = t - s.x;
    let e = (-0.5 * s.gamma * tau).exp();
    let (sn, cs) = (s.omega * tau - s.phi).sin_cos();
    let re = s.r * e;
    let (g, w) = (s.gamma, s.omega);
    let value = re * cs + s.c * tau + s.y;
    let grad = [
        -0.5 * tau * re * cs,
        e * cs,
        -tau * re * sn,
        1.0,
        re * sn,
        tau,
        re * (0.5 * g * cs + w * sn) - s.c,
    ];

    // Second partials of the cosine term f = R e^{-g tau/2} cos(w tau - phi),
    // with tau = t - x as the intermediate variable for x.
    let f_gg = 0.25 * tau * tau * re * cs;
    let f_gr = -0.5 * tau * e * cs;
    let f_gw = 0.5 * tau * tau * re * sn;
    let f_gp = -0.5 * tau * re * sn;
    let f_gt = re * (-0.5 * cs + 0.25 * g * tau * cs + 0.5 * w * tau * sn);
    let f_rw = -tau * e * sn;
    let f_rp = e * sn;
    let f_rt = e * (-0.5 * g * cs - w * sn);
    let f_ww = -tau * tau * re * cs;
    let f_wp = tau * re * cs;
    let f_wt = re * (-sn + 0.5 * g * tau * sn - w * tau * cs);
    let f_pp = -re * cs;
    let f_pt = re * (-0.5 * g * sn + w * cs);
    let f_tt = re * ((0.25 * g * g - w * w) * cs + g * w * sn);

    let mut h = [[0.0; NPARAM]; NPARAM];
    let mut put = |i: usize, j: usize, v: f64| {
        h[i][j] = v;
        h[j][i] = v;
    };
    put(G, G, f_gg);
    put(G, R, f_gr);
    put(G, W, f_gw);
    put(G, P, f_gp);
    put(G, X, -f_gt);
    put(R, W, f_rw);
    put(R, P, f_rp);
    put(R, X, -f_rt);
    put(W, W, f_ww);
    put(W, P, f_wp);
    put(W, X, -f_wt);
    put(P, P, f_pp);
    put(P, X, -f_pt);
    put(C, X, -1.0);
    put(X, X, f_tt);

    Derivatives {
        value,
        grad,
        hess: h,
    }
}

fn check_point(s: &ShapeSignature, t: f64) -> Result<()> {
    if !s.is_finite() || !t.is_finite() {
        return Err(Error::domain(format!(
            "non-finite oscillator input (t = {t}, s = {s:?})"
        )));
    }
    Ok(())
}

/// Oscillator value at time `t`.
pub fn eval(s: &ShapeSignature, t: f64) -> Result<f64> {
    check_point(s, t)?;
    Ok(value_unchecked(s, t))
}

pub fn eval_vec(s: &ShapeSignature, times: &[f64]) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Err(Error::domain("empty time vector"));
    }
    times.iter().map(|&t| eval(s, t)).collect()
}

/// Partial derivatives of `alpha(t, s)` in the order `gamma, R, omega, y, phi, c, x`.
pub fn grad_params(s: &ShapeSignature, t: f64) -> Result<[f64; NPARAM]> {
    check_point(s, t)?;
    Ok(value_grad_unchecked(s, t).1)
}

/// Symmetric matrix of second partials of `alpha(t, s)`.
pub fn hess_params(s: &ShapeSignature, t: f64) -> Result<[[f64; NPARAM]; NPARAM]> {
    check_point(s, t)?;
    Ok(derivatives_unchecked(s, t).hess)
}

/// Sum of squared residuals between a trace and the oscillator.
pub fn ssr(s: &ShapeSignature, trace: &TraceSeries) -> f64 {
    trace
        .times
        .iter()
        .zip(&trace.values)
        .map(|(&t, &z)| {
            let r = z - value_unchecked(s, t);
            r * r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(a: [f64; 7]) -> ShapeSignature {
        ShapeSignature::from_array(a)
    }

    fn random_sig(rng: &mut ChaCha8Rng) -> ShapeSignature {
        let mut a = [0.0; 7];
        for v in a.iter_mut() {
            *v = rng.gen_range(-5.0..5.0);
        }
        sig(a).project()
    }

    #[test]
    fn constant_and_pure_amplitude() {
        let s = sig([0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0]);
        assert_eq!(eval(&s, 3.0).unwrap(), 5.0);
        let s = sig([0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for t in [-3.0, 0.0, 1.5, 100.0] {
            assert_eq!(eval(&s, t).unwrap(), 2.0);
        }
    }

    #[test]
    fn shifted_example_value() {
        // e^{-0.2} cos(1.7) + 0.1 + 10, evaluated independently.
        let expected = (-0.2f64).exp() * 1.7f64.cos() + 0.1 + 10.0;
        let s = sig([0.2, 1.0, 1.0, 10.0, 0.3, 0.05, 2.0]);
        let v = eval(&s, 4.0).unwrap();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 9.9945).abs() < 1e-4);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let s = sig([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(eval(&s, 0.0), Err(Error::Domain(_))));
        assert!(eval(&ShapeSignature::default(), f64::INFINITY).is_err());
        assert!(eval_vec(&ShapeSignature::default(), &[]).is_err());
    }

    #[test]
    fn eval_vec_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_sig(&mut rng);
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.13 - 2.0).collect();
        let v = eval_vec(&s, &times).unwrap();
        for (t, got) in times.iter().zip(&v) {
            assert_eq!(*got, eval(&s, *t).unwrap());
        }
        assert_eq!(eval_vec(&s, &[1.25]).unwrap(), vec![eval(&s, 1.25).unwrap()]);
        let flat = sig([0.3, 0.0, 1.0, 4.0, 0.1, 0.0, 0.0]);
        assert_eq!(eval_vec(&flat, &[0.0, 1.0, 2.0]).unwrap(), vec![4.0; 3]);
    }

    #[test]
    fn trivial_partials() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = random_sig(&mut rng);
            let t: f64 = rng.gen_range(-5.0..5.0);
            let g = grad_params(&s, t).unwrap();
            assert_eq!(g[Param::Y.index()], 1.0);
            assert_eq!(g[Param::C.index()], t - s.x);
            let h = hess_params(&s, t).unwrap();
            assert_eq!(h[3][3], 0.0);
            assert_eq!(h[3][5], 0.0);
            assert_eq!(h[5][5], 0.0);
        }
    }

    #[test]
    fn hessian_of_zero_amplitude_only_touches_amplitude_and_slope() {
        let s = sig([0.4, 0.0, 1.3, 2.0, 0.2, 0.7, 0.5]);
        let h = hess_params(&s, 2.0).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let touches_r = i == 1 || j == 1;
                let slope_shift = (i, j) == (5, 6) || (i, j) == (6, 5);
                if !touches_r && !slope_shift {
                    assert_eq!(h[i][j], 0.0, "entry ({i},{j})");
                }
            }
        }
        assert!(h[1][0] != 0.0 && h[1][2] != 0.0);
    }

    #[test]
    fn time_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = random_sig(&mut rng);
            let t: f64 = rng.gen_range(-5.0..5.0);
            let d: f64 = rng.gen_range(-5.0..5.0);
            let shifted = ShapeSignature { x: s.x + d, ..s };
            let a = eval(&s, t).unwrap();
            let b = eval(&shifted, t + d).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn special_cases_match_reduced_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s = random_sig(&mut rng);
            let t: f64 = rng.gen_range(-5.0..5.0);
            let tau = t - s.x;
            let tol = |v: f64| 1e-12 * v.abs().max(1.0);

            let constant_driven = ShapeSignature { c: 0.0, ..s };
            let expect =
                s.r * (-s.gamma * tau / 2.0).exp() * (s.omega * tau - s.phi).cos() + s.y;
            let got = eval(&constant_driven, t).unwrap();
            assert!((got - expect).abs() <= tol(expect));

            let exponential = ShapeSignature {
                c: 0.0,
                omega: 0.0,
                phi: 0.0,
                ..s
            };
            let expect = s.r * (-s.gamma * tau / 2.0).exp() + s.y;
            let got = eval(&exponential, t).unwrap();
            assert!((got - expect).abs() <= tol(expect));

            let constant = ShapeSignature { r: 0.0, c: 0.0, ..s };
            assert_eq!(eval(&constant, t).unwrap(), s.y);
        }
    }

    #[test]
    fn ssr_cases() {
        let s = sig([0.3, 1.2, 2.0, 1.0, 0.4, 0.1, 0.0]);
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let values = eval_vec(&s, &times).unwrap();
        let exact = TraceSeries::new(times.clone(), values.clone()).unwrap();
        assert_eq!(ssr(&s, &exact), 0.0);

        let one = TraceSeries::new(vec![1.0], vec![eval(&s, 1.0).unwrap() + 1.0]).unwrap();
        assert!((ssr(&s, &one) - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy: Vec<f64> = values.iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
        let trace = TraceSeries::new(times.clone(), noisy.clone()).unwrap();
        let mut oracle = 0.0;
        for i in 0..times.len() {
            let d = noisy[i] - eval(&s, times[i]).unwrap();
            oracle += d * d;
        }
        assert!((ssr(&s, &trace) - oracle).abs() < 1e-12);
    }

    #[test]
    fn trace_validation() {
        assert!(TraceSeries::new(vec![], vec![]).is_err());
        assert!(TraceSeries::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(TraceSeries::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(TraceSeries::new(vec![0.0], vec![1.0]).is_ok());
    }

    #[test]
    fn projection_and_parse() {
        let s = sig([0.0, 1.0, -1.0, 0.0, 3.0, 0.0, 0.0]).project();
        assert_eq!(s.omega, 0.0);
        assert_eq!(s.phi, FRAC_PI_2);
        for p in Param::ALL {
            assert_eq!(Param::parse(p.name()), Some(p));
        }
        assert_eq!(Param::parse("slope"), Some(Param::C));
        assert_eq!(Param::parse("bogus"), None);
    }
}
