//! Heuristic starting points for the per-wafer Newton refinement.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oscillator::{ShapeSignature, TraceSeries};

const DEFAULT_GAMMA: f64 = 0.1;
const OVERSAMPLE: f64 = 4.0;

/// Least-squares line `z = c * tau + y` over the given index range.
fn line_fit(tau: &[f64], z: &[f64]) -> (f64, f64) {
    let n = tau.len() as f64;
    let mt = tau.iter().sum::<f64>() / n;
    let mz = z.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxz = 0.0;
    for (t, v) in tau.iter().zip(z) {
        sxx += (t - mt) * (t - mt);
        sxz += (t - mt) * (v - mz);
    }
    let c = if sxx > 0.0 { sxz / sxx } else { 0.0 };
    (c, mz - c * mt)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust noise level from successive differences.
fn noise_level(d: &[f64]) -> f64 {
    let diffs: Vec<f64> = d.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    median(diffs) / (0.6745 * std::f64::consts::SQRT_2)
}

/// Damping from the decay of successive half-cycle envelope peaks.
fn envelope_damping(tau: &[f64], d: &[f64], floor: f64) -> Option<f64> {
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    let mut lobe: Option<(f64, f64, bool)> = None;
    for (&t, &v) in tau.iter().zip(d) {
        if v == 0.0 {
            continue;
        }
        let positive = v > 0.0;
        match lobe {
            Some((_, amp, sign)) if sign == positive => {
                if v.abs() > amp {
                    lobe = Some((t, v.abs(), sign));
                }
            }
            _ => {
                if let Some((pt, amp, _)) = lobe {
                    peaks.push((pt, amp));
                }
                lobe = Some((t, v.abs(), positive));
            }
        }
    }
    if let Some((pt, amp, _)) = lobe {
        peaks.push((pt, amp));
    }
    let peaks: Vec<(f64, f64)> = peaks.into_iter().filter(|p| p.1 > floor).collect();
    if peaks.len() < 2 {
        return None;
    }
    let rates: Vec<f64> = peaks
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| 2.0 * (w[0].1 / w[1].1).ln() / (w[1].0 - w[0].0))
        .collect();
    if rates.is_empty() {
        None
    } else {
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

/// Local maxima of the periodogram of `d`, strongest first, keeping only
/// bins that stand clearly above the noise floor.
fn spectral_peaks(tau: &[f64], d: &[f64], noise: f64) -> Vec<f64> {
    let n = tau.len();
    let span = tau[n - 1] - tau[0];
    if n < 4 || span <= 0.0 {
        return Vec::new();
    }
    let energy: f64 = d.iter().map(|v| v * v).sum();
    if energy <= 1e-24 * n as f64 {
        return Vec::new();
    }
    let spacing = median(tau.windows(2).map(|w| w[1] - w[0]).collect());
    let step = 2.0 * std::f64::consts::PI / (OVERSAMPLE * span);
    let nyquist = std::f64::consts::PI / spacing;
    let bins = ((nyquist / step).floor() as usize).max(1);

    // Phasor recurrence: e^{-i k step tau} = (e^{-i step tau})^k.
    let mut rot: Vec<(f64, f64)> = tau.iter().map(|&t| {
        let (s, c) = (step * t).sin_cos();
        (c, -s)
    }).collect();
    let base = rot.clone();
    let mut power = Vec::with_capacity(bins);
    for _ in 0..bins {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &(c, s)) in rot.iter().enumerate() {
            re += d[i] * c;
            im += d[i] * s;
        }
        power.push(re * re + im * im);
        for (r, b) in rot.iter_mut().zip(&base) {
            *r = (r.0 * b.0 - r.1 * b.1, r.0 * b.1 + r.1 * b.0);
        }
    }

    let threshold = (10.0 * n as f64 * noise * noise).max(1e-12 * energy * n as f64);
    let mut peaks: Vec<(f64, f64)> = (0..bins)
        .filter(|&k| {
            let left = if k == 0 { 0.0 } else { power[k - 1] };
            let right = power.get(k + 1).copied().unwrap_or(0.0);
            power[k] > threshold && power[k] >= left && power[k] > right
        })
        .map(|k| ((k + 1) as f64 * step, power[k]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    peaks.into_iter().map(|p| p.0).collect()
}

struct Detrended {
    tau: Vec<f64>,
    residual: Vec<f64>,
    c: f64,
    y: f64,
    noise: f64,
}

fn detrend(trace: &TraceSeries) -> Detrended {
    let x = trace.times[0];
    let tau: Vec<f64> = trace.times.iter().map(|t| t - x).collect();
    let half = (trace.len() / 2).min(trace.len() - 2);
    let (c, y) = line_fit(&tau[half..], &trace.values[half..]);
    let residual: Vec<f64> = tau
        .iter()
        .zip(&trace.values)
        .map(|(t, z)| z - (c * t + y))
        .collect();
    let noise = noise_level(&residual[half..]);
    Detrended {
        tau,
        residual,
        c,
        y,
        noise,
    }
}

/// Heuristic signature estimate: `x` at the first time point, `(c, y)` from a
/// line through the second half of the trace, `gamma` from envelope decay,
/// `omega` from the dominant periodogram bin of the detrended residual,
/// `phi = 0` and `R` equal to the first detrended residual.
pub fn init_signature(trace: &TraceSeries) -> Result<ShapeSignature> {
    trace.validate()?;
    if trace.len() < 2 {
        return Err(Error::domain("initialization needs at least two observations"));
    }
    let d = detrend(trace);
    let gamma = envelope_damping(&d.tau, &d.residual, 3.0 * d.noise).unwrap_or(DEFAULT_GAMMA);
    let omega = spectral_peaks(&d.tau, &d.residual, d.noise)
        .first()
        .copied()
        .unwrap_or(0.0);
    Ok(ShapeSignature {
        gamma,
        r: d.residual[0],
        omega,
        y: d.y,
        phi: 0.0,
        c: d.c,
        x: trace.times[0],
    })
}

/// Given `(gamma, omega)`, the remaining free components enter linearly:
/// `E(A cos w tau + B sin w tau) + c tau + y`. Solves for them by least squares
/// and converts `(A, B)` to amplitude and phase within the phase box.
fn linear_completion(trace: &TraceSeries, gamma: f64, omega: f64) -> Option<ShapeSignature> {
    let x = trace.times[0];
    let n = trace.len();
    let cols = if omega > 0.0 { 4 } else { 3 };
    if n < cols + 1 {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(n, cols);
    for (i, &t) in trace.times.iter().enumerate() {
        let tau = t - x;
        let e = (-0.5 * gamma * tau).exp();
        if !e.is_finite() {
            return None;
        }
        let (s, c) = (omega * tau).sin_cos();
        a[(i, 0)] = e * c;
        let mut j = 1;
        if omega > 0.0 {
            a[(i, 1)] = e * s;
            j = 2;
        }
        a[(i, j)] = tau;
        a[(i, j + 1)] = 1.0;
    }
    let b = DVector::from_column_slice(&trace.values);
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let (ca, cb, slope, shift) = if omega > 0.0 {
        (sol[0], sol[1], sol[2], sol[3])
    } else {
        (sol[0], 0.0, sol[1], sol[2])
    };
    let (r, phi) = if ca != 0.0 {
        let phi = (cb / ca).atan();
        (ca / phi.cos(), phi)
    } else {
        (cb.abs(), std::f64::consts::FRAC_PI_2.copysign(cb))
    };
    let s = ShapeSignature {
        gamma,
        r,
        omega,
        y: shift,
        phi,
        c: slope,
        x,
    };
    s.is_finite().then_some(s.project())
}

/// Starting points for multistart refinement: the heuristic estimate plus one
/// candidate per leading spectral peak (and a non-oscillating one), each with
/// its linear components solved exactly.
pub(crate) fn start_candidates(
    trace: &TraceSeries,
    base: &ShapeSignature,
    count: usize,
) -> Vec<ShapeSignature> {
    let mut out = vec![*base];
    if trace.len() < 2 {
        return out;
    }
    let d = detrend(trace);
    let mut omegas: Vec<f64> = spectral_peaks(&d.tau, &d.residual, d.noise)
        .into_iter()
        .take(count)
        .collect();
    if omegas.len() < count {
        omegas.push(0.0);
    }
    let mut gammas = vec![base.gamma];
    if base.gamma != DEFAULT_GAMMA {
        gammas.push(DEFAULT_GAMMA);
    }
    for &w in &omegas {
        for &g in &gammas {
            if let Some(s) = linear_completion(trace, g, w) {
                out.push(s);
            }
        }
    }
    out
}
