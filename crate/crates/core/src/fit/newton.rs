//! Box-constrained modified Newton descent over the six free signature
//! components (`x` stays fixed).

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oscillator::{Param, ShapeSignature, NPARAM};

use super::objective::WaferObjective;
use super::FitConfig;

const FREE: [usize; 6] = [0, 1, 2, 3, 4, 5];
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MAX_DAMPING_GROWTHS: usize = 60;
const MAX_PHASE_WRAPS: usize = 2;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Refined {
    pub signature: ShapeSignature,
    pub objective: f64,
}

/// Components pinned at a bound with the gradient pushing outward.
fn is_blocked(s: &ShapeSignature, grad: &[f64; NPARAM], idx: usize) -> bool {
    if idx == Param::Omega.index() {
        s.omega <= 0.0 && grad[idx] > 0.0
    } else if idx == Param::Phi.index() {
        (s.phi >= FRAC_PI_2 && grad[idx] < 0.0) || (s.phi <= -FRAC_PI_2 && grad[idx] > 0.0)
    } else {
        false
    }
}

/// Solves `(H + lambda I) d = -g`, growing `lambda` geometrically from
/// `damping_init` until the shifted matrix admits a Cholesky factorization.
fn damped_direction(h: &DMatrix<f64>, g: &DVector<f64>, damping_init: f64) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(-ch.solve(g));
    }
    let n = h.nrows();
    let mut lambda = damping_init;
    for _ in 0..MAX_DAMPING_GROWTHS {
        let shifted = h + DMatrix::<f64>::identity(n, n) * lambda;
        if let Some(ch) = shifted.cholesky() {
            return Some(-ch.solve(g));
        }
        lambda *= 10.0;
    }
    None
}

/// `(R, phi)` and `(-R, phi - pi)` describe the same curve, so a descent that
/// stops on a phase bound may continue from the opposite bound.
fn reflect_phase(s: &ShapeSignature) -> ShapeSignature {
    let phi = if s.phi > 0.0 { s.phi - std::f64::consts::PI } else { s.phi + std::f64::consts::PI };
    s.with(Param::R, -s.r).with(Param::Phi, phi).project()
}

/// Projected modified Newton from `start`. When the result rests on a phase
/// bound, descent is retried from the reflected signature and kept only if it
/// lowers the objective.
pub(crate) fn minimize(
    obj: &WaferObjective<'_>,
    start: &ShapeSignature,
    cfg: &FitConfig,
) -> Result<Refined> {
    let mut best = descend(obj, start, cfg)?;
    for _ in 0..MAX_PHASE_WRAPS {
        if best.signature.phi.abs() < FRAC_PI_2 {
            break;
        }
        match descend(obj, &reflect_phase(&best.signature), cfg) {
            Ok(r) if r.objective < best.objective => best = r,
            _ => break,
        }
    }
    Ok(best)
}

fn descend(
    obj: &WaferObjective<'_>,
    start: &ShapeSignature,
    cfg: &FitConfig,
) -> Result<Refined> {
    let mut s = start.project();
    let mut f = obj.value(&s);
    if !f.is_finite() {
        return Err(Error::NonFinite {
            iteration: 0,
            last_good: Box::new(*start),
        });
    }

    let mut iterations = 0;
    while iterations < cfg.newton_max_iters {
        let (_, grad, hess) = obj.derivatives(&s);
        if grad.iter().chain(hess.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: iterations,
                last_good: Box::new(s),
            });
        }
        let free: Vec<usize> = FREE
            .iter()
            .copied()
            .filter(|&i| !is_blocked(&s, &grad, i))
            .collect();
        if free.is_empty() {
            break;
        }
        let h = DMatrix::from_fn(free.len(), free.len(), |i, j| hess[free[i]][free[j]]);
        let g = DVector::from_fn(free.len(), |i, _| grad[free[i]]);
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        let Some(dir) = damped_direction(&h, &g, cfg.damping_init) else {
            break;
        };

        let base = s.to_array();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = base;
            for (k, &i) in free.iter().enumerate() {
                trial[i] += step * dir[k];
            }
            let trial = ShapeSignature::from_array(trial).project();
            let ft = obj.value(&trial);
            if ft.is_finite() {
                let ta = trial.to_array();
                let slope: f64 = free.iter().map(|&i| grad[i] * (ta[i] - base[i])).sum();
                let ok = if slope < 0.0 {
                    ft <= f + ARMIJO_C1 * slope
                } else {
                    ft < f
                };
                if ok {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((trial, ft)) = accepted else {
            break;
        };
        let decrease = f - ft;
        s = trial;
        f = ft;
        if decrease <= cfg.newton_tol * f.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    Ok(Refined {
        signature: s,
        objective: f,
    })
}

/// Runs [`minimize`] from every start and keeps the lowest objective (first
/// wins ties). Fails only when every start fails.
pub(crate) fn minimize_multistart(
    obj: &WaferObjective<'_>,
    starts: &[ShapeSignature],
    cfg: &FitConfig,
) -> Result<Refined> {
    let mut best: Option<Refined> = None;
    let mut first_err = None;
    for s in starts {
        match minimize(obj, s, cfg) {
            Ok(r) => {
                if best.map_or(true, |b| r.objective < b.objective) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::domain("no starting points")),
    }
}
