//! Algebra linking PI-controller parameters, the reduced second-order ODE
//! `v'' + gamma v' + k v = a t + b` (mass normalized to one) and the
//! trend/frequency part of a shape signature.
//!
//! The set point is linear, `r(t) = q1 t + q2`, and the controller bias is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oscillator::ShapeSignature;

/// White-box parameters of a first-order process under PI control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// Process gain.
    pub k_p: f64,
    /// Proportional gain.
    pub k_c: f64,
    /// Process time constant.
    pub tau_p: f64,
    /// Integral time.
    pub tau_i: f64,
    /// Set-point slope.
    pub q1: f64,
    /// Set-point intercept.
    pub q2: f64,
}

impl ControlParams {
    /// Controller bias term; always zero in this model.
    pub const U0: f64 = 0.0;

    pub fn validate(&self) -> Result<()> {
        let all = [self.k_p, self.k_c, self.tau_p, self.tau_i, self.q1, self.q2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite control parameters {self:?}")));
        }
        for (name, v) in [
            ("k_p", self.k_p),
            ("k_c", self.k_c),
            ("tau_p", self.tau_p),
            ("tau_i", self.tau_i),
        ] {
            if v == 0.0 {
                return Err(Error::domain(format!("{name} must be nonzero")));
            }
        }
        Ok(())
    }

    /// Loop gain `kbar = k_p * k_c`.
    pub fn loop_gain(&self) -> f64 {
        self.k_p * self.k_c
    }
}

/// Coefficients of `v'' + gamma v' + k v = a t + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeParams {
    pub gamma: f64,
    pub k: f64,
    pub a: f64,
    pub b: f64,
}

impl OdeParams {
    /// `4k - gamma^2`; positive iff the homogeneous solution oscillates.
    pub fn discriminant(&self) -> f64 {
        4.0 * self.k - self.gamma * self.gamma
    }
}

/// Deterministic part of a signature implied by the ODE coefficients.
/// Amplitude and phase depend on initial conditions and are not produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeTrend {
    pub omega: f64,
    pub c: f64,
    pub y: f64,
}

/// Process parameters and set point recovered when `k_c` and `tau_i` are known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessRecovery {
    pub tau_p: f64,
    pub k_p: f64,
    pub q1: f64,
    pub q2: f64,
}

/// The control system expressed through the single free parameter `tau_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleDof {
    pub tau_i: f64,
    /// `k_p * k_c`.
    pub kbar: f64,
    pub q1: f64,
    pub q2: f64,
}

fn common_gamma_k(cp: &ControlParams) -> Result<(f64, f64)> {
    cp.validate()?;
    let kbar = cp.loop_gain();
    Ok(((1.0 + kbar) / cp.tau_p, kbar / (cp.tau_i * cp.tau_p)))
}

/// ODE coefficients when the sensor is the controlled output `v`.
pub fn ode_from_control_output(cp: &ControlParams) -> Result<OdeParams> {
    let (gamma, k) = common_gamma_k(cp)?;
    let kbar = cp.loop_gain();
    Ok(OdeParams {
        gamma,
        k,
        a: kbar * cp.q1 / (cp.tau_i * cp.tau_p),
        b: kbar * cp.q1 / cp.tau_p + kbar * cp.q2 / (cp.tau_i * cp.tau_p),
    })
}

/// ODE coefficients when the sensor is the manipulated input `u`.
/// Only the driving force differs from [`ode_from_control_output`].
pub fn ode_from_control_input(cp: &ControlParams) -> Result<OdeParams> {
    let (gamma, k) = common_gamma_k(cp)?;
    let denom = cp.tau_i * cp.tau_p;
    Ok(OdeParams {
        gamma,
        k,
        a: cp.k_c * cp.q1 / denom,
        b: cp.k_c * (cp.q1 * (cp.tau_p + cp.tau_i) + cp.q2) / denom,
    })
}

pub fn shape_from_ode(ode: &OdeParams) -> Result<ShapeTrend> {
    if ode.k == 0.0 {
        return Err(Error::domain("spring constant k is zero"));
    }
    let disc = ode.discriminant();
    if disc < 0.0 {
        return Err(Error::Overdamped { discriminant: disc });
    }
    let c = ode.a / ode.k;
    Ok(ShapeTrend {
        omega: disc.sqrt() / 2.0,
        c,
        y: (ode.b - c * ode.gamma) / ode.k,
    })
}

/// Inverse of [`shape_from_ode`] on the `(gamma, omega, c, y)` part.
pub fn ode_from_signature(s: &ShapeSignature) -> OdeParams {
    let k = s.omega * s.omega + s.gamma * s.gamma / 4.0;
    OdeParams {
        gamma: s.gamma,
        k,
        a: s.c * k,
        b: s.y * k + s.c * s.gamma,
    }
}

fn set_point(ode: &OdeParams, tau_i: f64) -> (f64, f64) {
    (ode.a / ode.k, (ode.b - tau_i * ode.a) / ode.k)
}

/// Recovers `(tau_p, k_p, q1, q2)` from the ODE when the controller
/// parameters `k_c` and `tau_i` are known.
pub fn control_from_ode_known(ode: &OdeParams, k_c: f64, tau_i: f64) -> Result<ProcessRecovery> {
    if ode.k == 0.0 || k_c == 0.0 || tau_i == 0.0 {
        return Err(Error::domain("k, k_c and tau_i must be nonzero"));
    }
    let tik = tau_i * ode.k;
    let gap = ode.gamma - tik;
    if gap.abs() <= 1e-12 * ode.gamma.abs().max(tik.abs()).max(1.0) {
        return Err(Error::Singular(format!(
            "gamma - tau_i * k = {gap:e} (gamma = {}, tau_i * k = {tik})",
            ode.gamma
        )));
    }
    let (q1, q2) = set_point(ode, tau_i);
    Ok(ProcessRecovery {
        tau_p: 1.0 / gap,
        k_p: tik / (k_c * gap),
        q1,
        q2,
    })
}

/// Expresses `tau_i`, `kbar`, `q1` and `q2` as functions of `tau_p` alone.
pub fn reduce_single_dof(ode: &OdeParams, tau_p: f64) -> Result<SingleDof> {
    if ode.k == 0.0 || tau_p == 0.0 {
        return Err(Error::domain("k and tau_p must be nonzero"));
    }
    let kbar = ode.gamma * tau_p - 1.0;
    let tau_i = kbar / (ode.k * tau_p);
    let (q1, q2) = set_point(ode, tau_i);
    Ok(SingleDof {
        tau_i,
        kbar,
        q1,
        q2,
    })
}

/// True iff `tau_i < 4 kbar tau_p / (1 + kbar)^2`.
pub fn oscillates(cp: &ControlParams) -> bool {
    let kbar = cp.loop_gain();
    cp.tau_i < 4.0 * kbar * cp.tau_p / ((1.0 + kbar) * (1.0 + kbar))
}

/// Stability of PI control of a first-order process: `kbar = gamma tau_p - 1 > 0`.
pub fn is_stable(gamma: f64, tau_p: f64) -> bool {
    gamma * tau_p - 1.0 > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(k_p: f64, k_c: f64, tau_p: f64, tau_i: f64, q1: f64, q2: f64) -> ControlParams {
        ControlParams {
            k_p,
            k_c,
            tau_p,
            tau_i,
            q1,
            q2,
        }
    }

    #[test]
    fn output_form_examples() {
        let o = ode_from_control_output(&cp(1.0, 1.0, 1.0, 0.5, 0.0, 1.0)).unwrap();
        assert_eq!((o.gamma, o.k, o.a, o.b), (2.0, 2.0, 0.0, 2.0));
        let o = ode_from_control_output(&cp(2.0, 0.5, 1.0, 2.0, 0.0, 0.0)).unwrap();
        assert_eq!((o.gamma, o.k, o.a, o.b), (2.0, 0.5, 0.0, 0.0));
    }

    #[test]
    fn input_form_examples() {
        let o = ode_from_control_input(&cp(1.0, 1.0, 1.0, 0.5, 0.0, 1.0)).unwrap();
        assert_eq!((o.gamma, o.k, o.a, o.b), (2.0, 2.0, 0.0, 2.0));
        let o = ode_from_control_input(&cp(1.0, 1.0, 1.0, 0.5, 1.0, 1.0)).unwrap();
        assert_eq!((o.a, o.b), (2.0, 5.0));
    }

    #[test]
    fn zero_time_constants_rejected() {
        assert!(ode_from_control_output(&cp(1.0, 1.0, 0.0, 0.5, 0.0, 1.0)).is_err());
        assert!(ode_from_control_input(&cp(1.0, 1.0, 1.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn shape_from_ode_examples() {
        let t = shape_from_ode(&OdeParams { gamma: 0.0, k: 1.0, a: 0.0, b: 0.0 }).unwrap();
        assert_eq!((t.omega, t.c, t.y), (1.0, 0.0, 0.0));
        let t = shape_from_ode(&OdeParams { gamma: 2.0, k: 1.0, a: 0.0, b: 0.0 }).unwrap();
        assert_eq!(t.omega, 0.0);
        let t = shape_from_ode(&OdeParams { gamma: 1.0, k: 2.0, a: 1.0, b: 3.0 }).unwrap();
        assert!((t.omega - 7f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((t.omega - 1.3229).abs() < 1e-4);
        assert_eq!((t.c, t.y), (0.5, 1.25));
        assert!(matches!(
            shape_from_ode(&OdeParams { gamma: 3.0, k: 1.0, a: 0.0, b: 0.0 }),
            Err(Error::Overdamped { .. })
        ));
        assert!(matches!(
            shape_from_ode(&OdeParams { gamma: 0.0, k: 0.0, a: 0.0, b: 0.0 }),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ode_from_signature_examples() {
        let s = ShapeSignature { omega: 1.0, ..Default::default() };
        let o = ode_from_signature(&s);
        assert_eq!((o.k, o.a, o.b), (1.0, 0.0, 0.0));
        let s = ShapeSignature { gamma: 2.0, omega: 1.0, c: 0.5, y: 3.0, ..Default::default() };
        let o = ode_from_signature(&s);
        assert_eq!((o.k, o.a, o.b), (2.0, 1.0, 7.0));
    }

    #[test]
    fn known_controller_examples() {
        let r = control_from_ode_known(&OdeParams { gamma: 2.0, k: 0.5, a: 0.0, b: 0.0 }, 0.5, 2.0)
            .unwrap();
        assert_eq!((r.tau_p, r.k_p, r.q1, r.q2), (1.0, 2.0, 0.0, 0.0));
        let r = control_from_ode_known(&OdeParams { gamma: 2.0, k: 2.0, a: 0.0, b: 2.0 }, 1.0, 0.5)
            .unwrap();
        assert_eq!((r.tau_p, r.k_p, r.q1, r.q2), (1.0, 1.0, 0.0, 1.0));
        assert!(matches!(
            control_from_ode_known(&OdeParams { gamma: 1.0, k: 2.0, a: 0.0, b: 0.0 }, 1.0, 0.5),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn single_dof_examples() {
        let ode = OdeParams { gamma: 2.0, k: 2.0, a: 0.0, b: 2.0 };
        let d = reduce_single_dof(&ode, 1.0).unwrap();
        assert_eq!((d.tau_i, d.kbar, d.q1, d.q2), (0.5, 1.0, 0.0, 1.0));
        let far = reduce_single_dof(&ode, 1e6).unwrap();
        let limit = ode.gamma / ode.k;
        assert!(((far.tau_i - limit) / limit).abs() < 1e-5);
        assert!(reduce_single_dof(&ode, 0.0).is_err());
        assert!(reduce_single_dof(&OdeParams { k: 0.0, ..ode }, 1.0).is_err());
    }

    #[test]
    fn predicates() {
        assert!(oscillates(&cp(1.0, 1.0, 1.0, 0.5, 0.0, 0.0)));
        assert!(!oscillates(&cp(1.0, 1.0, 1.0, 1.0, 0.0, 0.0)));
        assert!(is_stable(2.0, 1.0));
        assert!(!is_stable(2.0, 0.4));
    }
}
