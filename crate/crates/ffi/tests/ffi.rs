use std::ffi::{CStr, CString};
use std::ptr;

use greybox_ffi::*;

fn sig() -> GbSignature {
    GbSignature {
        gamma: 0.5,
        r: 2.0,
        omega: 1.5,
        y: 10.0,
        phi: 0.2,
        c: 0.1,
        x: 0.0,
    }
}

fn last_error() -> String {
    let p = gb_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sampled(s: &GbSignature) -> (Vec<f64>, Vec<f64>) {
    let times: Vec<f64> = (0..120).map(|i| i as f64 * 0.1).collect();
    let values = times
        .iter()
        .map(|t| {
            let mut v = 0.0;
            assert_eq!(unsafe { gb_eval(s, *t, &mut v) }, GbStatus::Ok);
            v
        })
        .collect();
    (times, values)
}

fn model() -> *mut GbNormalModel {
    let s = sig();
    let mu = [s.gamma, s.r, s.omega, s.y, s.phi, s.c, s.x];
    let sd = [0.02, 0.1, 0.05, 0.3, 0.05, 0.005, 1e-4];
    let (tool, sensor, step) = (CString::new("T").unwrap(), CString::new("S").unwrap(), CString::new("P").unwrap());
    let mut nm = ptr::null_mut();
    let st = unsafe {
        gb_normal_model_new(0.05, mu.as_ptr(), sd.as_ptr(), 0, tool.as_ptr(), sensor.as_ptr(), step.as_ptr(), &mut nm)
    };
    assert_eq!(st, GbStatus::Ok);
    nm
}

#[test]
fn eval_matches_closed_form() {
    let s = GbSignature { gamma: 0.0, r: 0.0, omega: 0.0, y: 3.0, phi: 0.0, c: 2.0, x: 1.0 };
    let mut v = 0.0;
    assert_eq!(unsafe { gb_eval(&s, 4.0, &mut v) }, GbStatus::Ok);
    assert_eq!(v, 9.0);
}

#[test]
fn gradient_and_hessian_shapes() {
    let mut g = [0.0; 7];
    let mut h = [0.0; 49];
    unsafe {
        assert_eq!(gb_grad_params(&sig(), 1.3, g.as_mut_ptr()), GbStatus::Ok);
        assert_eq!(gb_hess_params(&sig(), 1.3, h.as_mut_ptr()), GbStatus::Ok);
    }
    assert_eq!(g[3], 1.0);
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(h[i * 7 + j], h[j * 7 + i]);
        }
    }
}

#[test]
fn null_pointers_and_non_finite_inputs_are_reported() {
    let mut v = 0.0;
    assert_eq!(unsafe { gb_eval(ptr::null(), 0.0, &mut v) }, GbStatus::NullPointer);
    assert!(last_error().contains("null"));
    let bad = GbSignature { omega: f64::NAN, ..sig() };
    assert_eq!(unsafe { gb_eval(&bad, 0.0, &mut v) }, GbStatus::Domain);
    assert!(last_error().contains("non-finite"));
}

#[test]
fn control_round_trip() {
    let cp = GbControlParams { k_p: 1.0, k_c: 1.0, tau_p: 1.0, tau_i: 0.5, q1: 0.0, q2: 1.0 };
    let mut ode = GbOdeParams::default();
    let mut shape = GbShapeTrend::default();
    let mut rec = GbProcessRecovery::default();
    let mut osc = 0;
    unsafe {
        assert_eq!(gb_ode_from_control_output(&cp, &mut ode), GbStatus::Ok);
        assert_eq!(gb_shape_from_ode(&ode, &mut shape), GbStatus::Ok);
        assert_eq!(gb_control_from_ode_known(&ode, 1.0, 0.5, &mut rec), GbStatus::Ok);
        assert_eq!(gb_oscillates(&cp, &mut osc), GbStatus::Ok);
    }
    assert_eq!((ode.gamma, ode.k), (2.0, 2.0));
    assert!((shape.omega - 1.0).abs() < 1e-12);
    assert!((rec.tau_p - 1.0).abs() < 1e-12 && (rec.k_p - 1.0).abs() < 1e-12);
    assert_eq!(osc, 1);

    let over = GbOdeParams { gamma: 3.0, k: 1.0, a: 0.0, b: 1.0 };
    assert_eq!(unsafe { gb_shape_from_ode(&over, &mut shape) }, GbStatus::Overdamped);
    let singular = GbOdeParams { gamma: 1.0, k: 2.0, a: 0.0, b: 1.0 };
    assert_eq!(unsafe { gb_control_from_ode_known(&singular, 1.0, 0.5, &mut rec) }, GbStatus::Singular);
}

#[test]
fn fit_trace_recovers_signature() {
    let (t, v) = sampled(&sig());
    let mut out = GbSignature::default();
    let mut ssr = -1.0;
    let st = unsafe { gb_fit_trace(t.as_ptr(), v.as_ptr(), t.len(), &mut out, &mut ssr) };
    assert_eq!(st, GbStatus::Ok, "{}", last_error());
    assert!(ssr < 1e-10);
    assert!((out.gamma - 0.5).abs() < 1e-4 && (out.omega - 1.5).abs() < 1e-4);
}

#[test]
fn normal_model_lifecycle_and_scoring() {
    let nm = model();
    let s = sig();
    let (t, v) = sampled(&s);
    let mut score = 0.0;
    let mut grad = [1.0; 7];
    let mut hess = [0.0; 49];
    let mut cp = [1.0; 7];
    unsafe {
        assert_eq!(gb_score(nm, &s, t.as_ptr(), v.as_ptr(), t.len(), &mut score), GbStatus::Ok);
        assert_eq!(gb_score_gradient(nm, &s, t.as_ptr(), v.as_ptr(), t.len(), grad.as_mut_ptr()), GbStatus::Ok);
        assert_eq!(gb_score_hessian(nm, &s, t.as_ptr(), v.as_ptr(), t.len(), hess.as_mut_ptr()), GbStatus::Ok);
        assert_eq!(
            gb_changepoint_gradient(nm, &s, &s, t.as_ptr(), v.as_ptr(), t.len(), cp.as_mut_ptr()),
            GbStatus::Ok
        );
    }
    let sd: [f64; 7] = [0.02, 0.1, 0.05, 0.3, 0.05, 0.005, 1e-4];
    let baseline = (0.05f64 * 0.05).ln() / 2.0 * 120.0 + sd.iter().map(|v| v.ln()).sum::<f64>();
    assert!((score - baseline).abs() < 1e-9);
    assert_eq!(grad, [0.0; 7]);
    assert_eq!(cp, grad);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("nm.txt").to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    let mut sigma = 0.0;
    let mut mu = [0.0; 7];
    unsafe {
        assert_eq!(gb_normal_model_save(nm, path.as_ptr()), GbStatus::Ok);
        assert_eq!(gb_normal_model_load(path.as_ptr(), &mut loaded), GbStatus::Ok);
        assert_eq!(gb_normal_model_params(loaded, &mut sigma, mu.as_mut_ptr(), ptr::null_mut()), GbStatus::Ok);
        gb_normal_model_free(loaded);
        gb_normal_model_free(nm);
        gb_normal_model_free(ptr::null_mut());
    }
    assert_eq!(sigma, 0.05);
    assert_eq!(mu[3], 10.0);
}

#[test]
fn invalid_model_arguments() {
    let mu = [0.0; 7];
    let sd = [1.0; 7];
    let name = CString::new("x").unwrap();
    let mut nm = ptr::null_mut();
    let st = unsafe { gb_normal_model_new(0.1, mu.as_ptr(), sd.as_ptr(), 7, name.as_ptr(), name.as_ptr(), name.as_ptr(), &mut nm) };
    assert_eq!(st, GbStatus::InvalidArgument);
    let st = unsafe { gb_normal_model_new(-0.1, mu.as_ptr(), sd.as_ptr(), 0, name.as_ptr(), name.as_ptr(), name.as_ptr(), &mut nm) };
    assert_eq!(st, GbStatus::Domain);
    assert!(nm.is_null());
    let missing = CString::new("/nonexistent/nm.txt").unwrap();
    assert_eq!(unsafe { gb_normal_model_load(missing.as_ptr(), &mut nm) }, GbStatus::Io);
}

#[test]
fn ranking_order() {
    let g = [91.110112, 4.94883, 169.607, -6.655819, 10.89815, 279336942.0, 0.0537148];
    let mut order = [0i32; 7];
    assert_eq!(unsafe { gb_rank_contributors(g.as_ptr(), order.as_mut_ptr()) }, GbStatus::Ok);
    assert_eq!(order, [5, 2, 0, 4, 3, 1, 6]);
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(gb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
