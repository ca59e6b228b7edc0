use crate::oscillator::{
    derivatives_unchecked, value_unchecked, ShapeSignature, TraceSeries, NPARAM,
};

use super::PriorExponent;

/// Diagonal Gaussian prior `0.5 * sum_d w_d (s_d - mu_d)^2`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PriorTerm {
    pub mu: [f64; NPARAM],
    pub weight: [f64; NPARAM],
}

impl PriorTerm {
    pub fn new(mu: [f64; NPARAM], sigma_s: [f64; NPARAM], exponent: PriorExponent) -> Self {
        let mut weight = [0.0; NPARAM];
        for (w, s) in weight.iter_mut().zip(sigma_s) {
            *w = match exponent {
                PriorExponent::Variance => 1.0 / (s * s),
                PriorExponent::Std => 1.0 / s,
            };
        }
        PriorTerm { mu, weight }
    }

    pub fn value(&self, s: &[f64; NPARAM]) -> f64 {
        (0..NPARAM)
            .map(|d| {
                let dev = s[d] - self.mu[d];
                0.5 * self.weight[d] * dev * dev
            })
            .sum()
    }
}

/// The `s`-dependent part of one wafer's negative log joint:
/// `ssr(s) / (2 sigma^2) + prior(s)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WaferObjective<'a> {
    pub trace: &'a TraceSeries,
    pub inv_sigma2: f64,
    pub prior: Option<PriorTerm>,
}

impl WaferObjective<'_> {
    pub fn value(&self, s: &ShapeSignature) -> f64 {
        let mut ssr = 0.0;
        for (&t, &z) in self.trace.times.iter().zip(&self.trace.values) {
            let r = z - value_unchecked(s, t);
            ssr += r * r;
        }
        let prior = self.prior.map_or(0.0, |p| p.value(&s.to_array()));
        0.5 * self.inv_sigma2 * ssr + prior
    }

    /// Value, gradient and Hessian with respect to all seven components.
    pub fn derivatives(
        &self,
        s: &ShapeSignature,
    ) -> (f64, [f64; NPARAM], [[f64; NPARAM]; NPARAM]) {
        let mut ssr = 0.0;
        let mut grad = [0.0; NPARAM];
        let mut hess = [[0.0; NPARAM]; NPARAM];
        for (&t, &z) in self.trace.times.iter().zip(&self.trace.values) {
            let d = derivatives_unchecked(s, t);
            let r = z - d.value;
            ssr += r * r;
            for i in 0..NPARAM {
                grad[i] -= r * d.grad[i];
                for j in i..NPARAM {
                    hess[i][j] += d.grad[i] * d.grad[j] - r * d.hess[i][j];
                }
            }
        }
        let k = self.inv_sigma2;
        let mut value = 0.5 * k * ssr;
        for i in 0..NPARAM {
            grad[i] *= k;
            for j in i..NPARAM {
                hess[i][j] *= k;
                hess[j][i] = hess[i][j];
            }
        }
        if let Some(p) = &self.prior {
            let a = s.to_array();
            value += p.value(&a);
            for d in 0..NPARAM {
                grad[d] += p.weight[d] * (a[d] - p.mu[d]);
                hess[d][d] += p.weight[d];
            }
        }
        (value, grad, hess)
    }
}
