//! Normalized and smoothed margins with their sandwich bounds.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::HomogeneousModel;
use crate::objective::{Evaluation, Objective};

/// Margins of one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub q: Vec<f64>,
    pub q_min: f64,
    pub bar_gamma: f64,
    /// `None` until `𝓛` drops below the separability threshold.
    pub tilde_gamma: Option<f64>,
    pub sandwich_low: Option<f64>,
    pub sandwich_high: Option<f64>,
    pub log_inv_loss: f64,
}

impl MarginReport {
    pub fn from_evaluation(eval: &Evaluation, rho: f64, order: f64, spec: &LossSpec) -> Self {
        let q_min = eval.q_min();
        let u = eval.log_inv_loss();
        let scale = (order * rho.ln()).exp();
        let tilde_gamma = smoothed_margin(rho, u, spec, order).ok();
        let (low, high) = match tilde_gamma {
            Some(_) => {
                let (l, h) = margin_sandwich(spec, q_min, u, rho, order, effective_count(eval));
                // −∞ means no certified lower bound yet; keep the output finite
                (l.is_finite().then_some(l), Some(h))
            }
            None => (None, None),
        };
        Self {
            q: eval.q.clone(),
            q_min,
            bar_gamma: q_min / scale,
            tilde_gamma,
            sandwich_low: low,
            sandwich_high: high,
            log_inv_loss: u,
        }
    }

    pub fn compute(model: &HomogeneousModel, theta: &[f64], data: &Dataset, spec: &LossSpec) -> Result<Self> {
        let obj = Objective::new(model, data, spec)?;
        let eval = obj.evaluate(theta)?;
        Ok(Self::from_evaluation(
            &eval,
            crate::numerics::norm(theta),
            model.order(),
            spec,
        ))
    }

    /// `sandwich_low ≤ γ̃ ≤ γ̄` with absolute slack `tol`; vacuous before separation.
    pub fn sandwich_holds(&self, tol: f64) -> bool {
        match self.tilde_gamma {
            Some(t) => self.sandwich_low.is_none_or(|l| l <= t + tol) && t <= self.bar_gamma + tol,
            None => true,
        }
    }
}

/// Number of constraint terms per bound: `N` for binary data, `N(C−1)` for
/// multi-class data (each `log(1 + Σ_j e^{−s_j})` is at most `(C−1)` logistic terms).
fn effective_count(eval: &Evaluation) -> f64 {
    eval.constraints.len() as f64
}

/// Per-sample margins `q_n`.
pub fn sample_margins(model: &HomogeneousModel, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    // the loss does not influence q_n; any loss compatible with the labels will do
    let spec = if data.num_outputs() > 1 {
        LossSpec::cross_entropy()
    } else {
        LossSpec::exponential()
    };
    Ok(Objective::new(model, data, &spec)?.evaluate(theta)?.q)
}

/// `log(1/𝓛)` computed in log space.
pub fn log_inv_loss(model: &HomogeneousModel, theta: &[f64], data: &Dataset, spec: &LossSpec) -> Result<f64> {
    Ok(Objective::new(model, data, spec)?.evaluate(theta)?.log_inv_loss())
}

/// `γ̃ = g(log 1/𝓛)/ρ^L`.
pub fn smoothed_margin(rho: f64, log_inv_loss: f64, spec: &LossSpec, order: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::domain("smoothed margin", rho, "ρ > 0"));
    }
    if !(log_inv_loss > spec.g_domain_start()) {
        return Err(Error::domain(
            "smoothed margin",
            log_inv_loss,
            format!("log(1/𝓛) > f(b_f) = {}", spec.g_domain_start()),
        ));
    }
    Ok(spec.g(log_inv_loss)? / (order * rho.ln()).exp())
}

/// `γ̃ = g(log 1/𝓛) / ∏ ρ_i^{k_i}` over homogeneity blocks.
pub fn smoothed_margin_multihomo(
    block_norms: &[f64],
    k_exps: &[f64],
    log_inv_loss: f64,
    spec: &LossSpec,
) -> Result<f64> {
    Ok(spec.g(log_inv_loss)? / block_scale(block_norms, k_exps)?)
}

/// `∏ ρ_i^{k_i}`, failing on a zero block norm.
pub fn block_scale(block_norms: &[f64], k_exps: &[f64]) -> Result<f64> {
    if block_norms.len() != k_exps.len() {
        return Err(Error::Shape {
            op: "block_scale",
            expected: vec![k_exps.len()],
            got: vec![block_norms.len()],
        });
    }
    let mut log_s = 0.0;
    for (i, (&r, &k)) in block_norms.iter().zip(k_exps).enumerate() {
        if !(r > 0.0) {
            return Err(Error::ZeroBlockNorm(i));
        }
        log_s += k * r.ln();
    }
    Ok(log_s.exp())
}

/// Certified `(low, high)` bracket for `γ̃` relative to `γ̄`.
///
/// `high = γ̄`. `low` uses `log 1/𝓛 ≥ f(q_min) − log n` and the mean-value bound
/// `g(f(q_min) − log n) ≥ q_min − g'(ξ)·log n`, with `g'(ξ)` replaced by the larger
/// of `g'` at the two interval endpoints (an upper bound whenever `g'` is monotone).
pub fn margin_sandwich(spec: &LossSpec, q_min: f64, _log_inv_loss: f64, rho: f64, order: f64, n: f64) -> (f64, f64) {
    let scale = (order * rho.ln()).exp();
    let high = q_min / scale;
    let log_n = n.ln();
    if log_n == 0.0 {
        return (high, high);
    }
    let right = spec.f(q_min);
    let left = right - log_n;
    let gp = match (spec.g_prime(left), spec.g_prime(right)) {
        (Ok(a), Ok(b)) => a.max(b),
        _ => return (f64::NEG_INFINITY, high),
    };
    ((q_min - gp * log_n) / scale, high)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_single_sample() {
        let e = LossSpec::exponential();
        assert_eq!(smoothed_margin(1.0, 5.0, &e, 1.0).unwrap(), 5.0);
        let (l, h) = margin_sandwich(&e, 5.0, 5.0, 1.0, 1.0, 1.0);
        assert_eq!((l, h), (5.0, 5.0));
    }

    #[test]
    fn logistic_loss_value() {
        let l = LossSpec::logistic();
        let loss: f64 = 0.1;
        let got = smoothed_margin(2.0, -loss.ln(), &l, 2.0).unwrap();
        let want = -(loss.exp() - 1.0).ln() / 4.0;
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn below_threshold_is_domain_error() {
        let e = LossSpec::exponential();
        assert!(matches!(smoothed_margin(1.0, -0.5, &e, 1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn multihomo_block_scaling() {
        let e = LossSpec::exponential();
        let a = smoothed_margin_multihomo(&[2.0, 3.0], &[1.0, 1.0], 4.0, &e).unwrap();
        let b = smoothed_margin_multihomo(&[2.0 * 1.5, 3.0], &[1.0, 1.0], 4.0, &e).unwrap();
        assert!((b - a / 1.5).abs() < 1e-15);
        let single = smoothed_margin(13f64.sqrt(), 4.0, &e, 2.0).unwrap();
        assert!((a - single).abs() > 1e-3);
        assert!(matches!(
            smoothed_margin_multihomo(&[0.0, 1.0], &[1.0, 1.0], 4.0, &e),
            Err(Error::ZeroBlockNorm(0))
        ));
    }

    #[test]
    fn logistic_sandwich_width_deep_in_training() {
        let l = LossSpec::logistic();
        let (lo, hi) = margin_sandwich(&l, 50.0, 0.0, 1.0, 1.0, 10.0);
        assert!(hi - lo <= 1.01 * 10f64.ln());
        assert!(hi - lo > 0.0);
    }
}
