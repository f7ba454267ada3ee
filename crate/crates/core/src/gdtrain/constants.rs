//! Step-size condition `η ≤ H(𝓛) = μ(𝓛)/(C_η κ(𝓛))` and the sampled constants
//! `B₀ = sup q_n`, `B₁ = sup ‖∇q_n‖`, `B₂ = sup ‖∇²q_n‖` over the unit sphere.
//!
//! The suprema are estimated from random unit parameter vectors, so the resulting
//! `H` is only as conservative as the sample; every report carries the sample
//! count. `‖∇²q_n‖` comes from power iteration on central-difference
//! Hessian-vector products; probes within `KINK_TOL` of a ReLU kink are skipped
//! because the difference quotient is meaningless there.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Labels;
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::numerics::norm;
use crate::objective::Objective;

const HVP_STEP: f64 = 1e-6;
const KINK_TOL: f64 = 1e-4;
const POWER_ITERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub samples: usize,
    /// Parameter samples used for `B₂` (kinked probes excluded).
    pub hessian_samples: usize,
}

/// Samples `samples` random unit vectors for `B₀, B₁` and the first
/// `hessian_samples` of them for `B₂`.
pub fn sample_constants(
    obj: &Objective,
    samples: usize,
    hessian_samples: usize,
    seed: u64,
) -> Result<SmoothnessConstants> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut b0, mut b1, mut b2) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let mut used = 0;
    for s in 0..samples.max(1) {
        let theta = obj.model.random_unit(&mut rng);
        for (c, g) in obj.constraint_gradients(&theta)? {
            b0 = b0.max(c);
            b1 = b1.max(norm(&g));
        }
        if s < hessian_samples {
            let kinked = obj
                .data
                .inputs
                .iter()
                .map(|x| obj.model.near_kink(&theta, x, KINK_TOL))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .any(|k| k);
            if !kinked {
                let start = obj.model.random_unit(&mut rng);
                b2 = b2.max(hessian_norm(obj, &theta, &start)?);
                used += 1;
            }
        }
    }
    if !(b0.is_finite() && b1.is_finite() && b2.is_finite()) {
        return Err(Error::NonFinite("sampled smoothness constants".into()));
    }
    Ok(SmoothnessConstants {
        b0,
        b1,
        b2,
        samples: samples.max(1),
        hessian_samples: used,
    })
}

// gradients of the constraints belonging to sample n
fn sample_constraint_grads(obj: &Objective, theta: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
    let (_, grads) = obj.model.output_gradients(theta, &obj.data.inputs[n])?;
    Ok(match &obj.data.labels {
        Labels::Binary(y) => vec![grads[0].iter().map(|g| y[n] * g).collect()],
        Labels::Classes { labels, .. } => {
            let yn = labels[n];
            (0..grads.len())
                .filter(|&j| j != yn)
                .map(|j| grads[yn].iter().zip(&grads[j]).map(|(a, b)| a - b).collect())
                .collect()
        }
    })
}

// largest ‖∇²c_k(θ)‖ over constraints, by power iteration on H·v
fn hessian_norm(obj: &Objective, theta: &[f64], start: &[f64]) -> Result<f64> {
    let mut best = 0.0f64;
    for n in 0..obj.data.len() {
        let k = sample_constraint_grads(obj, theta, n)?.len();
        for idx in 0..k {
            let mut v = start.to_vec();
            let mut est = 0.0;
            for _ in 0..POWER_ITERS {
                let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + HVP_STEP * d).collect();
                let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - HVP_STEP * d).collect();
                let gp = &sample_constraint_grads(obj, &plus, n)?[idx];
                let gm = &sample_constraint_grads(obj, &minus, n)?[idx];
                let hv: Vec<f64> = gp.iter().zip(gm).map(|(a, b)| (a - b) / (2.0 * HVP_STEP)).collect();
                est = norm(&hv);
                if est == 0.0 {
                    break;
                }
                v = hv.iter().map(|x| x / est).collect();
            }
            best = best.max(est);
        }
    }
    Ok(best)
}

/// Which closed form of `C_η` applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CEtaForm {
    Exponential,
    General { p: f64 },
    Multiclass { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct S5Check {
    pub pass: bool,
    /// `η/H(𝓛)`.
    pub ratio: f64,
    pub log_h: f64,
}

/// `H(𝓛)` instantiated at an anchor epoch `t₀`. All `η` and `𝓛` refer to the
/// summed loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S5Constants {
    pub order: f64,
    pub u0: f64,
    pub log_c_eta: f64,
    pub form: CEtaForm,
    /// Constants were sampled, or the loss has no closed-form GD constants.
    pub provisional: bool,
    pub constants: SmoothnessConstants,
    #[serde(skip)]
    spec: Option<LossSpec>,
}

impl S5Constants {
    pub fn new(
        spec: &LossSpec,
        order: f64,
        consts: SmoothnessConstants,
        u0: f64,
        rho0: f64,
        gamma_hat0: f64,
    ) -> Result<Self> {
        if !(gamma_hat0 > 0.0 && rho0 > 0.0 && u0 > 0.0) {
            return Err(Error::domain(
                "C_η",
                gamma_hat0,
                "γ̂(t₀) > 0, ρ(t₀) > 0, log(1/𝓛(t₀)) > 0",
            ));
        }
        let a = 2.0 - 2.0 / order;
        let (b0, b1, b2) = (consts.b0, consts.b1, consts.b2);
        let m = (gamma_hat0.powf(-a)).min(b0.powf(-a));
        let form = if spec.multiclass {
            CEtaForm::Multiclass {
                p: spec.tail.and_then(|t| t.p).unwrap_or(1.0),
            }
        } else if matches!(spec.kind, LossKind::Exp) {
            CEtaForm::Exponential
        } else {
            let p = spec
                .tail
                .and_then(|t| t.p)
                .ok_or_else(|| Error::Config(format!("loss {:?} has no log-derivative bound p", spec.name)))?;
            CEtaForm::General { p }
        };
        let rho_l = (order * rho0.ln()).exp();
        let c_eta = match form {
            CEtaForm::Exponential => 0.5 * (b1 * b1 + b2 / rho_l) * m,
            CEtaForm::General { p } => {
                let r = (b0 / gamma_hat0).powf(p);
                0.5 * b1 * (r * b1 + 2f64.powf(p + 1.0) / u0 * (p * b1 + b2)) * r * m
            }
            CEtaForm::Multiclass { p } => {
                let r = (b0 / gamma_hat0).powf(p);
                0.5 * ((r + p * 2f64.powf(p + 1.0) / u0) * b1 * b1 + 2.0 * 2f64.ln() * (b2 / rho_l + 2.0 * b1 * b1))
                    * r
                    * m
            }
        };
        Ok(Self {
            order,
            u0,
            log_c_eta: c_eta.ln(),
            form,
            provisional: true,
            constants: consts,
            spec: Some(spec.clone()),
        })
    }

    /// `log μ(𝓛)` at `u = log(1/𝓛)`.
    pub fn log_mu(&self, u: f64) -> f64 {
        self.u0.ln() - 2f64.ln() - u.ln()
    }

    /// `log κ(𝓛) = sup_{v ≥ u} −v + (2 − 2/L) log v − 2 log g'(v)`.
    pub fn log_kappa(&self, u: f64) -> Result<f64> {
        let a = 2.0 - 2.0 / self.order;
        let h = |v: f64| -> Result<f64> {
            let gp = match &self.spec {
                Some(s) if !matches!(self.form, CEtaForm::Exponential) => s.g_prime(v)?,
                _ => 1.0,
            };
            Ok(-v + a * v.ln() - 2.0 * gp.ln())
        };
        if matches!(self.form, CEtaForm::Exponential) {
            // the sup sits at v = a when u < a
            return h(if a > 0.0 { u.max(a) } else { u });
        }
        let mut best = h(u)?;
        if u < 60.0 {
            let steps = ((60.0 - u) / 1e-2).ceil() as usize;
            for k in 1..=steps {
                best = best.max(h(u + k as f64 * 1e-2)?);
            }
        }
        Ok(best)
    }

    /// `log H(𝓛) = log μ − log C_η − log κ`.
    pub fn log_h(&self, u: f64) -> Result<f64> {
        Ok(self.log_mu(u) - self.log_c_eta - self.log_kappa(u)?)
    }

    /// Checks `η ≤ H(𝓛)` given `log η` and `u = log(1/𝓛)`.
    pub fn check(&self, log_eta: f64, u: f64) -> Result<S5Check> {
        let log_h = self.log_h(u)?;
        let ratio = (log_eta - log_h).exp();
        // both logs carry an absolute rounding error of a few ulps of their size;
        // a difference below that cannot certify η ≤ H
        let resolution = 4.0 * f64::EPSILON * (log_eta.abs() + log_h.abs());
        Ok(S5Check {
            pass: log_eta <= log_h - resolution,
            ratio,
            log_h,
        })
    }
}
