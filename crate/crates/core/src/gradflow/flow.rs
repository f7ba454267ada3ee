//! RK4 integration of `dθ/dt = −∇𝓛` in a loss-relative time frame.
//!
//! Each step fixes the anchor `F = log 𝓛(θ_start)` and integrates
//! `dθ/ds = −∇𝓛·e^{−F}`, so `Δt = Δs·e^{−F}`. The right-hand side then stays of
//! order one no matter how small the loss is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{GradEvaluation, Objective};
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Bound on `|Δ log(1/𝓛)| / max(1, |log(1/𝓛)|)` per accepted step.
    pub step_tol: f64,
    /// Largest step in real time.
    pub dt_max: f64,
    pub max_halvings: u32,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            step_tol: 1e-4,
            dt_max: f64::INFINITY,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub theta: ParamVector,
    pub log_inv_loss: f64,
    pub rho: f64,
    /// `log ν`; `None` while `ν ≤ 0`.
    pub log_nu: Option<f64>,
    pub beta: f64,
    /// `log ‖∇𝓛‖`.
    pub log_grad_norm: f64,
}

/// Bookkeeping for one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub dt: f64,
    /// `log Δt`, finite even when `Δt` itself overflows.
    pub log_dt: f64,
    /// `log ν` at the RK4 midpoint stage.
    pub log_nu_mid: Option<f64>,
    pub halvings: u32,
    /// True if the gradient vanished and the state did not move.
    pub stationary: bool,
}

pub struct GradientFlow<'a> {
    obj: Objective<'a>,
    cfg: FlowConfig,
    state: FlowState,
    current: GradEvaluation,
}

fn make_state(t: f64, theta: ParamVector, ge: &GradEvaluation) -> FlowState {
    FlowState {
        t,
        log_inv_loss: ge.eval.log_inv_loss(),
        rho: theta.rho(),
        log_nu: ge.eval.log_nu(),
        beta: ge.beta(theta.as_slice()),
        log_grad_norm: ge.log_grad_norm(),
        theta,
    }
}

impl<'a> GradientFlow<'a> {
    pub fn new(obj: Objective<'a>, theta0: ParamVector, cfg: FlowConfig) -> Result<Self> {
        if !theta0.is_finite() {
            return Err(Error::NonFinite("initial parameters".into()));
        }
        let current = obj.evaluate_with_gradient(theta0.as_slice())?;
        let state = make_state(0.0, theta0, &current);
        Ok(Self {
            obj,
            cfg,
            state,
            current,
        })
    }

    pub fn state(&self) -> &FlowState {
        &self.state
    }

    pub fn current(&self) -> &GradEvaluation {
        &self.current
    }

    pub fn objective(&self) -> &Objective<'a> {
        &self.obj
    }

    // −∇𝓛·e^{−F}
    fn velocity(ge: &GradEvaluation, anchor: f64) -> Vec<f64> {
        ge.neg_grad_scaled(-anchor)
    }

    pub fn step(&mut self) -> Result<StepInfo> {
        let theta = self.state.theta.as_slice().to_vec();
        let f_anchor = self.current.eval.log_loss;
        let k1 = Self::velocity(&self.current, f_anchor);
        let speed2: f64 = k1.iter().map(|v| v * v).sum();
        if speed2 == 0.0 {
            if self.cfg.dt_max.is_finite() {
                self.state.t += self.cfg.dt_max;
            }
            return Ok(StepInfo {
                dt: 0.0,
                log_dt: f64::NEG_INFINITY,
                log_nu_mid: self.state.log_nu,
                halvings: 0,
                stationary: true,
            });
        }
        if !speed2.is_finite() {
            return Err(Error::NonFinite(format!("flow velocity at t = {}", self.state.t)));
        }
        let u0 = self.state.log_inv_loss;
        let limit = self.cfg.step_tol * u0.abs().max(1.0);
        // d log(1/𝓛)/ds = ‖k1‖² at the start of the step
        let mut ds = (0.5 * limit / speed2).min(self.cfg.dt_max * f_anchor.exp());
        let mut halvings = 0;
        loop {
            let stage = |s: f64, k: &[f64]| -> Vec<f64> { theta.iter().zip(k).map(|(a, b)| a + s * b).collect() };
            let e2 = self.obj.evaluate_with_gradient(&stage(0.5 * ds, &k1))?;
            let k2 = Self::velocity(&e2, f_anchor);
            let e3 = self.obj.evaluate_with_gradient(&stage(0.5 * ds, &k2))?;
            let k3 = Self::velocity(&e3, f_anchor);
            let e4 = self.obj.evaluate_with_gradient(&stage(ds, &k3))?;
            let k4 = Self::velocity(&e4, f_anchor);
            let next: Vec<f64> = (0..theta.len())
                .map(|i| theta[i] + ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("RK4 update at t = {}", self.state.t)));
            }
            let ge = self.obj.evaluate_with_gradient(&next)?;
            let du = ge.eval.log_inv_loss() - u0;
            if (du.abs() <= limit && du >= -1e-12 * limit) || halvings >= self.cfg.max_halvings {
                if halvings >= self.cfg.max_halvings && du.abs() > limit {
                    return Err(Error::NonFinite(format!(
                        "step control failed to converge at t = {} (Δlog(1/𝓛) = {du:e})",
                        self.state.t
                    )));
                }
                let log_dt = ds.ln() - f_anchor;
                let dt = log_dt.exp();
                let log_nu_mid = e2.eval.log_nu();
                let t = self.state.t + dt;
                self.state = make_state(t, ParamVector::new(next), &ge);
                self.current = ge;
                return Ok(StepInfo {
                    dt,
                    log_dt,
                    log_nu_mid,
                    halvings,
                    stationary: false,
                });
            }
            ds *= 0.5;
            halvings += 1;
        }
    }
}
