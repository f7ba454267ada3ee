//! Runtime checks of the gradient-flow identities and inequalities.

use serde::{Deserialize, Serialize};

use super::flow::{FlowState, StepInfo};
use crate::error::Result;
use crate::losses::LossSpec;
use crate::margin::smoothed_margin;
use crate::models::Block;
use crate::numerics::{log_integral_exp, median, norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorTolerances {
    /// Allowed per-step drop of γ̃, relative to |γ̃|.
    pub gamma_drop_rel: f64,
    /// Allowed per-step increase of 𝓛 in log space.
    pub loss_increase: f64,
    /// Weight-growth relative residual counted as a pass.
    pub weight_growth: f64,
    /// Lower bound on the per-step margin-rate slack.
    pub margin_rate: f64,
    /// Slack for the β integral bound.
    pub beta_integral: f64,
}

impl Default for MonitorTolerances {
    fn default() -> Self {
        Self {
            gamma_drop_rel: 1e-6,
            loss_increase: 1e-9,
            weight_growth: 1e-3,
            margin_rate: 1e-6,
            beta_integral: 1e-6,
        }
    }
}

/// Checks performed on one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub separated: bool,
    pub loss_increase: f64,
    /// `(γ̃_prev − γ̃)/|γ̃_prev|`, positive when γ̃ dropped.
    pub gamma_drop_rel: Option<f64>,
    /// `|½Δρ²/Δt − Lν_mid| / (Lν_mid)`.
    pub weight_growth_residual: Option<f64>,
    /// `Δlog γ̃ − L‖Δθ̂‖²/Δlog ρ`.
    pub margin_rate_slack: Option<f64>,
    /// `Δlog γ̃_blocks − Σ k_i ‖Δŵ_i‖²/Δlog ρ_i`.
    pub margin_rate_slack_blocks: Option<f64>,
    /// `log ν − log((g/g')(log 1/𝓛)·𝓛)`.
    pub nu_lower_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub t: f64,
    pub log_inv_loss: f64,
    pub tilde_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub separation: Option<Separation>,
    pub steps: usize,
    pub steps_after_separation: usize,
    pub max_loss_increase: f64,
    pub max_gamma_drop_rel: f64,
    pub weight_growth_pass_fraction: f64,
    pub min_margin_rate_slack: f64,
    pub min_margin_rate_slack_blocks: f64,
    pub min_nu_lower_gap: f64,
    pub beta_median_first_quarter: f64,
    pub beta_median_last_quarter: f64,
    /// `Σ (β⁻² − 1)·Δlog ρ` since separation.
    pub beta_integral: f64,
    /// `(1/L)·log(γ̃_end/γ̃_start)`.
    pub beta_integral_bound: f64,
    /// `(log G(1/𝓛_end), log(L² γ̃(t₀)^{2/L} (t − t₀)))`.
    pub loss_upper_bound: Option<(f64, f64)>,
}

impl FlowSummary {
    pub fn beta_integral_holds(&self, tol: f64) -> bool {
        self.beta_integral <= self.beta_integral_bound + tol
    }

    pub fn beta_rises(&self) -> bool {
        self.beta_median_last_quarter >= self.beta_median_first_quarter
    }
}

#[derive(Debug, Clone)]
struct Prev {
    tilde_gamma: Option<f64>,
    log_gamma_blocks: Option<f64>,
    log_inv_loss: f64,
    rho: f64,
    direction: Vec<f64>,
    block_dirs: Vec<(f64, Vec<f64>)>,
    beta: f64,
}

/// Accumulates per-step checks along one trajectory.
pub struct FlowMonitor<'a> {
    spec: &'a LossSpec,
    order: f64,
    blocks: Vec<Block>,
    pub tol: MonitorTolerances,
    prev: Option<Prev>,
    separation: Option<Separation>,
    steps: usize,
    checks: Vec<StepCheck>,
    betas: Vec<f64>,
    beta_integral: f64,
    last_gamma: Option<f64>,
    last_t: f64,
    last_u: f64,
}

impl<'a> FlowMonitor<'a> {
    pub fn new(spec: &'a LossSpec, order: f64, blocks: &[Block]) -> Self {
        Self {
            spec,
            order,
            blocks: blocks.to_vec(),
            tol: MonitorTolerances::default(),
            prev: None,
            separation: None,
            steps: 0,
            checks: Vec::new(),
            betas: Vec::new(),
            beta_integral: 0.0,
            last_gamma: None,
            last_t: 0.0,
            last_u: f64::NAN,
        }
    }

    pub fn separation(&self) -> Option<Separation> {
        self.separation
    }

    pub fn checks(&self) -> &[StepCheck] {
        &self.checks
    }

    fn snapshot(&self, s: &FlowState) -> Prev {
        let th = s.theta.as_slice();
        let tilde_gamma = smoothed_margin(s.rho, s.log_inv_loss, self.spec, self.order).ok();
        let block_dirs: Vec<(f64, Vec<f64>)> = self
            .blocks
            .iter()
            .map(|b| {
                let w = &th[b.start..b.end];
                let n = norm(w);
                let d = if n > 0.0 {
                    w.iter().map(|v| v / n).collect()
                } else {
                    vec![0.0; w.len()]
                };
                (n, d)
            })
            .collect();
        let log_gamma_blocks = match self.spec.g(s.log_inv_loss) {
            Ok(g) if g > 0.0 && block_dirs.iter().all(|(n, _)| *n > 0.0) => Some(
                g.ln()
                    - self
                        .blocks
                        .iter()
                        .zip(&block_dirs)
                        .map(|(b, (n, _))| b.k * n.ln())
                        .sum::<f64>(),
            ),
            _ => None,
        };
        Prev {
            tilde_gamma,
            log_gamma_blocks,
            log_inv_loss: s.log_inv_loss,
            rho: s.rho,
            direction: s.theta.direction(),
            block_dirs,
            beta: s.beta,
        }
    }

    /// Record the initial state (no step).
    pub fn start(&mut self, s: &FlowState) {
        self.observe_separation(s);
        self.prev = Some(self.snapshot(s));
        if self.separation.is_some() {
            self.betas.push(s.beta);
        }
        self.last_t = s.t;
        self.last_u = s.log_inv_loss;
    }

    fn observe_separation(&mut self, s: &FlowState) {
        if self.separation.is_none() && s.log_inv_loss > self.spec.g_domain_start() {
            if let Ok(g) = smoothed_margin(s.rho, s.log_inv_loss, self.spec, self.order) {
                self.separation = Some(Separation {
                    t: s.t,
                    log_inv_loss: s.log_inv_loss,
                    tilde_gamma: g,
                });
            }
        }
    }

    /// Check the step that produced `s`.
    pub fn observe(&mut self, s: &FlowState, info: &StepInfo) -> Result<StepCheck> {
        let was_separated = self.separation.is_some();
        let prev = self.prev.take().expect("FlowMonitor::start must be called first");
        let cur = self.snapshot(s);
        self.steps += 1;
        let loss_increase = prev.log_inv_loss - s.log_inv_loss;
        let mut check = StepCheck {
            separated: was_separated,
            loss_increase,
            gamma_drop_rel: None,
            weight_growth_residual: None,
            margin_rate_slack: None,
            margin_rate_slack_blocks: None,
            nu_lower_gap: None,
        };
        if was_separated && !info.stationary {
            if let (Some(g0), Some(g1)) = (prev.tilde_gamma, cur.tilde_gamma) {
                check.gamma_drop_rel = Some((g0 - g1) / g0.abs());
                let dlog_rho = s.rho.ln() - prev.rho.ln();
                if dlog_rho > 0.0 {
                    let dth2: f64 = cur
                        .direction
                        .iter()
                        .zip(&prev.direction)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    check.margin_rate_slack = Some((g1.ln() - g0.ln()) - self.order * dth2 / dlog_rho);
                }
                // trapezoid in log ρ
                let f = |b: f64| 1.0 / (b * b) - 1.0;
                self.beta_integral += 0.5 * (f(prev.beta) + f(s.beta)) * dlog_rho;
            }
            if let (Some(a), Some(b)) = (prev.log_gamma_blocks, cur.log_gamma_blocks) {
                let mut rhs = 0.0;
                let mut ok = true;
                for (blk, ((n0, d0), (n1, d1))) in self.blocks.iter().zip(prev.block_dirs.iter().zip(&cur.block_dirs)) {
                    let dl = n1.ln() - n0.ln();
                    if dl <= 0.0 {
                        ok = false;
                        break;
                    }
                    let dd: f64 = d0.iter().zip(d1).map(|(x, y)| (x - y) * (x - y)).sum();
                    rhs += blk.k * dd / dl;
                }
                if ok {
                    check.margin_rate_slack_blocks = Some((b - a) - rhs);
                }
            }
            if let Some(log_nu_mid) = info.log_nu_mid {
                let drho2 = (s.rho - prev.rho) * (s.rho + prev.rho);
                if drho2 > 0.0 {
                    let lhs = (0.5 * drho2).ln() - info.log_dt;
                    let rhs = self.order.ln() + log_nu_mid;
                    check.weight_growth_residual = Some((lhs - rhs).exp_m1().abs());
                }
            }
            if let Some(log_nu) = s.log_nu {
                let u = s.log_inv_loss;
                if let (Ok(g), Ok(gp)) = (self.spec.g(u), self.spec.g_prime(u)) {
                    check.nu_lower_gap = Some(log_nu - (g.ln() - gp.ln() - u));
                }
            }
        }
        self.observe_separation(s);
        if self.separation.is_some() {
            self.betas.push(s.beta);
            if was_separated {
                self.checks.push(check);
            }
        }
        self.last_gamma = cur.tilde_gamma;
        self.last_t = s.t;
        self.last_u = s.log_inv_loss;
        self.prev = Some(cur);
        Ok(check)
    }

    pub fn summary(&self) -> FlowSummary {
        let fold_max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
        let fold_min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        let wg: Vec<f64> = self.checks.iter().filter_map(|c| c.weight_growth_residual).collect();
        let wg_pass = if wg.is_empty() {
            1.0
        } else {
            wg.iter().filter(|&&r| r <= self.tol.weight_growth).count() as f64 / wg.len() as f64
        };
        let q = self.betas.len() / 4;
        let (b_first, b_last) = if q == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (median(&self.betas[..q]), median(&self.betas[self.betas.len() - q..]))
        };
        let bound = match (self.separation, self.last_gamma) {
            (Some(sep), Some(g)) => (g / sep.tilde_gamma).ln() / self.order,
            _ => 0.0,
        };
        let loss_upper_bound = self.separation.map(|sep| {
            loss_upper_bound_logs(
                self.spec,
                self.order,
                sep.log_inv_loss,
                self.last_u,
                sep.tilde_gamma,
                self.last_t - sep.t,
            )
        });
        FlowSummary {
            separation: self.separation,
            steps: self.steps,
            steps_after_separation: self.checks.len(),
            max_loss_increase: fold_max(&mut self.checks.iter().map(|c| c.loss_increase)),
            max_gamma_drop_rel: fold_max(&mut self.checks.iter().filter_map(|c| c.gamma_drop_rel)),
            weight_growth_pass_fraction: wg_pass,
            min_margin_rate_slack: fold_min(&mut self.checks.iter().filter_map(|c| c.margin_rate_slack)),
            min_margin_rate_slack_blocks: fold_min(&mut self.checks.iter().filter_map(|c| c.margin_rate_slack_blocks)),
            min_nu_lower_gap: fold_min(&mut self.checks.iter().filter_map(|c| c.nu_lower_gap)),
            beta_median_first_quarter: b_first,
            beta_median_last_quarter: b_last,
            beta_integral: self.beta_integral,
            beta_integral_bound: bound,
            loss_upper_bound,
        }
    }
}

/// `(log G(e^{u}), log(L² γ̃₀^{2/L} Δt))` where
/// `G(x) = ∫_{e^{u₀}}^{x} g'(log v)²/g(log v)^{2−2/L} dv`, integrated in `log v`.
pub fn loss_upper_bound_logs(spec: &LossSpec, order: f64, u0: f64, u: f64, gamma0: f64, dt: f64) -> (f64, f64) {
    let e = 2.0 - 2.0 / order;
    let h = |v: f64| -> f64 {
        match (spec.g(v), spec.g_prime(v)) {
            (Ok(g), Ok(gp)) => v + 2.0 * gp.ln() - e * g.ln(),
            _ => f64::NEG_INFINITY,
        }
    };
    let panels = (((u - u0) / 0.01).ceil() as usize).clamp(2, 200_000);
    let lhs = log_integral_exp(h, u0, u, panels);
    let rhs = 2.0 * order.ln() + (2.0 / order) * gamma0.ln() + dt.ln();
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_loss_upper_bound_integral() {
        // L = 1, exp loss: G(x) = x − e^{u0}
        let e = LossSpec::exponential();
        let (lhs, _) = loss_upper_bound_logs(&e, 1.0, 1.0, 5.0, 1.0, 1.0);
        let want = (5f64.exp() - 1f64.exp()).ln();
        assert!((lhs - want).abs() < 1e-8);
    }
}
