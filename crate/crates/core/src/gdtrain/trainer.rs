//! Full-batch (or seeded mini-batch) gradient descent in the relative loss frame.
//!
//! Theory monitors refer to the summed loss `𝓛 = N·𝓛̄` and the matching step
//! `η_sum = η/N`; the scheduler itself works with the mean loss. The anchor epoch
//! `t₀` is the first epoch with `log(1/𝓛) ≥ t0_log_inv_loss`; from there on the
//! step can be capped at `H(𝓛)` and `γ̂` is tracked.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{shuffled_indices, Dataset};
use crate::error::{Error, Result};
use crate::margin::smoothed_margin;
use crate::numerics::{dot, logsumexp};
use crate::objective::{GradEvaluation, Objective};
use crate::param::ParamVector;

use super::constants::{sample_constants, S5Check, S5Constants, SmoothnessConstants};
use super::frame::{gd_step, relative_loss, RelativeLossFrame};
use super::gamma_hat::{GammaHat, GammaHatGrid};
use super::scheduler::{loss_based_lr_epoch, LrSchedulerConfig, LrSchedulerState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GdMode {
    /// Constant step on the mean loss.
    Constant {
        eta: f64,
    },
    LossBased(LrSchedulerConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub mode: GdMode,
    /// Cap `η_sum ≤ H(𝓛)` from `t₀` on.
    pub s5_cap: bool,
    /// `log(1/𝓛)` that defines `t₀`; defaults to `1 + max(0, f(b_f))`.
    pub t0_log_inv_loss: Option<f64>,
    /// Mini-batch size; `None` is full batch. Mini-batch runs are outside the
    /// theory and skip the per-step monitors.
    pub batch_size: Option<usize>,
    pub constant_samples: usize,
    pub hessian_samples: usize,
    pub gamma_hat_grid: GammaHatGrid,
    pub seed: u64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            mode: GdMode::LossBased(LrSchedulerConfig::default()),
            s5_cap: true,
            t0_log_inv_loss: None,
            batch_size: None,
            constant_samples: 10_000,
            hessian_samples: 200,
            gamma_hat_grid: GammaHatGrid::default(),
            seed: 0,
        }
    }
}

/// Quantities fixed at the anchor epoch `t₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdTheory {
    pub t0_epoch: usize,
    pub u0: f64,
    pub rho0: f64,
    pub gamma_hat0: f64,
    pub s5: S5Constants,
    #[serde(skip)]
    table: Option<GammaHat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub log_inv_loss: f64,
    pub log_mean_loss: f64,
    pub rho: f64,
    pub q_min: f64,
    pub bar_gamma: f64,
    pub tilde_gamma: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub gamma_hat_clamped: bool,
    pub beta: f64,
    pub log_nu: Option<f64>,
    pub log_grad_norm: f64,
    /// `α` after the scheduler update.
    pub alpha: Option<f64>,
    /// `α` of the accepted pass.
    pub alpha_used: Option<f64>,
    pub eta_hat: f64,
    /// `log η` on the mean loss.
    pub log_eta: f64,
    pub retries: usize,
    pub capped: bool,
    pub s5: Option<S5Check>,
    /// `(rhs − lhs)/|rhs|` of the descent inequality; negative means violated.
    pub descent_slack: Option<f64>,
    /// `Δρ²/(2Lη ν)`, expected in `[1, growth_upper]`.
    pub growth_ratio: Option<f64>,
    pub growth_upper: Option<f64>,
    /// `log Σ η_sum` since the first epoch.
    pub log_cum_eta: f64,
    /// `log Σ η_sum` since `t₀`.
    pub log_cum_eta_t0: Option<f64>,
    pub flagged: Option<String>,
}

impl EpochRecord {
    /// Names of fields holding NaN or ±∞. The step logs are `log 0 = −∞` before
    /// the first step and are only checked afterwards.
    pub fn non_finite_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        let mut check = |name: &'static str, v: Option<f64>| {
            if v.is_some_and(|x| !x.is_finite()) {
                bad.push(name);
            }
        };
        check("log_inv_loss", Some(self.log_inv_loss));
        check("log_mean_loss", Some(self.log_mean_loss));
        check("rho", Some(self.rho));
        check("q_min", Some(self.q_min));
        check("bar_gamma", Some(self.bar_gamma));
        check("tilde_gamma", self.tilde_gamma);
        check("gamma_hat", self.gamma_hat);
        check("beta", Some(self.beta));
        check("log_nu", self.log_nu);
        check("log_grad_norm", Some(self.log_grad_norm));
        check("alpha", self.alpha);
        check("alpha_used", self.alpha_used);
        check("eta_hat", Some(self.eta_hat));
        check("descent_slack", self.descent_slack);
        check("growth_ratio", self.growth_ratio);
        check("growth_upper", self.growth_upper);
        check("log_cum_eta_t0", self.log_cum_eta_t0);
        if self.eta_hat > 0.0 {
            check("log_eta", Some(self.log_eta));
            check("log_cum_eta", Some(self.log_cum_eta));
        }
        if let Some(s) = &self.s5 {
            check("s5.ratio", Some(s.ratio));
            check("s5.log_h", Some(s.log_h));
        }
        bad
    }
}

pub struct GdTrainer<'a> {
    obj: Objective<'a>,
    cfg: GdConfig,
    theta: ParamVector,
    current: GradEvaluation,
    epoch: usize,
    scheduler: Option<LrSchedulerState>,
    constants: Option<SmoothnessConstants>,
    theory: Option<GdTheory>,
    log_cum_eta: f64,
    log_cum_eta_t0: Option<f64>,
    rng: ChaCha8Rng,
}

struct Candidate {
    theta: ParamVector,
    ge: GradEvaluation,
    eta_hat: f64,
    capped: bool,
    log_loss: f64,
}

impl<'a> GdTrainer<'a> {
    pub fn new(obj: Objective<'a>, theta0: ParamVector, cfg: GdConfig) -> Result<Self> {
        if !theta0.is_finite() {
            return Err(Error::NonFinite("initial parameters".into()));
        }
        if let Some(b) = cfg.batch_size {
            if b == 0 || b > obj.len() {
                return Err(Error::Config(format!("batch size {b} outside 1..={}", obj.len())));
            }
        }
        let current = obj.evaluate_with_gradient(theta0.as_slice())?;
        let scheduler = match cfg.mode {
            GdMode::LossBased(s) => Some(LrSchedulerState::new(&s, current.eval.log_mean_loss())?),
            GdMode::Constant { eta } if eta >= 0.0 => None,
            GdMode::Constant { eta } => return Err(Error::Config(format!("negative learning rate {eta}"))),
        };
        Ok(Self {
            obj,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            theta: theta0,
            current,
            epoch: 0,
            scheduler,
            constants: None,
            theory: None,
            log_cum_eta: f64::NEG_INFINITY,
            log_cum_eta_t0: None,
        })
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn current(&self) -> &GradEvaluation {
        &self.current
    }

    pub fn theory(&self) -> Option<&GdTheory> {
        self.theory.as_ref()
    }

    pub fn epoch_index(&self) -> usize {
        self.epoch
    }

    /// Supplies previously sampled constants instead of sampling them here.
    pub fn set_constants(&mut self, c: SmoothnessConstants) {
        self.constants = Some(c);
    }

    /// Sampled `B₀, B₁, B₂` (computed once).
    pub fn constants(&mut self) -> Result<SmoothnessConstants> {
        if let Some(c) = self.constants {
            return Ok(c);
        }
        let c = sample_constants(
            &self.obj,
            self.cfg.constant_samples,
            self.cfg.hessian_samples,
            self.cfg.seed ^ 0x5eed,
        )?;
        self.constants = Some(c);
        Ok(c)
    }

    fn t0_threshold(&self) -> f64 {
        self.cfg
            .t0_log_inv_loss
            .unwrap_or_else(|| 1.0 + self.obj.loss.g_domain_start().max(0.0))
    }

    fn maybe_anchor(&mut self) -> Result<()> {
        let u = self.current.eval.log_inv_loss();
        if self.theory.is_some() || u < self.t0_threshold() || self.current.eval.q_min() <= 0.0 {
            return Ok(());
        }
        let order = self.obj.order();
        let table = GammaHat::new(self.obj.loss, order, u, self.cfg.gamma_hat_grid)?;
        let rho0 = self.theta.rho();
        let gamma_hat0 = table.value(u, rho0)?.gamma_hat;
        let consts = self.constants()?;
        let mut s5 = S5Constants::new(self.obj.loss, order, consts, u, rho0, gamma_hat0)?;
        s5.provisional = true;
        self.theory = Some(GdTheory {
            t0_epoch: self.epoch,
            u0: u,
            rho0,
            gamma_hat0,
            s5,
            table: Some(table),
        });
        Ok(())
    }

    /// Snapshot of the current parameters (used for epoch 0).
    pub fn record(&self) -> Result<EpochRecord> {
        self.make_record(None, 0.0, f64::NEG_INFINITY, 0, false, None, None, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn make_record(
        &self,
        alpha_used: Option<f64>,
        eta_hat: f64,
        log_eta: f64,
        retries: usize,
        capped: bool,
        s5: Option<S5Check>,
        descent: Option<f64>,
        growth: Option<(f64, f64)>,
    ) -> Result<EpochRecord> {
        let eval = &self.current.eval;
        let u = eval.log_inv_loss();
        let rho = self.theta.rho();
        let order = self.obj.order();
        let q_min = eval.q_min();
        let (gamma_hat, clamped) = match self.theory.as_ref().and_then(|t| t.table.as_ref()) {
            Some(t) => {
                let v = t.value(u, rho)?;
                (Some(v.gamma_hat), v.clamped)
            }
            None => (None, false),
        };
        Ok(EpochRecord {
            epoch: self.epoch,
            log_inv_loss: u,
            log_mean_loss: eval.log_mean_loss(),
            rho,
            q_min,
            bar_gamma: q_min / (order * rho.ln()).exp(),
            tilde_gamma: smoothed_margin(rho, u, self.obj.loss, order).ok(),
            gamma_hat,
            gamma_hat_clamped: clamped,
            beta: self.current.beta(self.theta.as_slice()),
            log_nu: eval.log_nu(),
            log_grad_norm: self.current.log_grad_norm(),
            alpha: self.scheduler.map(|s| s.alpha),
            alpha_used,
            eta_hat,
            log_eta,
            retries,
            capped,
            s5,
            descent_slack: descent,
            growth_ratio: growth.map(|g| g.0),
            growth_upper: growth.map(|g| g.1),
            log_cum_eta: self.log_cum_eta,
            log_cum_eta_t0: self.log_cum_eta_t0,
            flagged: None,
        })
    }

    // one pass over the data with relative step η̂ (before capping)
    fn pass(&mut self, f_tilde: f64, eta_hat: f64, cap: Option<f64>) -> Result<Candidate> {
        let (eta_hat, capped) = match cap {
            Some(c) if eta_hat > c => (c, true),
            _ => (eta_hat, false),
        };
        let frame = RelativeLossFrame::new(f_tilde, eta_hat);
        let theta = match self.cfg.batch_size {
            None => gd_step(&self.theta, &self.current, &frame)?,
            Some(b) => {
                let order = shuffled_indices(self.obj.len(), &mut self.rng);
                let mut th = self.theta.clone();
                for chunk in order.chunks(b) {
                    let sub: Dataset = self.obj.data.subset(chunk);
                    let obj_b = Objective::new(self.obj.model, &sub, self.obj.loss)?;
                    let ge = obj_b.evaluate_with_gradient(th.as_slice())?;
                    th = gd_step(&th, &ge, &frame)?;
                }
                th
            }
        };
        let ge = self.obj.evaluate_with_gradient(theta.as_slice())?;
        let log_loss = relative_loss(&ge.eval, &frame, self.obj.loss).ln() + f_tilde;
        // +∞ is an overshoot the scheduler rejects; NaN means the evaluation broke
        if log_loss.is_nan() {
            return Err(Error::NonFinite(format!("loss after epoch {}", self.epoch + 1)));
        }
        Ok(Candidate {
            theta,
            ge,
            eta_hat,
            capped,
            log_loss,
        })
    }

    /// Runs one epoch. A scheduler that runs out of retries leaves `θ`
    /// unchanged and returns a record with `flagged` set.
    pub fn epoch(&mut self) -> Result<EpochRecord> {
        self.maybe_anchor()?;
        let f_tilde = self.current.eval.log_mean_loss();
        let n = self.obj.len() as f64;
        let u = self.current.eval.log_inv_loss();
        let full_batch = self.cfg.batch_size.is_none();
        let cap = match (&self.theory, self.cfg.s5_cap) {
            // kept below H by more than the rounding error of the logs involved,
            // so that the logged check never flips on rounding
            (Some(t), true) => {
                let log_h = t.s5.log_h(u)?;
                let margin = 1e-12 + 16.0 * f64::EPSILON * (log_h.abs() + f_tilde.abs() + n.ln());
                Some((n.ln() + log_h + f_tilde - margin).exp())
            }
            _ => None,
        };

        let (cand, alpha_used, retries) = match self.cfg.mode {
            GdMode::Constant { eta } => {
                let eta_hat = (eta.ln() + f_tilde).exp();
                (self.pass(f_tilde, eta_hat, cap)?, None, 0)
            }
            GdMode::LossBased(_) => {
                let mut sched = self.scheduler.expect("loss-based mode has a scheduler");
                let frame0 = RelativeLossFrame::new(f_tilde, 0.0);
                sched.last_log_loss = relative_loss(&self.current.eval, &frame0, self.obj.loss).ln() + f_tilde;
                let res = loss_based_lr_epoch(&mut sched, |alpha| self.pass(f_tilde, alpha, cap), |c| Ok(c.log_loss));
                match res {
                    Ok(out) => {
                        // a binding cap would otherwise let α grow without bound
                        if out.candidate.capped {
                            sched.alpha = out.candidate.eta_hat * sched.r_u;
                        }
                        self.scheduler = Some(sched);
                        (out.candidate, Some(out.alpha_used), out.retries)
                    }
                    Err(Error::RetryBudget(r)) => {
                        self.scheduler = Some(sched);
                        let mut rec = self.record()?;
                        rec.epoch = self.epoch + 1;
                        rec.retries = r;
                        rec.flagged = Some(format!("retry budget exhausted after {r} retries"));
                        return Ok(rec);
                    }
                    Err(e) => {
                        self.scheduler = Some(sched);
                        return Err(e);
                    }
                }
            }
        };

        let log_eta = cand.eta_hat.ln() - f_tilde;
        let log_eta_sum = log_eta - n.ln();
        let (mut s5, mut descent, mut growth) = (None, None, None);
        if let (Some(t), true) = (&self.theory, full_batch) {
            if cand.eta_hat > 0.0 {
                s5 = Some(t.s5.check(log_eta_sum, u)?);
                let mu = t.s5.log_mu(u).exp();
                let u_next = cand.ge.eval.log_inv_loss();
                let lhs = (u - u_next).exp_m1();
                let rhs = -(1.0 - mu) * (log_eta_sum + 2.0 * self.current.log_grad_norm() + u).exp();
                descent = Some((rhs - lhs) / rhs.abs());
                if let Some(log_nu) = self.current.eval.log_nu() {
                    let th = self.theta.as_slice();
                    let d: Vec<f64> = cand.theta.as_slice().iter().zip(th).map(|(a, b)| a - b).collect();
                    let dr2 = 2.0 * dot(th, &d) + dot(&d, &d);
                    let order = self.obj.order();
                    let ratio = dr2 / (2.0 * order * (log_eta_sum + log_nu).exp());
                    let lam = self.obj.loss.lambda_from_log_inv(u)?;
                    growth = Some((ratio, 1.0 + lam * mu / order));
                }
            }
        }

        if cand.eta_hat > 0.0 {
            self.log_cum_eta = logsumexp(&[self.log_cum_eta, log_eta_sum]);
            if self.theory.is_some() {
                let prev = self.log_cum_eta_t0.unwrap_or(f64::NEG_INFINITY);
                self.log_cum_eta_t0 = Some(logsumexp(&[prev, log_eta_sum]));
            }
        }
        self.theta = cand.theta;
        self.current = cand.ge;
        self.epoch += 1;
        self.make_record(
            alpha_used,
            cand.eta_hat,
            log_eta,
            retries,
            cand.capped,
            s5,
            descent,
            growth,
        )
    }
}

/// Replays a run with plain f64 losses: `θ ← θ − (η̂/𝓛̄(θ))·∇𝓛̄(θ)`, the step the
/// relative frame takes with anchor `F̃ = log 𝓛̄(θ)`. Returns every iterate.
pub fn direct_replay(obj: &Objective, theta0: &ParamVector, eta_hats: &[f64]) -> Result<Vec<ParamVector>> {
    let n = obj.len() as f64;
    let mut theta = theta0.clone();
    let mut out = vec![theta.clone()];
    for &eh in eta_hats {
        let (loss, grad) = obj.direct_loss_and_gradient(theta.as_slice())?;
        let eta = eh * n / loss;
        theta = theta.axpy(-eta / n, &grad);
        out.push(theta.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_csv, synthetic, Synthetic};
    use crate::losses::LossSpec;
    use crate::models::{Family, HomogeneousModel, ModelSpec};

    #[test]
    fn constant_lr_descends_on_linear_data() {
        let data = parse_csv("1,2,1\n2,1,1\n-1,-1,-1\n").unwrap();
        let model = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1), 2).unwrap();
        let loss = LossSpec::logistic();
        let obj = Objective::new(&model, &data, &loss).unwrap();
        let cfg = GdConfig {
            mode: GdMode::Constant { eta: 0.5 },
            s5_cap: false,
            constant_samples: 100,
            hessian_samples: 10,
            ..GdConfig::default()
        };
        let mut tr = GdTrainer::new(obj, ParamVector::zeros(2), cfg).unwrap();
        let mut last = tr.record().unwrap().log_inv_loss;
        for _ in 0..200 {
            let r = tr.epoch().unwrap();
            assert!(r.log_inv_loss > last);
            last = r.log_inv_loss;
        }
    }

    #[test]
    fn frame_matches_direct_path() {
        let data = synthetic(
            &Synthetic::TwoGaussians {
                n: 12,
                dim: 2,
                separation: 4.0,
                std: 0.5,
            },
            3,
        )
        .unwrap();
        let model = HomogeneousModel::build(&ModelSpec::new(Family::Relu, 2, 6), 2).unwrap();
        let loss = LossSpec::logistic();
        let obj = Objective::new(&model, &data, &loss).unwrap();
        let theta0 = model.init_params(&mut ChaCha8Rng::seed_from_u64(1), 0.5);
        let cfg = GdConfig {
            s5_cap: false,
            constant_samples: 100,
            hessian_samples: 10,
            ..GdConfig::default()
        };
        let mut tr = GdTrainer::new(obj, theta0.clone(), cfg).unwrap();
        let mut thetas = vec![theta0.clone()];
        let mut etas = Vec::new();
        // compare while the plain f64 loss is representable
        while tr.current().eval.log_mean_loss() > (1e-250f64).ln() {
            let r = tr.epoch().unwrap();
            etas.push(r.eta_hat);
            thetas.push(tr.theta().clone());
        }
        assert!(etas.len() > 10, "{}", etas.len());
        let direct = direct_replay(&obj, &theta0, &etas).unwrap();
        for (a, b) in thetas.iter().zip(&direct) {
            let diff: f64 = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(diff <= 1e-8 * a.rho(), "{diff}");
        }
    }
}
