//! Executes one seed of a scenario in memory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LoadedConfig, Optimizer, RunConfig};
use crate::dataset::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::gdtrain::{
    sample_constants, EpochRecord, GdConfig, GdMode, GdTheory, GdTrainer, LrSchedulerConfig, SmoothnessConstants,
};
use crate::gradflow::{run_hat, FlowConfig, FlowMonitor, FlowSummary, GradientFlow, HatConfig, StepCheck};
use crate::kkt::{
    build_certificate, direction_gap_to_svm, effective_linear_predictor, svm_oracle, CertificateAnchor, KktCertificate,
};
use crate::losses::{validate_b3, B3Report, LossSpec, SampleGrid};
use crate::margin::MarginReport;
use crate::models::{Family, HomogeneousModel};
use crate::numerics::median;
use crate::objective::Objective;
use crate::param::ParamVector;
use crate::rates::{bounded_ratio_verdict, rate_ratios, t_min_index, RateDiagnostic, RatePoint, RateVerdict};

/// One emitted line of the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    /// Flow time.
    pub t: Option<f64>,
    /// `log T` used by the rate diagnostics (flow time, or `Σ η` for GD).
    pub log_t: Option<f64>,
    pub log_inv_loss: f64,
    pub rho: f64,
    pub q_min: f64,
    pub bar_gamma: f64,
    pub tilde_gamma: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub sandwich_low: Option<f64>,
    pub sandwich_high: Option<f64>,
    pub beta: f64,
    pub log_nu: Option<f64>,
    pub alpha: Option<f64>,
    pub check: Option<StepCheck>,
    pub gd: Option<EpochRecord>,
    pub kkt: Option<KktCertificate>,
}

impl TrajectoryRecord {
    fn from_margins(step: usize, m: &MarginReport, rho: f64, beta: f64, log_nu: Option<f64>) -> Self {
        Self {
            step,
            t: None,
            log_t: None,
            log_inv_loss: m.log_inv_loss,
            rho,
            q_min: m.q_min,
            bar_gamma: m.bar_gamma,
            tilde_gamma: m.tilde_gamma,
            gamma_hat: None,
            sandwich_low: m.sandwich_low,
            sandwich_high: m.sandwich_high,
            beta,
            log_nu,
            alpha: None,
            check: None,
            gd: None,
            kkt: None,
        }
    }
}

/// One row of the Mexican-hat output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatRow {
    pub sigma: f64,
    pub r: f64,
    pub phi: f64,
    pub psi: f64,
    pub log_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorResult {
    pub name: String,
    /// Disabled monitors are reported but do not affect the exit status.
    pub enabled: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub steps: usize,
    pub log_inv_loss: f64,
    pub log10_loss: f64,
    pub rho: f64,
    pub bar_gamma: f64,
    pub tilde_gamma: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdReport {
    pub epochs: usize,
    pub theory: Option<GdTheory>,
    pub capped_epochs: usize,
    pub flagged_epochs: usize,
    pub s5_failures: usize,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    /// Largest per-epoch drop of γ̂ over epochs whose step passed (S5).
    pub max_gamma_hat_drop: f64,
    pub min_descent_slack: Option<f64>,
    /// Largest `growth_ratio/growth_upper − 1`.
    pub max_growth_excess: Option<f64>,
    pub non_finite_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmReport {
    pub w: Vec<f64>,
    pub margin: f64,
    pub support: Vec<usize>,
    pub predictor: Vec<f64>,
    /// Angle in radians between the trained predictor and the SVM direction.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesReport {
    pub t_min_step: Option<usize>,
    pub diagnostic: RateDiagnostic,
    pub verdict: RateVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatReport {
    pub steps: usize,
    pub sigma_end: f64,
    pub r_end: f64,
    pub max_abs_psi: f64,
    pub phi_gain: f64,
    pub log_rho_end: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
    pub loss_validator: Option<B3Report>,
    pub constants: Option<SmoothnessConstants>,
    pub monitors: Vec<MonitorResult>,
    /// Names of the enabled monitors that failed.
    pub failures: Vec<String>,
    pub final_state: Option<FinalState>,
    pub flow: Option<FlowSummary>,
    pub gd: Option<GdReport>,
    pub kkt: Option<KktCertificate>,
    pub svm: Option<SvmReport>,
    pub rates: Option<RatesReport>,
    pub hat: Option<HatReport>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn monitor(&self, name: &str) -> Option<&MonitorResult> {
        self.monitors.iter().find(|m| m.name == name)
    }
}

/// All outputs of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<TrajectoryRecord>,
    pub hat_rows: Vec<HatRow>,
    pub summary: RunSummary,
}

struct Monitors(Vec<MonitorResult>);

impl Monitors {
    fn push(&mut self, name: &str, enabled: bool, passed: bool, detail: String) {
        self.0.push(MonitorResult {
            name: name.into(),
            enabled,
            passed,
            detail,
        });
    }
}

pub fn run_seed(cfg: &LoadedConfig, seed: u64) -> Result<SeedRun> {
    let rc = &cfg.config;
    let mut summary = RunSummary {
        scenario: rc.scenario.clone(),
        seed,
        config_hash: cfg.hash.clone(),
        config: cfg.text.clone(),
        loss_validator: None,
        constants: None,
        monitors: Vec::new(),
        failures: Vec::new(),
        final_state: None,
        flow: None,
        gd: None,
        kkt: None,
        svm: None,
        rates: None,
        hat: None,
    };
    let mut mons = Monitors(Vec::new());
    let mut records = Vec::new();
    let mut hat_rows = Vec::new();

    if rc.is_hat() {
        let hc = rc.hat.unwrap_or_default();
        let (report, rows) = hat_scenario(&hc, rc.eval_every)?;
        let tol = &rc.tolerances;
        mons.push(
            "hat_psi",
            true,
            report.max_abs_psi <= tol.hat_psi,
            format!("max |ψ| = {:e}", report.max_abs_psi),
        );
        mons.push(
            "hat_r_end",
            true,
            report.r_end > tol.hat_r_end,
            format!("r_end = {}", report.r_end),
        );
        mons.push(
            "hat_phi_gain",
            true,
            report.phi_gain >= tol.hat_phi_gain,
            format!("Δφ = {}", report.phi_gain),
        );
        summary.hat = Some(report);
        hat_rows = rows;
    } else {
        let spec = LossSpec::by_name(&rc.loss)?;
        summary.loss_validator = Some(validate_b3(&spec, &SampleGrid::default()));
        let data = cfg.load_dataset(seed)?;
        let mspec = rc.model.as_ref().expect("validated");
        let mut mspec = mspec.clone();
        if let Labels::Classes { num_classes, .. } = data.labels {
            mspec.num_outputs = num_classes;
        }
        let model = HomogeneousModel::build(&mspec, data.input_dim())?;
        let obj = Objective::new(&model, &data, &spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta0 = model.init_params(&mut rng, rc.init_scale);
        let constants = if rc.constants.enabled {
            Some(sample_constants(
                &obj,
                rc.constants.samples,
                rc.constants.hessian_samples,
                seed ^ 0x5eed,
            )?)
        } else {
            None
        };
        summary.constants = constants;

        let theta_end = match rc.optimizer {
            Optimizer::Flow { .. } => {
                let (theta, fs) = flow_scenario(rc, obj, theta0, constants, &mut records, &mut mons)?;
                summary.flow = Some(fs);
                theta
            }
            _ => {
                let (theta, gr) = gd_scenario(rc, obj, theta0, seed, constants, &mut records, &mut mons)?;
                summary.gd = Some(gr);
                theta
            }
        };
        summary.kkt = records.iter().rev().find_map(|r| r.kkt.clone());
        if rc.monitors.kkt_delta {
            let bad = records
                .iter()
                .filter_map(|r| r.kkt.as_ref())
                .filter(|c| c.delta_bound_holds() == Some(false))
                .count();
            let n = records.iter().filter(|r| r.kkt.is_some()).count();
            mons.push(
                "kkt_delta",
                true,
                bad == 0,
                format!("{bad} of {n} certificates exceed C2/log(1/L)"),
            );
        }

        summary.svm = svm_report(&model, &theta_end, &data)?;
        if let (Some(tol), Some(s)) = (rc.svm.and_then(|s| s.angle_tol), &summary.svm) {
            mons.push("svm_angle", true, s.angle <= tol, format!("angle = {:e} rad", s.angle));
        }
        summary.rates = rates_report(rc, &records, &spec, model.order(), data.len())?;
        if let Some(r) = &summary.rates {
            let v = &r.verdict;
            mons.push(
                "rates",
                rc.rates.check,
                v.pass,
                format!(
                    "loss factor {:.3}, rho factor {:.3}, span {:.2} decades{}",
                    v.factor_loss,
                    v.factor_rho,
                    r.diagnostic.span_decades,
                    if v.inconclusive { " (inconclusive)" } else { "" }
                ),
            );
        }
        summary.final_state = records.last().map(|r| FinalState {
            steps: r.step,
            log_inv_loss: r.log_inv_loss,
            log10_loss: -r.log_inv_loss / std::f64::consts::LN_10,
            rho: r.rho,
            bar_gamma: r.bar_gamma,
            tilde_gamma: r.tilde_gamma,
            gamma_hat: r.gamma_hat,
            beta: r.beta,
        });
    }

    summary.failures = mons
        .0
        .iter()
        .filter(|m| m.enabled && !m.passed)
        .map(|m| m.name.clone())
        .collect();
    summary.monitors = mons.0;
    Ok(SeedRun {
        seed,
        records,
        hat_rows,
        summary,
    })
}

fn hat_scenario(hc: &HatConfig, every: usize) -> Result<(HatReport, Vec<HatRow>)> {
    let mut rows = Vec::new();
    let mut steps = 0usize;
    let mut max_abs_psi = 0.0f64;
    let mut last = None;
    let phi0 = crate::gradflow::HatState::new(hc.r0, hc.psi0, 0.0)?.phi();
    let end = run_hat(hc, |s| {
        max_abs_psi = max_abs_psi.max(s.psi.abs());
        let row = HatRow {
            sigma: s.sigma,
            r: s.r,
            phi: s.phi(),
            psi: s.psi,
            log_rho: s.log_rho,
        };
        if steps.is_multiple_of(every) {
            rows.push(row);
            last = None;
        } else {
            last = Some(row);
        }
        steps += 1;
    })?;
    rows.extend(last);
    Ok((
        HatReport {
            steps: steps.saturating_sub(1),
            sigma_end: end.sigma,
            r_end: end.r,
            max_abs_psi,
            phi_gain: end.phi() - phi0,
            log_rho_end: end.log_rho,
            clamped: end.clamped,
        },
        rows,
    ))
}

fn quarter_medians(betas: &[f64]) -> Option<(f64, f64)> {
    let q = betas.len() / 4;
    (q > 0).then(|| (median(&betas[..q]), median(&betas[betas.len() - q..])))
}

fn certify(obj: &Objective, theta: &ParamVector, anchor: Option<CertificateAnchor>) -> Option<KktCertificate> {
    build_certificate(obj.model, theta, obj.data, obj.loss, anchor).ok()
}

fn flow_scenario(
    rc: &RunConfig,
    obj: Objective,
    theta0: ParamVector,
    constants: Option<SmoothnessConstants>,
    records: &mut Vec<TrajectoryRecord>,
    mons: &mut Monitors,
) -> Result<(ParamVector, FlowSummary)> {
    let Optimizer::Flow {
        step_tol,
        dt_max,
        max_steps,
        target_log_inv_loss,
    } = rc.optimizer
    else {
        unreachable!()
    };
    let spec = obj.loss;
    let order = obj.order();
    let blocks = obj.model.blocks().to_vec();
    let mut flow = GradientFlow::new(
        obj,
        theta0,
        FlowConfig {
            step_tol,
            dt_max: dt_max.unwrap_or(f64::INFINITY),
            max_halvings: 60,
        },
    )?;
    let mut mon = FlowMonitor::new(spec, order, &blocks);
    mon.tol = rc.tolerances.flow;
    mon.start(flow.state());

    let make = |flow: &GradientFlow, step: usize, check: Option<StepCheck>| {
        let s = flow.state();
        let m = MarginReport::from_evaluation(&flow.current().eval, s.rho, order, spec);
        let mut r = TrajectoryRecord::from_margins(step, &m, s.rho, s.beta, s.log_nu);
        r.t = Some(s.t);
        r.log_t = (s.t > 0.0).then(|| s.t.ln());
        r.check = check;
        r
    };
    records.push(make(&flow, 0, None));
    let mut emitted = 1usize;
    let kkt_every = rc.kkt.every;
    let attach = |rec: &mut TrajectoryRecord, flow: &GradientFlow, mon: &FlowMonitor| {
        if rc.kkt.disabled || mon.separation().is_none() {
            return;
        }
        let anchor = match (mon.separation(), constants) {
            (Some(sep), Some(c)) => Some(CertificateAnchor {
                gamma0: sep.tilde_gamma,
                b1: c.b1,
            }),
            _ => None,
        };
        rec.kkt = certify(flow.objective(), &flow.state().theta, anchor);
    };

    let mut step = 0;
    while step < max_steps {
        let info = flow.step()?;
        step += 1;
        let check = mon.observe(flow.state(), &info)?;
        let done =
            info.stationary || step == max_steps || target_log_inv_loss.is_some_and(|t| flow.state().log_inv_loss >= t);
        if step % rc.eval_every == 0 || done {
            let mut rec = make(&flow, step, Some(check));
            if done || (kkt_every > 0 && emitted.is_multiple_of(kkt_every)) {
                attach(&mut rec, &flow, &mon);
            }
            records.push(rec);
            emitted += 1;
        }
        if done {
            break;
        }
    }
    let fs = mon.summary();
    let tol = &rc.tolerances;
    let m = &rc.monitors;
    mons.push(
        "gamma_monotone",
        m.gamma_monotone,
        fs.max_gamma_drop_rel <= tol.flow.gamma_drop_rel,
        format!("max relative drop {:e}", fs.max_gamma_drop_rel),
    );
    mons.push(
        "loss_decrease",
        m.loss_decrease,
        fs.max_loss_increase <= tol.flow.loss_increase,
        format!("max log-loss increase {:e}", fs.max_loss_increase),
    );
    mons.push(
        "weight_growth",
        m.weight_growth,
        fs.weight_growth_pass_fraction >= tol.weight_growth_fraction,
        format!(
            "{:.4} of steps within {:e}",
            fs.weight_growth_pass_fraction, tol.flow.weight_growth
        ),
    );
    mons.push(
        "margin_rate",
        m.margin_rate,
        fs.min_margin_rate_slack >= -tol.flow.margin_rate,
        format!("min slack {:e}", fs.min_margin_rate_slack),
    );
    sandwich_monitor(records, tol.sandwich, m.sandwich, mons);
    mons.push(
        "beta_integral",
        m.beta_integral,
        fs.beta_integral_holds(tol.flow.beta_integral),
        format!("{:e} vs bound {:e}", fs.beta_integral, fs.beta_integral_bound),
    );
    mons.push(
        "beta_rises",
        m.beta_rises,
        fs.beta_rises(),
        format!(
            "median β {:.6} -> {:.6}",
            fs.beta_median_first_quarter, fs.beta_median_last_quarter
        ),
    );
    let finite = records
        .iter()
        .all(|r| r.log_inv_loss.is_finite() && r.rho.is_finite() && r.beta.is_finite());
    mons.push("finite", m.finite, finite, "trajectory values".into());
    Ok((flow.state().theta.clone(), fs))
}

fn sandwich_monitor(records: &[TrajectoryRecord], tol: f64, enabled: bool, mons: &mut Monitors) {
    let bad = records
        .iter()
        .filter(|r| match r.tilde_gamma {
            Some(t) => !(r.sandwich_low.is_none_or(|l| l <= t + tol) && t <= r.bar_gamma + tol),
            None => false,
        })
        .count();
    let n = records.iter().filter(|r| r.tilde_gamma.is_some()).count();
    mons.push(
        "sandwich",
        enabled,
        bad == 0,
        format!("{bad} of {n} checkpoints violate"),
    );
}

fn gd_scenario(
    rc: &RunConfig,
    obj: Objective,
    theta0: ParamVector,
    seed: u64,
    constants: Option<SmoothnessConstants>,
    records: &mut Vec<TrajectoryRecord>,
    mons: &mut Monitors,
) -> Result<(ParamVector, GdReport)> {
    let (mode, epochs, s5_cap, batch_size, target, t0) = match rc.optimizer {
        Optimizer::GdConst {
            eta,
            epochs,
            s5_cap,
            target_log_inv_loss,
            t0_log_inv_loss,
        } => (
            GdMode::Constant { eta },
            epochs,
            s5_cap,
            None,
            target_log_inv_loss,
            t0_log_inv_loss,
        ),
        Optimizer::GdLossBased {
            alpha0,
            r_u,
            r_d,
            max_retries,
            epochs,
            s5_cap,
            batch_size,
            target_log_inv_loss,
            t0_log_inv_loss,
        } => (
            GdMode::LossBased(LrSchedulerConfig {
                alpha0,
                r_u,
                r_d,
                max_retries,
            }),
            epochs,
            s5_cap,
            batch_size,
            target_log_inv_loss,
            t0_log_inv_loss,
        ),
        Optimizer::Flow { .. } => unreachable!(),
    };
    let gcfg = GdConfig {
        mode,
        s5_cap,
        t0_log_inv_loss: t0,
        batch_size,
        constant_samples: rc.constants.samples,
        hessian_samples: rc.constants.hessian_samples,
        seed,
        ..GdConfig::default()
    };
    let spec = obj.loss;
    let order = obj.order();
    let (model, data) = (obj.model, obj.data);
    let obj_k = Objective::new(model, data, spec)?;
    let mut tr = GdTrainer::new(obj, theta0, gcfg)?;
    if let Some(c) = constants {
        tr.set_constants(c);
    }

    let make = |tr: &GdTrainer, rec: EpochRecord| {
        let m = MarginReport::from_evaluation(&tr.current().eval, rec.rho, order, spec);
        let mut r = TrajectoryRecord::from_margins(rec.epoch, &m, rec.rho, rec.beta, rec.log_nu);
        r.gamma_hat = rec.gamma_hat;
        r.alpha = rec.alpha;
        r.log_t = rec.log_cum_eta.is_finite().then_some(rec.log_cum_eta);
        r.gd = Some(rec);
        r
    };
    let first = tr.record()?;
    let mut report = GdReport {
        epochs: 0,
        theory: None,
        capped_epochs: 0,
        flagged_epochs: 0,
        s5_failures: 0,
        alpha_min: None,
        alpha_max: None,
        max_gamma_hat_drop: 0.0,
        min_descent_slack: None,
        max_growth_excess: None,
        non_finite_epochs: usize::from(!first.non_finite_fields().is_empty()),
    };
    let mut all = vec![make(&tr, first)];
    let mut hat_bad = 0usize;
    let mut prev_hat: Option<f64> = None;
    let mut betas_after_t0 = Vec::new();
    let tol = &rc.tolerances;
    let mut emitted = 1usize;

    for e in 1..=epochs {
        let rec = tr.epoch()?;
        report.epochs = e;
        report.capped_epochs += usize::from(rec.capped);
        report.flagged_epochs += usize::from(rec.flagged.is_some());
        report.non_finite_epochs += usize::from(!rec.non_finite_fields().is_empty());
        if let Some(a) = rec.alpha_used {
            report.alpha_min = Some(report.alpha_min.map_or(a, |m: f64| m.min(a)));
            report.alpha_max = Some(report.alpha_max.map_or(a, |m: f64| m.max(a)));
        }
        let s5_ok = rec.s5.is_none_or(|s| s.pass);
        if rec.s5.is_some_and(|s| !s.pass) {
            report.s5_failures += 1;
        }
        if let Some(g) = rec.gamma_hat {
            if let (Some(p), true) = (prev_hat, s5_ok) {
                report.max_gamma_hat_drop = report.max_gamma_hat_drop.max(p - g);
            }
            prev_hat = Some(g);
            let strict = rec
                .tilde_gamma
                .is_some_and(|t| g < t + tol.sandwich && t <= rec.bar_gamma + tol.sandwich);
            hat_bad += usize::from(!strict);
            betas_after_t0.push(rec.beta);
        }
        if s5_ok {
            if let Some(d) = rec.descent_slack {
                report.min_descent_slack = Some(report.min_descent_slack.map_or(d, |m: f64| m.min(d)));
            }
            if let (Some(r), Some(u)) = (rec.growth_ratio, rec.growth_upper) {
                let x = r / u - 1.0;
                report.max_growth_excess = Some(report.max_growth_excess.map_or(x, |m: f64| m.max(x)));
            }
        }
        let done = e == epochs || target.is_some_and(|t| rec.log_inv_loss >= t);
        if e % rc.eval_every == 0 || done {
            let mut r = make(&tr, rec);
            let kkt_due = done || (rc.kkt.every > 0 && emitted.is_multiple_of(rc.kkt.every));
            if !rc.kkt.disabled && kkt_due {
                if let Some(th) = tr.theory() {
                    let anchor = constants.map(|c| CertificateAnchor {
                        gamma0: th.gamma_hat0,
                        b1: c.b1,
                    });
                    r.kkt = certify(&obj_k, tr.theta(), anchor);
                }
            }
            all.push(r);
            emitted += 1;
        }
        if done {
            break;
        }
    }
    report.theory = tr.theory().cloned();
    let m = &rc.monitors;
    mons.push(
        "gamma_hat_monotone",
        m.gamma_hat_monotone,
        report.max_gamma_hat_drop <= tol.gamma_hat_drop,
        format!("max drop {:e}", report.max_gamma_hat_drop),
    );
    mons.push(
        "hat_sandwich",
        m.hat_sandwich,
        hat_bad == 0,
        format!("{hat_bad} epochs violate γ̂ < γ̃ ≤ γ̄"),
    );
    mons.push(
        "s5",
        m.s5 && s5_cap,
        report.s5_failures == 0,
        format!("{} failing epochs, {} capped", report.s5_failures, report.capped_epochs),
    );
    mons.push(
        "descent",
        m.descent && s5_cap,
        report.min_descent_slack.is_none_or(|d| d >= -tol.descent),
        format!("min slack {:?}", report.min_descent_slack),
    );
    mons.push(
        "weight_growth",
        m.weight_growth && s5_cap,
        report.max_growth_excess.is_none_or(|x| x <= tol.descent),
        format!("max excess {:?}", report.max_growth_excess),
    );
    sandwich_monitor(&all, tol.sandwich, m.sandwich, mons);
    mons.push(
        "finite",
        m.finite,
        report.non_finite_epochs == 0,
        format!("{} epochs with non-finite fields", report.non_finite_epochs),
    );
    mons.push(
        "retries",
        m.retries,
        report.flagged_epochs == 0,
        format!("{} flagged epochs", report.flagged_epochs),
    );
    if let Some((a, b)) = quarter_medians(&betas_after_t0) {
        mons.push("beta_rises", m.beta_rises, b >= a, format!("median β {a:.6} -> {b:.6}"));
    }
    *records = all;
    Ok((tr.theta().clone(), report))
}

fn svm_report(model: &HomogeneousModel, theta: &ParamVector, data: &Dataset) -> Result<Option<SvmReport>> {
    let linear = matches!(model.spec.family, Family::Linear | Family::DeepLinear) && model.num_outputs() == 1;
    let Labels::Binary(y) = &data.labels else {
        return Ok(None);
    };
    if !linear || data.len() > 32 {
        return Ok(None);
    }
    let sol = match svm_oracle(&data.inputs, y) {
        Ok(s) => s,
        Err(Error::NotSeparable(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let predictor = effective_linear_predictor(model, theta.as_slice())?;
    let angle = direction_gap_to_svm(&predictor, &sol.w)?;
    Ok(Some(SvmReport {
        w: sol.w,
        margin: sol.margin,
        support: sol.support,
        predictor,
        angle,
    }))
}

fn rates_report(
    rc: &RunConfig,
    records: &[TrajectoryRecord],
    spec: &LossSpec,
    order: f64,
    n: usize,
) -> Result<Option<RatesReport>> {
    let pts: Vec<(usize, RatePoint)> = records
        .iter()
        .filter_map(|r| {
            r.log_t.map(|lt| {
                (
                    r.step,
                    RatePoint {
                        log_t: lt,
                        log_inv_loss: r.log_inv_loss,
                        rho: r.rho,
                    },
                )
            })
        })
        .collect();
    let points: Vec<RatePoint> = pts.iter().map(|p| p.1).collect();
    let Some(start) = t_min_index(&points, n) else {
        return Ok(None);
    };
    let s = &rc.rates;
    let diagnostic = rate_ratios(&points, start, spec, order, s.min_decades)?;
    let verdict = bounded_ratio_verdict(&diagnostic, s.window_decades, s.bound_factor);
    Ok(Some(RatesReport {
        t_min_step: Some(pts[start].0),
        diagnostic,
        verdict,
    }))
}
