//! Relative loss frame: `𝓛̄ = 𝓡·e^{F̃}` and `η = η̂·e^{−F̃}`, so that a step of
//! `η̂` on `𝓡` is a step of `η` on `𝓛̄`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::objective::{Evaluation, GradEvaluation};
use crate::param::ParamVector;

/// Margin above which `log(1 + x)` is replaced by `x`.
pub const Q_THRESHOLD: f64 = 30.0;

/// Admissible range of the relative step `η̂`.
pub const ETA_HAT_RANGE: (f64, f64) = (1e-300, 1e300);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeLossFrame {
    /// Anchor `F̃`, the log mean loss of the previous epoch.
    pub f_tilde: f64,
    pub q: f64,
    pub eta_hat: f64,
}

impl RelativeLossFrame {
    pub fn new(f_tilde: f64, eta_hat: f64) -> Self {
        Self {
            f_tilde,
            q: Q_THRESHOLD,
            eta_hat,
        }
    }

    /// `log η = log η̂ − F̃` for the mean loss.
    pub fn log_eta(&self) -> f64 {
        self.eta_hat.ln() - self.f_tilde
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eta_hat == 0.0 || (self.eta_hat >= ETA_HAT_RANGE.0 && self.eta_hat <= ETA_HAT_RANGE.1)) {
            return Err(Error::Reframe(self.eta_hat));
        }
        Ok(())
    }
}

/// `𝓡_B = 𝓛̄_B e^{−F̃}` over the samples of `eval`.
///
/// For the logistic and cross-entropy losses: if every `q_n > Q` the per-sample
/// loss `log(1 + Σ_j e^{−s_nj})` is replaced by `e^{−q̃_n}`; otherwise it is
/// evaluated with `log1p`. Other losses are evaluated exactly as `e^{−f(q_n)}`.
pub fn relative_loss(eval: &Evaluation, frame: &RelativeLossFrame, loss: &LossSpec) -> f64 {
    let b = eval.q.len() as f64;
    let sum: f64 = match loss.kind {
        LossKind::Logistic => {
            if eval.q.iter().all(|&q| q > frame.q) {
                eval.q_tilde.iter().map(|&qt| (-(qt + frame.f_tilde)).exp()).sum()
            } else {
                eval.q_tilde
                    .iter()
                    .map(|&qt| (-qt).exp().ln_1p() * (-frame.f_tilde).exp())
                    .sum()
            }
        }
        _ => eval.log_sample_loss.iter().map(|&l| (l - frame.f_tilde).exp()).sum(),
    };
    sum / b
}

/// `∇𝓡_B = ∇𝓛̄_B e^{−F̃}` from a relative gradient over the batch.
pub fn relative_gradient(ge: &GradEvaluation, frame: &RelativeLossFrame) -> Vec<f64> {
    let b = ge.eval.q.len() as f64;
    let s = -(ge.anchor - frame.f_tilde - b.ln()).exp();
    ge.neg_grad_rel.iter().map(|g| s * g).collect()
}

/// `θ' = θ − η̂ ∇𝓡`.
pub fn gd_step(theta: &ParamVector, ge: &GradEvaluation, frame: &RelativeLossFrame) -> Result<ParamVector> {
    frame.check()?;
    if frame.eta_hat == 0.0 {
        return Ok(theta.clone());
    }
    let g = relative_gradient(ge, frame);
    let next = theta.axpy(-frame.eta_hat, &g);
    if !next.is_finite() {
        return Err(Error::NonFinite("gradient step".into()));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_csv;
    use crate::models::{Family, HomogeneousModel, ModelSpec};
    use crate::objective::Objective;

    fn linear(csv: &str) -> (HomogeneousModel, crate::dataset::Dataset) {
        let data = parse_csv(csv).unwrap();
        let model = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1), data.input_dim()).unwrap();
        (model, data)
    }

    #[test]
    fn exponent_cancels() {
        let (model, data) = linear("1,1\n");
        let loss = LossSpec::logistic();
        let obj = Objective::new(&model, &data, &loss).unwrap();
        let eval = obj.evaluate(&[100.0]).unwrap();
        let r = relative_loss(&eval, &RelativeLossFrame::new(-100.0, 1.0), &loss);
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn branches_agree_at_crossover() {
        let (model, data) = linear("1,1\n");
        let loss = LossSpec::logistic();
        let obj = Objective::new(&model, &data, &loss).unwrap();
        let eval = obj.evaluate(&[35.0]).unwrap();
        let f = RelativeLossFrame::new(-35.0, 1.0);
        let approx = relative_loss(&eval, &f, &loss);
        let exact = (-35f64).exp().ln_1p() * 35f64.exp();
        assert!(((approx - exact) / exact).abs() < 1e-10);
        // the approximation error is within e^{−Q}
        assert!(((approx - exact) / exact).abs() <= (-Q_THRESHOLD).exp());
    }

    #[test]
    fn zero_step_and_hand_computed_step() {
        let (model, data) = linear("3,1,1\n");
        let loss = LossSpec::exponential();
        let obj = Objective::new(&model, &data, &loss).unwrap();
        let theta = ParamVector::new(vec![0.0, 0.0]);
        let ge = obj.evaluate_with_gradient(theta.as_slice()).unwrap();
        let f = RelativeLossFrame::new(ge.eval.log_mean_loss(), 0.0);
        assert_eq!(gd_step(&theta, &ge, &f).unwrap(), theta);
        // q = 0: w − η e^{−q} y x with η = 0.5
        let f = RelativeLossFrame::new(0.0, 0.5);
        let next = gd_step(&theta, &ge, &f).unwrap();
        assert!((next.as_slice()[0] - 1.5).abs() < 1e-15);
        assert!((next.as_slice()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eta_hat_out_of_range_requests_reframe() {
        let f = RelativeLossFrame::new(0.0, 1e301);
        assert!(matches!(f.check(), Err(Error::Reframe(_))));
    }
}
