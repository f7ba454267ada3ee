//! Training objective evaluated in log space.
//!
//! The loss is viewed as a sum over "constraints" `c_k`: the margins `q_n` for
//! binary data, or the pairwise score gaps `s_nj = Φ_{y_n} − Φ_j` for multi-class
//! data. Each constraint carries a log-weight `log w_k` with `w_k = −∂𝓛/∂c_k`, so
//! `−∇𝓛 = Σ_k w_k ∇c_k`. Gradients are returned relative to the anchor
//! `A = max_k log w_k`, i.e. as `e^{−A}·(−∇𝓛)`, and never overflow or underflow.

use crate::dataset::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::HomogeneousModel;
use crate::numerics::{dot, log1p_ratio, logsumexp, norm, softplus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub sample: usize,
    /// Competing class for multi-class data.
    pub class: Option<usize>,
    pub value: f64,
    pub log_weight: f64,
}

/// Forward-only evaluation of the loss and margins at one θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outputs: Vec<Vec<f64>>,
    /// `q_n`: `y_n Φ` (binary) or true-class score minus the best other score.
    pub q: Vec<f64>,
    /// `q̃_n = −LSE_j(−s_nj)` for multi-class data, equal to `q_n` for binary data.
    pub q_tilde: Vec<f64>,
    /// `log ℓ_n`, the log of each sample's loss.
    pub log_sample_loss: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// `log 𝓛` of the summed loss.
    pub log_loss: f64,
    pub multiclass: bool,
}

impl Evaluation {
    /// `log(1/𝓛)` of the summed loss.
    pub fn log_inv_loss(&self) -> f64 {
        -self.log_loss
    }

    /// `log 𝓛̄` of the mean loss.
    pub fn log_mean_loss(&self) -> f64 {
        self.log_loss - (self.q.len() as f64).ln()
    }

    pub fn q_min(&self) -> f64 {
        self.q.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest constraint log-weight, used as the gradient anchor.
    pub fn weight_anchor(&self) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.log_weight)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `ν·e^{−A}` with `ν = Σ_k w_k c_k` and `A` the weight anchor.
    pub fn nu_relative(&self) -> f64 {
        let a = self.weight_anchor();
        self.constraints
            .iter()
            .map(|c| (c.log_weight - a).exp() * c.value)
            .sum()
    }

    /// `log ν`, or `None` while `ν ≤ 0` (before separation).
    pub fn log_nu(&self) -> Option<f64> {
        let r = self.nu_relative();
        (r > 0.0).then(|| self.weight_anchor() + r.ln())
    }
}

/// Evaluation together with the relative gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEvaluation {
    pub eval: Evaluation,
    /// `A = max_k log w_k`.
    pub anchor: f64,
    /// `e^{−A}·(−∇𝓛)`.
    pub neg_grad_rel: Vec<f64>,
}

impl GradEvaluation {
    /// `log ‖∇𝓛‖`; `−∞` at an exactly stationary point.
    pub fn log_grad_norm(&self) -> f64 {
        self.anchor + norm(&self.neg_grad_rel).ln()
    }

    /// Unit vector along `−∇𝓛`, `None` if the gradient vanishes.
    pub fn descent_direction(&self) -> Option<Vec<f64>> {
        let n = norm(&self.neg_grad_rel);
        (n > 0.0 && n.is_finite()).then(|| self.neg_grad_rel.iter().map(|g| g / n).collect())
    }

    /// `−∇𝓛` rescaled by `e^{shift}`, i.e. `e^{A + shift}·dir·‖rel‖`.
    pub fn neg_grad_scaled(&self, shift: f64) -> Vec<f64> {
        let s = (self.anchor + shift).exp();
        self.neg_grad_rel.iter().map(|g| g * s).collect()
    }

    /// `β = ⟨θ̂, −∇𝓛⟩ / ‖∇𝓛‖`.
    pub fn beta(&self, theta: &[f64]) -> f64 {
        let (nt, ng) = (norm(theta), norm(&self.neg_grad_rel));
        if nt == 0.0 || ng == 0.0 {
            return f64::NAN;
        }
        dot(theta, &self.neg_grad_rel) / (nt * ng)
    }
}

/// Model, data and loss bundled for repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub model: &'a HomogeneousModel,
    pub data: &'a Dataset,
    pub loss: &'a LossSpec,
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a HomogeneousModel, data: &'a Dataset, loss: &'a LossSpec) -> Result<Self> {
        if model.input_dim() != data.input_dim() {
            return Err(Error::Shape {
                op: "objective/input",
                expected: vec![model.input_dim()],
                got: vec![data.input_dim()],
            });
        }
        if model.num_outputs() != data.num_outputs() {
            return Err(Error::Shape {
                op: "objective/heads",
                expected: vec![data.num_outputs()],
                got: vec![model.num_outputs()],
            });
        }
        if matches!(data.labels, Labels::Classes { .. }) && !loss.multiclass {
            return Err(Error::Config(format!(
                "multi-class labels need the cross_entropy loss, got {}",
                loss.name
            )));
        }
        Ok(Self { model, data, loss })
    }

    pub fn order(&self) -> f64 {
        self.model.order()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let mut outputs = Vec::with_capacity(self.data.len());
        for x in &self.data.inputs {
            outputs.push(self.model.outputs(theta, x)?);
        }
        self.assemble(outputs)
    }

    fn assemble(&self, outputs: Vec<Vec<f64>>) -> Result<Evaluation> {
        let n = outputs.len();
        let mut q = Vec::with_capacity(n);
        let mut q_tilde = Vec::with_capacity(n);
        let mut log_sample_loss = Vec::with_capacity(n);
        let mut constraints = Vec::new();
        let multiclass = matches!(self.data.labels, Labels::Classes { .. });
        match &self.data.labels {
            Labels::Binary(y) => {
                for (i, out) in outputs.iter().enumerate() {
                    let qi = y[i] * out[0];
                    q.push(qi);
                    q_tilde.push(qi);
                    log_sample_loss.push(log_ell(self.loss, qi));
                    constraints.push(Constraint {
                        sample: i,
                        class: None,
                        value: qi,
                        log_weight: self.loss.log_weight(qi),
                    });
                }
            }
            Labels::Classes { labels, .. } => {
                for (i, out) in outputs.iter().enumerate() {
                    let yi = labels[i];
                    let gaps: Vec<(usize, f64)> = out
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != yi)
                        .map(|(j, &s)| (j, out[yi] - s))
                        .collect();
                    let neg: Vec<f64> = gaps.iter().map(|&(_, s)| -s).collect();
                    let log_s = logsumexp(&neg);
                    q.push(gaps.iter().map(|g| g.1).fold(f64::INFINITY, f64::min));
                    q_tilde.push(-log_s);
                    log_sample_loss.push(log_log1p_exp(log_s));
                    let sp = softplus(log_s);
                    for &(j, s) in &gaps {
                        constraints.push(Constraint {
                            sample: i,
                            class: Some(j),
                            value: s,
                            log_weight: -s - sp,
                        });
                    }
                }
            }
        }
        let log_loss = logsumexp(&log_sample_loss);
        if log_loss.is_nan() {
            return Err(Error::NonFinite("loss evaluation".into()));
        }
        Ok(Evaluation {
            outputs,
            q,
            q_tilde,
            log_sample_loss,
            constraints,
            log_loss,
            multiclass,
        })
    }

    pub fn evaluate_with_gradient(&self, theta: &[f64]) -> Result<GradEvaluation> {
        let mut outputs = Vec::with_capacity(self.data.len());
        let mut tapes = Vec::with_capacity(self.data.len());
        for x in &self.data.inputs {
            let (out, tape) = self.model.forward(theta, x)?;
            outputs.push(out.data().to_vec());
            tapes.push(tape);
        }
        let eval = self.assemble(outputs)?;
        let anchor = eval.weight_anchor();
        let c = self.model.num_outputs();
        let mut seeds = vec![vec![0.0; c]; tapes.len()];
        for k in &eval.constraints {
            let w = (k.log_weight - anchor).exp();
            match (&self.data.labels, k.class) {
                (Labels::Binary(y), _) => seeds[k.sample][0] += w * y[k.sample],
                (Labels::Classes { labels, .. }, Some(j)) => {
                    seeds[k.sample][labels[k.sample]] += w;
                    seeds[k.sample][j] -= w;
                }
                _ => unreachable!("multi-class constraint without a class"),
            }
        }
        let mut g = vec![0.0; theta.len()];
        for (tape, seed) in tapes.iter().zip(&seeds) {
            if seed.iter().all(|&s| s == 0.0) {
                continue;
            }
            let gi = tape.backward_vec(seed)?;
            for (a, b) in g.iter_mut().zip(gi.as_slice()) {
                *a += b;
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("relative gradient".into()));
        }
        Ok(GradEvaluation {
            eval,
            anchor,
            neg_grad_rel: g,
        })
    }

    /// Values and gradients of every constraint `c_k` (`q_n` or `s_nj`).
    pub fn constraint_gradients(&self, theta: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        let mut out = Vec::new();
        for (i, x) in self.data.inputs.iter().enumerate() {
            let (phi, grads) = self.model.output_gradients(theta, x)?;
            match &self.data.labels {
                Labels::Binary(y) => {
                    out.push((y[i] * phi[0], grads[0].iter().map(|g| y[i] * g).collect()));
                }
                Labels::Classes { labels, .. } => {
                    let yi = labels[i];
                    for j in (0..phi.len()).filter(|&j| j != yi) {
                        let g = grads[yi].iter().zip(&grads[j]).map(|(a, b)| a - b).collect();
                        out.push((phi[yi] - phi[j], g));
                    }
                }
            }
        }
        Ok(out)
    }

    /// `𝓛` and `∇𝓛` evaluated directly in f64 without any log-space tricks.
    pub fn direct_loss_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut g = vec![0.0; theta.len()];
        for (i, x) in self.data.inputs.iter().enumerate() {
            let (out, tape) = self.model.forward(theta, x)?;
            let out = out.data();
            let seed = match &self.data.labels {
                Labels::Binary(y) => {
                    let q = y[i] * out[0];
                    loss += self.loss.ell(q);
                    let dq = -(-self.loss.f(q)).exp() * self.loss.f_prime(q);
                    vec![dq * y[i]]
                }
                Labels::Classes { labels, .. } => {
                    let yi = labels[i];
                    let s: f64 = (0..out.len())
                        .filter(|&j| j != yi)
                        .map(|j| (out[j] - out[yi]).exp())
                        .sum();
                    loss += s.ln_1p();
                    let mut seed = vec![0.0; out.len()];
                    for j in (0..out.len()).filter(|&j| j != yi) {
                        let p = (out[j] - out[yi]).exp() / (1.0 + s);
                        seed[j] += p;
                        seed[yi] -= p;
                    }
                    seed
                }
            };
            let gi = tape.backward_vec(&seed)?;
            for (a, b) in g.iter_mut().zip(gi.as_slice()) {
                *a += b;
            }
        }
        Ok((loss, g))
    }
}

/// `log ℓ(q)` for a binary margin.
fn log_ell(loss: &LossSpec, q: f64) -> f64 {
    -loss.f(q)
}

/// `log(log(1 + e^{z}))`, accurate when `e^z` underflows.
pub fn log_log1p_exp(z: f64) -> f64 {
    if z < 0.0 {
        z + log1p_ratio(z.exp()).ln()
    } else {
        softplus(z).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_csv;
    use crate::models::{Family, ModelSpec};

    fn fd_loss(obj: &Objective, theta: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..theta.len())
            .map(|i| {
                let mut a = theta.to_vec();
                let mut b = theta.to_vec();
                a[i] += h;
                b[i] -= h;
                (obj.direct_loss_and_gradient(&a).unwrap().0 - obj.direct_loss_and_gradient(&b).unwrap().0) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn binary_gradient_matches_finite_differences() {
        let data = parse_csv("1,0.5,1\n-0.3,1,-1\n0.7,-0.2,1\n").unwrap();
        let model = HomogeneousModel::build(&ModelSpec::new(Family::DeepLinear, 2, 3), 2).unwrap();
        let theta = [0.3, -0.1, 0.2, 0.5, 0.4, -0.6, 0.7, 0.1, -0.2];
        for loss in [LossSpec::exponential(), LossSpec::logistic()] {
            let obj = Objective::new(&model, &data, &loss).unwrap();
            let ge = obj.evaluate_with_gradient(&theta).unwrap();
            let g = ge.neg_grad_scaled(0.0);
            let fd = fd_loss(&obj, &theta);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a + b).abs() < 1e-6, "{a} vs {b}");
            }
            let (l, dg) = obj.direct_loss_and_gradient(&theta).unwrap();
            assert!((ge.eval.log_loss - l.ln()).abs() < 1e-12);
            for (a, b) in g.iter().zip(&dg) {
                assert!((a + b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multiclass_gradient_matches_direct() {
        let data = parse_csv("1,0,0\n0,1,1\n-1,-1,2\n").unwrap();
        let model = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1).with_outputs(3), 2).unwrap();
        let theta = [0.5, -0.2, 0.1, 0.4, -0.3, -0.3];
        let loss = LossSpec::cross_entropy();
        let obj = Objective::new(&model, &data, &loss).unwrap();
        let ge = obj.evaluate_with_gradient(&theta).unwrap();
        let (l, dg) = obj.direct_loss_and_gradient(&theta).unwrap();
        assert!((ge.eval.log_loss - l.ln()).abs() < 1e-12);
        for (a, b) in ge.neg_grad_scaled(0.0).iter().zip(&dg) {
            assert!((a + b).abs() < 1e-12);
        }
        for (qt, q) in ge.eval.q_tilde.iter().zip(&ge.eval.q) {
            assert!(qt <= q);
        }
    }

    #[test]
    fn euler_identity_links_nu_and_gradient() {
        let data = parse_csv("1,0.5,1\n-0.3,1,-1\n").unwrap();
        let model = HomogeneousModel::build(&ModelSpec::new(Family::DeepLinear, 3, 2), 2).unwrap();
        let theta: Vec<f64> = (0..model.num_params()).map(|i| 0.3 + 0.1 * i as f64).collect();
        let loss = LossSpec::exponential();
        let obj = Objective::new(&model, &data, &loss).unwrap();
        let ge = obj.evaluate_with_gradient(&theta).unwrap();
        let lhs = dot(&theta, &ge.neg_grad_rel);
        let rhs = model.order() * ge.eval.nu_relative();
        assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn huge_margins_stay_finite() {
        let data = parse_csv("1,0,1\n0,1,1\n").unwrap();
        let model = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1), 2).unwrap();
        let loss = LossSpec::logistic();
        let obj = Objective::new(&model, &data, &loss).unwrap();
        let ge = obj.evaluate_with_gradient(&[2000.0, 2001.0]).unwrap();
        assert!((ge.eval.log_inv_loss() - (2000.0 - (1.0 + (-1f64).exp()).ln())).abs() < 1e-9);
        assert!(ge.log_grad_norm().is_finite());
        assert!(ge.descent_direction().is_some());
    }
}
