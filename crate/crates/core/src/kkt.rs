//! Approximate KKT certificates for `min ½‖θ‖² s.t. q_n(θ) ≥ 1` and a small
//! hard-margin SVM solver used as a reference direction.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::HomogeneousModel;
use crate::numerics::{angle, dot, norm};
use crate::objective::Objective;
use crate::param::ParamVector;

/// `θ̃ = θ / q_min^{1/L}`, the smallest feasible rescaling of `θ`.
pub fn feasible_scaling(theta: &ParamVector, q_min: f64, order: f64) -> Result<ParamVector> {
    if !(q_min > 0.0) {
        return Err(Error::NotSeparable(format!("q_min = {q_min}")));
    }
    Ok(theta.scaled((-q_min.ln() / order).exp()))
}

/// Quantities fixed at the reference time `t₀` that enter the predicted bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateAnchor {
    /// `γ̃(t₀)` (or `γ̂(t₀)` for gradient descent).
    pub gamma0: f64,
    pub b1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    pub theta_scaled: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub log_inv_loss: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// `C₁√(1 − β)`.
    pub epsilon_bound: Option<f64>,
    /// `C₂/log(1/𝓛)`.
    pub delta_bound: Option<f64>,
    /// `K` and `b_g` of the loss, when known.
    pub k: Option<f64>,
    pub b_g: Option<f64>,
}

impl KktCertificate {
    /// `δ ≤ C₂/log(1/𝓛)`; vacuous when `log(1/𝓛) < b_g` or no anchor was given.
    pub fn delta_bound_holds(&self) -> Option<bool> {
        let b_g = self.b_g?;
        if self.log_inv_loss < b_g {
            return None;
        }
        self.delta_bound.map(|b| self.delta <= b)
    }
}

/// Builds the multipliers `λ_k = q_min^{1−2/L} ρ w_k/‖∇𝓛‖` and the residuals
/// `ε = ‖θ̃ − Σ λ_k ∇c_k(θ̃)‖`, `δ = max_k λ_k (c_k(θ̃) − 1)`.
///
/// Constraints are the margins `q_n` (binary) or the score gaps `s_nj`.
pub fn build_certificate(
    model: &HomogeneousModel,
    theta: &ParamVector,
    data: &Dataset,
    spec: &LossSpec,
    anchor: Option<CertificateAnchor>,
) -> Result<KktCertificate> {
    let obj = Objective::new(model, data, spec)?;
    let ge = obj.evaluate_with_gradient(theta.as_slice())?;
    let order = model.order();
    let q_min = ge.eval.q_min();
    let theta_scaled = feasible_scaling(theta, q_min, order)?;
    let g_rel = norm(&ge.neg_grad_rel);
    if g_rel == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let rho = theta.rho();
    // every λ shares the factor q_min^{1−2/L} ρ e^{A}/‖∇𝓛‖ = q_min^{1−2/L} ρ/‖G_rel‖
    let scale = ((1.0 - 2.0 / order) * q_min.ln()).exp() * rho / g_rel;
    let lambdas: Vec<f64> = ge
        .eval
        .constraints
        .iter()
        .map(|c| scale * (c.log_weight - ge.anchor).exp())
        .collect();

    // ∇c_k(θ̃) = ∇c_k(θ)/q_min^{1−1/L} by (L−1)-homogeneity of the gradient
    let grads = obj.constraint_gradients(theta.as_slice())?;
    let gscale = (-(1.0 - 1.0 / order) * q_min.ln()).exp();
    let mut resid = theta_scaled.as_slice().to_vec();
    let mut delta = f64::NEG_INFINITY;
    for ((value, g), lam) in grads.iter().zip(&lambdas) {
        for (r, gi) in resid.iter_mut().zip(g) {
            *r -= lam * gscale * gi;
        }
        delta = delta.max(lam * (value / q_min - 1.0));
    }
    let epsilon = norm(&resid);
    let beta = ge.beta(theta.as_slice());
    let u = ge.eval.log_inv_loss();

    let tail = spec.tail;
    let (c1, c2) = match anchor {
        Some(a) => {
            let c1 = 2f64.sqrt() / a.gamma0.powf(1.0 / order);
            let c2 = tail.map(|t| {
                let n = grads.len() as f64;
                2.0 * std::f64::consts::E * n * t.k * t.k / (order * a.gamma0.powf(2.0 / order))
                    * (a.b1 / a.gamma0).powf(t.k.log2())
            });
            (Some(c1), c2)
        }
        None => (None, None),
    };
    Ok(KktCertificate {
        theta_scaled: theta_scaled.into_vec(),
        lambdas,
        epsilon,
        delta,
        beta,
        log_inv_loss: u,
        c1,
        c2,
        epsilon_bound: c1.map(|c| c * (1.0 - beta).max(0.0).sqrt()),
        delta_bound: c2.map(|c| c / u),
        k: tail.map(|t| t.k),
        b_g: tail.map(|t| t.b_g),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmSolution {
    pub w: Vec<f64>,
    /// Geometric margin `1/‖w*‖`.
    pub margin: f64,
    /// Indices of the support vectors.
    pub support: Vec<usize>,
    pub alphas: Vec<f64>,
}

/// Largest number of active sets tried before giving up.
const MAX_SUBSETS: usize = 5_000_000;

/// Solves `min ½‖w‖² s.t. y_n⟨w, h_n⟩ ≥ 1` by enumerating candidate support sets
/// in increasing size. For a set `S` the stationarity conditions give
/// `w = Σ_S a_s y_s h_s` with `G_S a = 1`; the first candidate with `a ≥ 0` that
/// satisfies every constraint is a KKT point of the convex problem, hence optimal.
pub fn svm_oracle(features: &[Vec<f64>], labels: &[f64]) -> Result<SvmSolution> {
    let n = features.len();
    if n == 0 || n != labels.len() {
        return Err(Error::Shape {
            op: "svm_oracle",
            expected: vec![n],
            got: vec![labels.len()],
        });
    }
    if n > 32 {
        return Err(Error::Config(format!("svm_oracle handles at most 32 points, got {n}")));
    }
    let z: Vec<Vec<f64>> = features
        .iter()
        .zip(labels)
        .map(|(h, y)| h.iter().map(|v| y * v).collect())
        .collect();
    let dim = z[0].len();
    let max_size = n.min(dim);
    let mut tried = 0;
    for size in 1..=max_size {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            tried += 1;
            if tried > MAX_SUBSETS {
                return Err(Error::Config("svm_oracle: active-set budget exhausted".into()));
            }
            if let Some(sol) = try_support(&z, &idx) {
                return Ok(sol);
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    Err(Error::NotSeparable("no feasible support set in feature space".into()))
}

fn try_support(z: &[Vec<f64>], idx: &[usize]) -> Option<SvmSolution> {
    let k = idx.len();
    let gram: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| idx.iter().map(|&j| dot(&z[i], &z[j])).collect())
        .collect();
    let a = solve(gram, vec![1.0; k])?;
    if a.iter().any(|&v| v < -1e-12) {
        return None;
    }
    let dim = z[0].len();
    let mut w = vec![0.0; dim];
    for (&i, &ai) in idx.iter().zip(&a) {
        for (wd, zd) in w.iter_mut().zip(&z[i]) {
            *wd += ai * zd;
        }
    }
    if z.iter().any(|zi| dot(&w, zi) < 1.0 - 1e-9) {
        return None;
    }
    let nw = norm(&w);
    Some(SvmSolution {
        margin: 1.0 / nw,
        w,
        support: idx.to_vec(),
        alphas: a,
    })
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

// Gaussian elimination with partial pivoting; None if (numerically) singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        let pivot = a[c].clone();
        for r in c + 1..n {
            let f = a[r][c] / pivot[c];
            for (x, p) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                *x -= f * p;
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Angle in radians between `θ̂` and `ŵ*`.
pub fn direction_gap_to_svm(theta: &[f64], w: &[f64]) -> Result<f64> {
    if norm(theta) == 0.0 || norm(w) == 0.0 {
        return Err(Error::domain("direction gap", 0.0, "both vectors nonzero"));
    }
    if theta.len() != w.len() {
        return Err(Error::Shape {
            op: "direction_gap_to_svm",
            expected: vec![w.len()],
            got: vec![theta.len()],
        });
    }
    Ok(angle(theta, w))
}

/// `w_eff` with `Φ(θ; x) = ⟨w_eff, x⟩` for a (deep) linear network.
pub fn effective_linear_predictor(model: &HomogeneousModel, theta: &[f64]) -> Result<Vec<f64>> {
    let d = model.input_dim();
    (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            Ok(model.outputs(theta, &e)?[0])
        })
        .collect()
}

/// Per-sample output gradients `∇Φ_x(θ)`, the features of the tangent kernel.
pub fn tangent_features(model: &HomogeneousModel, theta: &[f64], data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.inputs
        .iter()
        .map(|x| Ok(model.output_gradients(theta, x)?.1.swap_remove(0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_csv;
    use crate::models::{Family, ModelSpec};

    #[test]
    fn symmetric_pair() {
        let s = svm_oracle(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[1.0, -1.0]).unwrap();
        assert!((s.w[0] - 1.0).abs() < 1e-12 && s.w[1].abs() < 1e-12);
        assert!((s.margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_point_does_not_move_the_solution() {
        let two = svm_oracle(&[vec![1.0, 1.0], vec![-1.0, -1.0]], &[1.0, -1.0]).unwrap();
        let three = svm_oracle(&[vec![1.0, 1.0], vec![-1.0, -1.0], vec![3.0, 3.0]], &[1.0, -1.0, 1.0]).unwrap();
        for (a, b) in two.w.iter().zip(&three.w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inseparable_is_reported() {
        let r = svm_oracle(&[vec![1.0], vec![1.0]], &[1.0, -1.0]);
        assert!(matches!(r, Err(Error::NotSeparable(_))));
    }

    #[test]
    fn scaling_hits_unit_margin() {
        let theta = ParamVector::new(vec![2.0, 0.0]);
        assert_eq!(feasible_scaling(&theta, 1.0, 1.0).unwrap(), theta);
        let s = feasible_scaling(&ParamVector::new(vec![8.0]), 4.0, 1.0).unwrap();
        assert_eq!(s.as_slice(), &[2.0]);
        assert!(feasible_scaling(&theta, 0.0, 1.0).is_err());
    }

    #[test]
    fn aligned_single_sample_has_zero_epsilon() {
        // N = 1, linear model, θ ∥ x: the gradient is parallel to θ
        let data = parse_csv("3,4,1\n").unwrap();
        let model = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1), 2).unwrap();
        let theta = ParamVector::new(vec![0.3, 0.4]);
        let cert = build_certificate(&model, &theta, &data, &LossSpec::exponential(), None).unwrap();
        assert!(cert.epsilon < 1e-10, "{}", cert.epsilon);
        assert!((cert.beta - 1.0).abs() < 1e-12);
        assert!(cert.delta.abs() < 1e-12);
    }

    #[test]
    fn effective_predictor_of_a_chain() {
        let model = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 2, 2), 2).unwrap();
        let theta: Vec<f64> = (0..model.num_params()).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let w = effective_linear_predictor(&model, &theta).unwrap();
        let x = [0.7, -1.3];
        let direct = model.outputs(&theta, &x).unwrap()[0];
        assert!((dot(&w, &x) - direct).abs() < 1e-12);
    }
}
