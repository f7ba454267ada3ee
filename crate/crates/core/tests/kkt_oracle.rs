use homomargin::dataset::{Dataset, Labels};
use homomargin::kkt::{build_certificate, svm_oracle, CertificateAnchor};
use homomargin::losses::LossSpec;
use homomargin::{Family, HomogeneousModel, ModelSpec, ParamVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hard-margin SVM through its dual `max Σα − ½αᵀQα, α ≥ 0`, solved by exact
/// coordinate ascent with clipping at zero.
fn dual_svm(xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| ys[i] * ys[j] * dot(&xs[i], &xs[j])).collect())
        .collect();
    let mut a = vec![0.0; n];
    for _ in 0..200_000 {
        let mut change = 0.0f64;
        for i in 0..n {
            let grad = 1.0 - dot(&q[i], &a);
            let next = (a[i] + grad / q[i][i]).max(0.0);
            change = change.max((next - a[i]).abs());
            a[i] = next;
        }
        if change < 1e-15 {
            break;
        }
    }
    let mut w = vec![0.0; xs[0].len()];
    for i in 0..n {
        for (wd, xd) in w.iter_mut().zip(&xs[i]) {
            *wd += a[i] * ys[i] * xd;
        }
    }
    w
}

fn separable(seed: u64, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    while xs.len() < n {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let s = dot(&w, &x) / dot(&w, &w).sqrt();
        if s.abs() >= 0.3 {
            ys.push(s.signum());
            xs.push(x);
        }
    }
    (xs, ys)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn active_set_oracle_agrees_with_dual_solver(seed in any::<u64>(), n in 2usize..12, dim in 2usize..5) {
        let (xs, ys) = separable(seed, n, dim);
        let sol = svm_oracle(&xs, &ys).unwrap();
        let w = dual_svm(&xs, &ys);
        let nw = dot(&w, &w).sqrt();
        let diff: f64 = sol.w.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-6 * nw, "oracle {:?} dual {:?}", sol.w, w);
        prop_assert!((sol.margin - 1.0 / nw).abs() <= 1e-6 / nw);
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!(y * dot(&sol.w, x) >= 1.0 - 1e-9);
        }
    }
}

#[test]
fn linear_certificate_matches_hand_computation() {
    let (xs, ys) = separable(11, 7, 3);
    let w = dual_svm(&xs, &ys);
    let data = Dataset::new(xs.clone(), Labels::Binary(ys.clone()), "test").unwrap();
    let model = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1), 3).unwrap();
    let spec = LossSpec::exponential();
    // perturbed SVM direction so that every multiplier is distinct
    let theta = ParamVector::new(w.iter().enumerate().map(|(i, v)| 3.0 * v + 0.05 * i as f64).collect());
    let cert = build_certificate(
        &model,
        &theta,
        &data,
        &spec,
        Some(CertificateAnchor { gamma0: 0.5, b1: 2.0 }),
    )
    .unwrap();

    let q: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y * dot(theta.as_slice(), x)).collect();
    let q_min = q.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(q_min > 0.0);
    let mut grad = vec![0.0; 3];
    for ((x, y), qn) in xs.iter().zip(&ys).zip(&q) {
        for (g, xd) in grad.iter_mut().zip(x) {
            *g -= (-qn).exp() * y * xd;
        }
    }
    let gnorm = dot(&grad, &grad).sqrt();
    let rho = theta.rho();
    // L = 1: λ_n = q_min^{-1} ρ e^{−q_n}/‖∇𝓛‖ and ∇c_n = y_n x_n
    let lambdas: Vec<f64> = q.iter().map(|qn| rho * (-qn).exp() / (q_min * gnorm)).collect();
    for (a, b) in cert.lambdas.iter().zip(&lambdas) {
        assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{a} vs {b}");
    }
    let mut resid: Vec<f64> = theta.as_slice().iter().map(|t| t / q_min).collect();
    for ((x, y), lam) in xs.iter().zip(&ys).zip(&lambdas) {
        for (r, xd) in resid.iter_mut().zip(x) {
            *r -= lam * y * xd;
        }
    }
    let eps = dot(&resid, &resid).sqrt();
    let delta = q
        .iter()
        .zip(&lambdas)
        .map(|(qn, l)| l * (qn / q_min - 1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((cert.epsilon - eps).abs() <= 1e-10 * (1.0 + eps));
    assert!((cert.delta - delta).abs() <= 1e-10 * (1.0 + delta));
    let beta = -dot(theta.as_slice(), &grad) / (rho * gnorm);
    assert!((cert.beta - beta).abs() <= 1e-12);
    let c1 = 2f64.sqrt() / 0.5;
    assert!((cert.epsilon_bound.unwrap() - c1 * (1.0 - beta).max(0.0).sqrt()).abs() <= 1e-12);
}

#[test]
fn inseparable_points_have_no_svm() {
    let xs = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
    assert!(svm_oracle(&xs, &[1.0, -1.0]).is_err());
}
