//! The GD smoothed margin `γ̂ = e^{φ(𝓛)}/ρ^L`.
//!
//! Everything is written in `u = log(1/𝓛)`. With `λ(u) = g'(u)/g(u)` and
//! `μ(u) = u₀/(2u)`, let `r(u) = λ(1 + 2(1 + λ/L)μ)` and
//! `R(u) = e^{−u}·max_{u₀≤v≤u} e^{v} r(v)`. Then `φ = log g(u) + I(u)` with
//!
//! ```text
//! I(u) = −∫_u^∞ (R(v) − λ(v)) dv  < 0
//! ```
//!
//! `I` is tabulated on a log-spaced grid `[u₀, U]` (Gauss–Legendre cells summed
//! from the far end, cubic Hermite lookup using the exact integrand as the slope).
//! Past `U` the running max is attained at `v` itself and `λ ≈ τ/v`, which gives
//! the closed-form tail `−τu₀/v − τ²u₀/(2Lv²)`; for the exponential loss `τ = 1`
//! and the tail is exact for every `v ≥ u₀ ≥ 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossSpec;

/// Grid resolution of the `I(u)` table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaHatGrid {
    pub nodes: usize,
    /// Table end `U = u₀·span`.
    pub span: f64,
}

impl Default for GammaHatGrid {
    fn default() -> Self {
        Self { nodes: 4000, span: 1e5 }
    }
}

/// `γ̂` with the rounding guard applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaHatValue {
    pub gamma_hat: f64,
    /// `I(u) = log(γ̂/γ̃)`.
    pub log_ratio: f64,
    /// Set when rounding made `γ̂ ≥ γ̃` and the value was pulled below `γ̃`.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaHat {
    spec: LossSpec,
    order: f64,
    u0: f64,
    // nodes v_k, J(v_k) = ∫_{v_k}^∞ (R − λ), integrand at v_k
    v: Vec<f64>,
    j: Vec<f64>,
    d: Vec<f64>,
    tau: f64,
    provisional: bool,
}

const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

impl GammaHat {
    /// Builds the table for `𝓛(t₀) = e^{−u₀}`.
    pub fn new(spec: &LossSpec, order: f64, u0: f64, grid: GammaHatGrid) -> Result<Self> {
        if !(u0 > spec.g_domain_start()) || !u0.is_finite() {
            return Err(Error::domain(
                "γ̂ anchor log(1/𝓛(t₀))",
                u0,
                format!("finite and > {}", spec.g_domain_start()),
            ));
        }
        let n = grid.nodes.max(2);
        let u_end = u0 * grid.span.max(1.0 + 1e-9);
        let ratio = (u_end / u0).ln() / (n - 1) as f64;
        let v: Vec<f64> = (0..n).map(|k| u0 * (ratio * k as f64).exp()).collect();

        let log_r = |x: f64| -> Result<f64> {
            let lam = spec.lambda_from_log_inv(x)?;
            let mu = u0 / (2.0 * x);
            Ok(x + (lam * (1.0 + 2.0 * (1.0 + lam / order) * mu)).ln())
        };
        // R − λ = r·(e^{m − log r_x} − 1) + 2λ(1 + λ/L)μ, exact where the max sits at x
        let integrand = |x: f64, m: f64| -> Result<f64> {
            let lam = spec.lambda_from_log_inv(x)?;
            let mu = u0 / (2.0 * x);
            let r = lam * (1.0 + 2.0 * (1.0 + lam / order) * mu);
            let lr = log_r(x)?;
            let excess = if m > lr { r * (m - lr).exp_m1() } else { 0.0 };
            Ok(excess + 2.0 * lam * (1.0 + lam / order) * mu)
        };

        // Gauss–Legendre over [a, b] with the running max carried in order
        let cell = |a: f64, b: f64, m: &mut f64| -> Result<f64> {
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let mut acc = 0.0;
            for (z, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let x = mid + half * z;
                *m = m.max(log_r(x)?);
                acc += w * integrand(x, *m)?;
            }
            Ok(half * acc)
        };

        let mut m = log_r(u0)?;
        let mut pieces = vec![0.0; n];
        let mut d = vec![integrand(u0, m)?; n];
        for k in 1..n {
            let (a, b) = (v[k - 1], v[k]);
            let rb = log_r(b)?;
            // the running max resumes growing inside the cell: split at the crossing
            if log_r(a)? < m && rb > m {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if log_r(mid)? > m {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let mut m_flat = m;
                let left = cell(a, lo, &mut m_flat)?;
                let mut m_up = m.max(log_r(hi)?);
                pieces[k] = left + cell(hi, b, &mut m_up)?;
                m = m_up;
            } else {
                pieces[k] = cell(a, b, &mut m)?;
            }
            m = m.max(rb);
            d[k] = integrand(b, m)?;
        }
        let u_end = v[n - 1];
        let tau = spec.lambda_from_log_inv(u_end)? * u_end;
        // the running max must be attained at the endpoint for the closed-form tail
        if m > log_r(u_end)? + 1e-12 {
            return Err(Error::domain("γ̂ tail", u_end, "running max attained at the table end"));
        }
        let tail = tau * u0 / u_end + tau * tau * u0 / (2.0 * order * u_end * u_end);
        // j[k] = ∫_{v_k}^∞ (R − λ), accumulated from the far end for relative accuracy
        let mut j = vec![tail; n];
        for k in (0..n - 1).rev() {
            j[k] = j[k + 1] + pieces[k + 1];
        }
        Ok(Self {
            spec: spec.clone(),
            order,
            u0,
            v,
            j,
            d,
            tau,
            provisional: !spec.has_reference_gd_constants(),
        })
    }

    pub fn u0(&self) -> f64 {
        self.u0
    }

    /// True for losses whose GD constants are not given in closed form.
    pub fn provisional(&self) -> bool {
        self.provisional
    }

    /// `I(u) = log(γ̂/γ̃)`, defined for `u ≥ u₀`.
    pub fn log_ratio(&self, u: f64) -> Result<f64> {
        if !(u >= self.u0 * (1.0 - 1e-12)) {
            return Err(Error::domain("γ̂", u, format!("log(1/𝓛) ≥ log(1/𝓛(t₀)) = {}", self.u0)));
        }
        let u = u.max(self.u0);
        let n = self.v.len();
        let u_end = self.v[n - 1];
        if u >= u_end {
            let (t, l) = (self.tau, self.order);
            return Ok(-(t * self.u0 / u + t * t * self.u0 / (2.0 * l * u * u)));
        }
        let k = match self.v.binary_search_by(|x| x.partial_cmp(&u).unwrap()) {
            Ok(k) => return Ok(-self.j[k]),
            Err(k) => k - 1,
        };
        let (a, b) = (self.v[k], self.v[k + 1]);
        let h = b - a;
        let s = (u - a) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        // d/dv of j is −(R − λ)
        let ju = h00 * self.j[k] - h10 * h * self.d[k] + h01 * self.j[k + 1] - h11 * h * self.d[k + 1];
        Ok(-ju)
    }

    /// `γ̂ = g(u)·e^{I(u)}/ρ^L`.
    pub fn value(&self, u: f64, rho: f64) -> Result<GammaHatValue> {
        if !(rho > 0.0) {
            return Err(Error::domain("γ̂", rho, "ρ > 0"));
        }
        let i = self.log_ratio(u)?;
        let log_tilde = self.spec.g(u)?.ln() - self.order * rho.ln();
        let tilde = log_tilde.exp();
        let mut gamma_hat = (log_tilde + i).exp();
        let mut clamped = false;
        if gamma_hat >= tilde {
            // I underflowed relative to 1: stay strictly below γ̃
            clamped = gamma_hat - tilde > 1e-12 * tilde;
            gamma_hat = tilde * (1.0 - f64::EPSILON);
        }
        Ok(GammaHatValue {
            gamma_hat,
            log_ratio: i,
            clamped,
        })
    }
}
