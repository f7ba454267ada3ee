//! Gradient flow on the homogenized Mexican-hat model, in polar coordinates.
//!
//! The model is `h(x, y, z) = ρ^L (1 − f(x/ρ, y/ρ))` with
//! `f = E(r)(1 − C(r) sin ψ)`, `E(r) = e^{−1/(1−r²)}`, `ψ = φ − 1/(1−r²)`,
//! trained with `𝓛 = N e^{−h}`. Time is rescaled by the positive factor
//! `N e^{−h} ρ^{L−2} E(r)`, which leaves the path of the direction unchanged and
//! keeps every rate of order one:
//!
//! ```text
//! dr/dσ     = −(1 − r²) (∂f/∂r) / E
//! dφ/dσ     = −(∂f/∂φ) / (E r²)
//! dlogρ/dσ  = L (1 − f) / E
//! ```
//!
//! The state is advanced in `(r, ψ, log ρ)`. Along `ψ = 0` the two terms of
//! `dψ/dσ = dφ/dσ − (2r/(1−r²)²)·dr/dσ` cancel exactly, but the curve is
//! linearly unstable, so `dψ/dσ` is evaluated with that cancellation done
//! analytically rather than by subtracting two large rates.
//!
//! `ρ` itself overflows `f64` long before `r` approaches 1, so only `log ρ` is kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of `C(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HatProfile {
    /// `C(r) = 4r⁴/(4r⁴ + (1−r²)³)`: the curve `ψ = 0` is exactly invariant.
    #[default]
    Invariant,
    /// `C(r) = 4r⁴/(4r⁴ + (1−r²)⁴)`, the classical Mexican-hat profile. Under the
    /// homogenized flow `ψ` drifts away from 0 with this choice.
    Classical,
}

impl HatProfile {
    fn exponent(self) -> i32 {
        match self {
            HatProfile::Invariant => 3,
            HatProfile::Classical => 4,
        }
    }

    /// `(C(r), C'(r))`.
    pub fn c(self, r: f64) -> (f64, f64) {
        let m = self.exponent();
        let s = 1.0 - r * r;
        let a = 4.0 * r.powi(4);
        let b = s.powi(m);
        let den = a + b;
        let num_d = 16.0 * r.powi(3) * b + 8.0 * f64::from(m) * r.powi(5) * s.powi(m - 1);
        (a / den, num_d / (den * den))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatState {
    /// Rescaled time σ.
    pub sigma: f64,
    pub r: f64,
    /// `ψ = φ − 1/(1 − r²)`.
    pub psi: f64,
    pub log_rho: f64,
    /// Set once `r` had to be clamped back into `(0, 1)`.
    pub clamped: bool,
}

impl HatState {
    pub fn new(r: f64, psi: f64, log_rho: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::domain("hat state", r, "0 < r < 1"));
        }
        Ok(Self {
            sigma: 0.0,
            r,
            psi,
            log_rho,
            clamped: false,
        })
    }

    /// Unwrapped polar angle.
    pub fn phi(&self) -> f64 {
        self.psi + 1.0 / (1.0 - self.r * self.r)
    }
}

/// Partials of `f` divided by `E(r)`: `(f_r/E, f_φ/E, (1−f)/E)`.
pub fn scaled_partials(profile: HatProfile, r: f64, phi: f64) -> (f64, f64, f64) {
    let s = 1.0 - r * r;
    let psi = phi - 1.0 / s;
    let (c, cp) = profile.c(r);
    let k = 2.0 * r / (s * s);
    let (sp, cs) = psi.sin_cos();
    let fr = -k * (1.0 - c * sp) - cp * sp + c * cs * k;
    let fphi = -c * cs;
    let one_minus_f = (1.0 / s).exp() - 1.0 + c * sp;
    (fr, fphi, one_minus_f)
}

/// Rates `(dr/dσ, dφ/dσ, dlogρ/dσ)` in polar coordinates.
pub fn rates(profile: HatProfile, order: f64, r: f64, phi: f64) -> (f64, f64, f64) {
    let (fr, fphi, omf) = scaled_partials(profile, r, phi);
    (-(1.0 - r * r) * fr, -fphi / (r * r), order * omf)
}

/// Rates `(dr/dσ, dψ/dσ, dlogρ/dσ)`.
pub fn rates_psi(profile: HatProfile, order: f64, r: f64, psi: f64) -> (f64, f64, f64) {
    let s = 1.0 - r * r;
    let (c, cp) = profile.c(r);
    let k = 2.0 * r / (s * s);
    let (sp, cs) = psi.sin_cos();
    let cm1 = -2.0 * (0.5 * psi).sin().powi(2);
    let fr = -k * (1.0 - c * sp) - cp * sp + c * cs * k;
    let dr = -s * fr;
    // zero for the invariant profile
    let drift = match profile {
        HatProfile::Invariant => 0.0,
        HatProfile::Classical => c / (r * r) - 2.0 * r * k * (1.0 - c) / s,
    };
    let dpsi = drift + c * cm1 / (r * r) + (2.0 * r / s) * ((k * c - cp) * sp + k * c * cm1);
    let omf = (1.0 / s).exp() - 1.0 + c * sp;
    (dr, dpsi, order * omf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HatConfig {
    pub r0: f64,
    pub psi0: f64,
    pub order: f64,
    pub num_samples: usize,
    pub profile: HatProfile,
    /// Per-step bound on `|Δr|/(1 − r²)` and on `|Δφ|`.
    pub step_fraction: f64,
    pub max_dsigma: f64,
    pub r_stop: f64,
    pub max_steps: usize,
}

impl Default for HatConfig {
    fn default() -> Self {
        Self {
            r0: 0.5,
            psi0: 0.0,
            order: 2.0,
            num_samples: 1,
            profile: HatProfile::Invariant,
            step_fraction: 1e-3,
            max_dsigma: 0.05,
            r_stop: 0.995,
            max_steps: 2_000_000,
        }
    }
}

impl HatConfig {
    /// `log` of `dt/dσ = 1/(N e^{−h} ρ^{L−2} E(r))`, with `h = ρ^L(1 − f)` taken in log
    /// space. The result is `None` once `h` itself is not representable.
    pub fn log_dt_dsigma(&self, s: &HatState) -> Option<f64> {
        let (_, _, omf) = scaled_partials(self.profile, s.r, s.phi());
        let e = -1.0 / (1.0 - s.r * s.r);
        let log_h = self.order * s.log_rho + (omf.ln() + e);
        let h = log_h.exp();
        h.is_finite()
            .then(|| -((self.num_samples as f64).ln() - h + (self.order - 2.0) * s.log_rho + e))
    }
}

/// One RK4 step of size `dsigma`.
pub fn hat_step(state: &HatState, dsigma: f64, profile: HatProfile, order: f64) -> HatState {
    let f = |r: f64, psi: f64| rates_psi(profile, order, r, psi);
    let (r, p) = (state.r, state.psi);
    let k1 = f(r, p);
    let k2 = f(r + 0.5 * dsigma * k1.0, p + 0.5 * dsigma * k1.1);
    let k3 = f(r + 0.5 * dsigma * k2.0, p + 0.5 * dsigma * k2.1);
    let k4 = f(r + dsigma * k3.0, p + dsigma * k3.1);
    let comb = |a: f64, b: f64, c: f64, d: f64| dsigma / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    let mut r1 = r + comb(k1.0, k2.0, k3.0, k4.0);
    let mut clamped = state.clamped;
    if !(r1 > 0.0 && r1 < 1.0) {
        r1 = r1.clamp(1e-12, 1.0 - 1e-12);
        clamped = true;
    }
    HatState {
        sigma: state.sigma + dsigma,
        r: r1,
        psi: p + comb(k1.1, k2.1, k3.1, k4.1),
        log_rho: state.log_rho + comb(k1.2, k2.2, k3.2, k4.2),
        clamped,
    }
}

/// Adaptive step size for the current state.
pub fn hat_dsigma(cfg: &HatConfig, s: &HatState) -> f64 {
    let (dr, dphi, _) = rates(cfg.profile, cfg.order, s.r, s.phi());
    let room = 1.0 - s.r * s.r;
    let mut ds = cfg.max_dsigma;
    if dr != 0.0 {
        ds = ds.min(cfg.step_fraction * room / dr.abs());
    }
    if dphi != 0.0 {
        ds = ds.min(cfg.step_fraction / dphi.abs());
    }
    ds
}

/// Integrate until `r ≥ r_stop` or the step budget is spent. `record` receives
/// every accepted state, including the initial one.
pub fn run_hat(cfg: &HatConfig, mut record: impl FnMut(&HatState)) -> Result<HatState> {
    let mut s = HatState::new(cfg.r0, cfg.psi0, 0.0)?;
    record(&s);
    for _ in 0..cfg.max_steps {
        if s.r >= cfg.r_stop {
            break;
        }
        let ds = hat_dsigma(cfg, &s);
        s = hat_step(&s, ds, cfg.profile, cfg.order);
        if !(s.psi.is_finite() && s.log_rho.is_finite()) {
            return Err(Error::NonFinite(format!("hat state at σ = {}", s.sigma)));
        }
        record(&s);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_zero_is_stationary_for_invariant_profile() {
        let s = HatState::new(0.5, 0.0, 0.0).unwrap();
        let (dr, dphi, _) = rates(HatProfile::Invariant, 2.0, s.r, s.phi());
        let dpsi = dphi - 2.0 * s.r / (1.0 - s.r * s.r).powi(2) * dr;
        assert!(dpsi.abs() < 1e-12, "{dpsi}");
        let s1 = hat_step(&s, 1e-3, HatProfile::Invariant, 2.0);
        assert!(s1.psi.abs() <= 1e-10);
    }

    #[test]
    fn angle_increases_on_invariant_curve() {
        let (_, fphi, _) = scaled_partials(HatProfile::Invariant, 0.5, 1.0 / 0.75);
        assert!(fphi < 0.0);
        let (_, dphi, _) = rates(HatProfile::Invariant, 2.0, 0.5, 1.0 / 0.75);
        assert!(dphi > 0.0);
    }

    #[test]
    fn classical_profile_drifts() {
        let s = HatState::new(0.5, 0.0, 0.0).unwrap();
        let (dr, dphi, _) = rates(HatProfile::Classical, 2.0, s.r, s.phi());
        let dpsi = dphi - 2.0 * s.r / (1.0 - s.r * s.r).powi(2) * dr;
        assert!(dpsi > 1e-3);
    }

    #[test]
    fn psi_rate_agrees_with_polar_rates() {
        for p in [HatProfile::Invariant, HatProfile::Classical] {
            for (r, psi) in [(0.3, 0.4), (0.6, -1.0), (0.8, 2.5)] {
                let phi = psi + 1.0 / (1.0 - r * r);
                let (dr, dphi, dl) = rates(p, 2.0, r, phi);
                let want = dphi - 2.0 * r / (1.0 - r * r).powi(2) * dr;
                let got = rates_psi(p, 2.0, r, psi);
                assert!((got.0 - dr).abs() < 1e-12 * dr.abs().max(1.0));
                assert!(
                    (got.1 - want).abs() < 1e-9 * want.abs().max(1.0),
                    "{p:?} {r} {}",
                    got.1 - want
                );
                assert!((got.2 - dl).abs() < 1e-12 * dl.abs().max(1.0));
            }
        }
    }

    #[test]
    fn profile_derivative_matches_finite_difference() {
        for p in [HatProfile::Invariant, HatProfile::Classical] {
            for r in [0.2, 0.5, 0.9] {
                let h = 1e-6;
                let fd = (p.c(r + h).0 - p.c(r - h).0) / (2.0 * h);
                assert!((p.c(r).1 - fd).abs() < 1e-7);
            }
        }
    }
}
