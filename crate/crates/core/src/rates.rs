//! Bounded-ratio checks of the asymptotic loss and norm rates.
//!
//! `ratio_loss = 𝓛·T·(log T)²/g(log T)^{2/L}` and `ratio_rho = ρ/g(log T)^{1/L}`
//! should stay within a constant factor as `T → ∞`. Everything is handled in
//! logs because `𝓛` and `T` leave the f64 range long before the rates settle.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossSpec;

/// One trajectory sample: `log T`, `log(1/𝓛)`, `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub log_t: f64,
    pub log_inv_loss: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub log_t: f64,
    pub log_ratio_loss: f64,
    pub log_ratio_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDiagnostic {
    pub samples: Vec<RateSample>,
    /// Decades of `T` covered after `T_min`.
    pub span_decades: f64,
    pub inconclusive: bool,
}

/// First index with `log(1/𝓛) ≥ 2 log N`.
pub fn t_min_index(points: &[RatePoint], n: usize) -> Option<usize> {
    let thr = 2.0 * (n as f64).ln();
    points.iter().position(|p| p.log_inv_loss >= thr)
}

/// Ratio series from `start` on; points where `g(log T)` is undefined or
/// non-positive are skipped. Fewer than `min_decades` of span marks the
/// diagnostic inconclusive.
pub fn rate_ratios(
    points: &[RatePoint],
    start: usize,
    spec: &LossSpec,
    order: f64,
    min_decades: f64,
) -> Result<RateDiagnostic> {
    let mut samples = Vec::new();
    for p in points.iter().skip(start) {
        let lt = p.log_t;
        if !(lt.is_finite() && lt > spec.g_domain_start() && lt > 0.0 && p.rho > 0.0) {
            continue;
        }
        let g = match spec.g(lt) {
            Ok(g) if g > 0.0 => g,
            _ => continue,
        };
        samples.push(RateSample {
            log_t: lt,
            log_ratio_loss: -p.log_inv_loss + lt + 2.0 * lt.ln() - 2.0 / order * g.ln(),
            log_ratio_rho: p.rho.ln() - g.ln() / order,
        });
    }
    let span_decades = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (b.log_t - a.log_t) / std::f64::consts::LN_10,
        _ => 0.0,
    };
    Ok(RateDiagnostic {
        inconclusive: span_decades < min_decades,
        samples,
        span_decades,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateVerdict {
    pub pass: bool,
    pub inconclusive: bool,
    /// max/min of each ratio over the window.
    pub factor_loss: f64,
    pub factor_rho: f64,
    pub bound_factor: f64,
    pub window_decades: f64,
}

/// Passes iff both ratios vary by at most `bound_factor` over the final
/// `window_decades` decades of `T`.
pub fn bounded_ratio_verdict(diag: &RateDiagnostic, window_decades: f64, bound_factor: f64) -> RateVerdict {
    let end = diag.samples.last().map_or(f64::NAN, |s| s.log_t);
    let lo = end - window_decades * std::f64::consts::LN_10;
    let win: Vec<&RateSample> = diag.samples.iter().filter(|s| s.log_t >= lo).collect();
    let spread = |f: &dyn Fn(&RateSample) -> f64| -> f64 {
        let (mn, mx) = win
            .iter()
            .map(|s| f(s))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        (mx - mn).exp()
    };
    let (fl, fr) = if win.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (spread(&|s| s.log_ratio_loss), spread(&|s| s.log_ratio_rho))
    };
    let inconclusive = diag.inconclusive || win.len() < 2 || diag.span_decades < window_decades;
    RateVerdict {
        pass: !inconclusive && fl <= bound_factor && fr <= bound_factor,
        inconclusive,
        factor_loss: fl,
        factor_rho: fr,
        bound_factor,
        window_decades,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(order: f64) -> Vec<RatePoint> {
        // 𝓛 = 1/(T (log T)^{2−2/L}), ρ = (log T)^{1/L} with g = id
        (0..400)
            .map(|k| {
                let lt = 2.0 + 0.05 * k as f64;
                RatePoint {
                    log_t: lt,
                    log_inv_loss: lt + (2.0 - 2.0 / order) * lt.ln(),
                    rho: lt.powf(1.0 / order),
                }
            })
            .collect()
    }

    #[test]
    fn constructed_trajectory_has_constant_ratios() {
        for &l in &[1.0, 2.0] {
            let d = rate_ratios(&synthetic(l), 0, &LossSpec::exponential(), l, 3.0).unwrap();
            assert!(!d.inconclusive);
            for s in &d.samples {
                assert!(s.log_ratio_loss.abs() < 1e-12 && s.log_ratio_rho.abs() < 1e-12);
            }
            let v = bounded_ratio_verdict(&d, 2.0, 10.0);
            assert!(v.pass && (v.factor_loss - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn drifting_ratio_reports_its_growth() {
        // ratio_rho ∝ log T over the window: factor = log T_end / log T_start
        let mut pts = synthetic(1.0);
        for p in &mut pts {
            p.rho *= p.log_t;
        }
        let d = rate_ratios(&pts, 0, &LossSpec::exponential(), 1.0, 3.0).unwrap();
        let v = bounded_ratio_verdict(&d, 3.0, 10.0);
        let end = pts.last().unwrap().log_t;
        let start = d
            .samples
            .iter()
            .find(|s| s.log_t >= end - 3.0 * std::f64::consts::LN_10)
            .unwrap()
            .log_t;
        assert!((v.factor_rho - end / start).abs() < 1e-9);
    }

    #[test]
    fn short_span_is_inconclusive() {
        let pts: Vec<RatePoint> = synthetic(1.0).into_iter().take(20).collect();
        let d = rate_ratios(&pts, 0, &LossSpec::exponential(), 1.0, 3.0).unwrap();
        assert!(d.inconclusive);
        assert!(!bounded_ratio_verdict(&d, 2.0, 10.0).pass);
    }
}
