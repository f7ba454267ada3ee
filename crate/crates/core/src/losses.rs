//! Exponential-tail losses written as `ℓ(q) = e^{-f(q)}` with `g = f⁻¹`.
//!
//! Every function of the loss value also has an entry point taking `u = log(1/𝓛)`
//! directly, because training drives 𝓛 far below the smallest positive f64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{expm1_ratio, log1p_ratio, softplus};

/// Optional (B3.4)/(S3.4) constants carried with a loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConstants {
    /// Ratio bound `K` for `g'(x) ≤ K g'(θx)`, `θ ∈ [1/2, 1)`.
    pub k: f64,
    /// Threshold `b_g` above which the ratio bound holds.
    pub b_g: f64,
    /// Log-derivative bound `p` used by the general-loss GD constants.
    pub p: Option<f64>,
}

/// Tabulated `(q, f(q), f'(q))` triples for a user-supplied loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tabulated {
    q: Vec<f64>,
    f: Vec<f64>,
    fp: Vec<f64>,
}

impl Tabulated {
    pub fn new(q: Vec<f64>, f: Vec<f64>, fp: Vec<f64>) -> Result<Self> {
        if q.len() < 2 || q.len() != f.len() || q.len() != fp.len() {
            return Err(Error::Config("tabulated loss needs ≥ 2 equal-length columns".into()));
        }
        if q.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("tabulated q grid must be strictly increasing".into()));
        }
        Ok(Self { q, f, fp })
    }

    fn locate(&self, x: f64) -> Option<usize> {
        if x < self.q[0] || x > *self.q.last().unwrap() {
            return None;
        }
        let i = self.q.partition_point(|&v| v <= x);
        Some(i.clamp(1, self.q.len() - 1) - 1)
    }

    // cubic Hermite on the segment containing q
    fn eval(&self, x: f64) -> Option<(f64, f64)> {
        let i = self.locate(x)?;
        let (q0, q1) = (self.q[i], self.q[i + 1]);
        let h = q1 - q0;
        let t = (x - q0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let (h00, h10, h01, h11) = (
            2.0 * t3 - 3.0 * t2 + 1.0,
            t3 - 2.0 * t2 + t,
            -2.0 * t3 + 3.0 * t2,
            t3 - t2,
        );
        let v = h00 * self.f[i] + h10 * h * self.fp[i] + h01 * self.f[i + 1] + h11 * h * self.fp[i + 1];
        let (d00, d10, d01, d11) = (
            6.0 * t2 - 6.0 * t,
            3.0 * t2 - 4.0 * t + 1.0,
            -6.0 * t2 + 6.0 * t,
            3.0 * t2 - 2.0 * t,
        );
        let d = (d00 * self.f[i] + d01 * self.f[i + 1]) / h + d10 * self.fp[i] + d11 * self.fp[i + 1];
        Some((v, d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Exp,
    Logistic,
    /// `ℓ(q) = e^{-q³}`.
    ExpCubed,
    Tabulated(Tabulated),
}

/// An exponential-type loss as the bundle `(ℓ, ℓ⁻¹, f, f', g, g', b_f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub name: String,
    pub kind: LossKind,
    pub b_f: f64,
    pub tail: Option<TailConstants>,
    /// Multi-class models use the cross-entropy path with the logistic `ℓ⁻¹`.
    pub multiclass: bool,
}

/// Relative tolerance of the bisection used to invert tabulated losses.
const BISECTION_RTOL: f64 = 1e-12;

impl LossSpec {
    pub fn exponential() -> Self {
        Self {
            name: "exp".into(),
            kind: LossKind::Exp,
            b_f: 0.0,
            tail: Some(TailConstants {
                k: 1.0,
                b_g: 0.0,
                p: Some(0.0),
            }),
            multiclass: false,
        }
    }

    pub fn logistic() -> Self {
        Self {
            name: "logistic".into(),
            kind: LossKind::Logistic,
            b_f: 0.0,
            tail: Some(TailConstants {
                k: 2.0,
                b_g: 2.0,
                p: Some(1.0),
            }),
            multiclass: false,
        }
    }

    pub fn cross_entropy() -> Self {
        Self {
            name: "cross_entropy".into(),
            multiclass: true,
            ..Self::logistic()
        }
    }

    /// `ℓ(q) = e^{-q³}`; tail constants are empirical grid-validated values.
    pub fn exp_cubed() -> Self {
        Self {
            name: "exp_cubed".into(),
            kind: LossKind::ExpCubed,
            b_f: 0.0,
            tail: Some(TailConstants {
                k: 4.0,
                b_g: 1.0,
                p: Some(2.0),
            }),
            multiclass: false,
        }
    }

    pub fn tabulated(name: &str, table: Tabulated, b_f: f64) -> Self {
        Self {
            name: name.into(),
            kind: LossKind::Tabulated(table),
            b_f,
            tail: None,
            multiclass: false,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "exp" | "exponential" => Ok(Self::exponential()),
            "logistic" => Ok(Self::logistic()),
            "cross_entropy" => Ok(Self::cross_entropy()),
            "exp_cubed" => Ok(Self::exp_cubed()),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }

    /// True for the losses whose GD constants are fully specified (exp, logistic).
    pub fn has_reference_gd_constants(&self) -> bool {
        matches!(self.kind, LossKind::Exp | LossKind::Logistic)
    }

    pub fn f(&self, q: f64) -> f64 {
        match &self.kind {
            LossKind::Exp => q,
            LossKind::Logistic => {
                if q >= 0.0 {
                    q - log1p_ratio((-q).exp()).ln()
                } else {
                    -softplus(-q).ln()
                }
            }
            LossKind::ExpCubed => q * q * q,
            LossKind::Tabulated(t) => t.eval(q).map_or(f64::NAN, |v| v.0),
        }
    }

    pub fn f_prime(&self, q: f64) -> f64 {
        match &self.kind {
            LossKind::Exp => 1.0,
            LossKind::Logistic => {
                if q >= 0.0 {
                    let w = (-q).exp();
                    1.0 / ((1.0 + w) * log1p_ratio(w))
                } else {
                    let s = 1.0 / (1.0 + q.exp());
                    s / softplus(-q)
                }
            }
            LossKind::ExpCubed => 3.0 * q * q,
            LossKind::Tabulated(t) => t.eval(q).map_or(f64::NAN, |v| v.1),
        }
    }

    /// `log(e^{-f(q)} f'(q))`, the log of `-dℓ/dq`.
    pub fn log_weight(&self, q: f64) -> f64 {
        match &self.kind {
            LossKind::Exp => -q,
            LossKind::Logistic => -softplus(q),
            _ => -self.f(q) + self.f_prime(q).ln(),
        }
    }

    /// `ℓ(q)`.
    pub fn ell(&self, q: f64) -> f64 {
        match &self.kind {
            LossKind::Logistic => softplus(-q),
            _ => (-self.f(q)).exp(),
        }
    }

    /// Lower end `f(b_f)` of the domain of `g`.
    pub fn g_domain_start(&self) -> f64 {
        self.f(self.b_f)
    }

    /// Separability threshold `ℓ(b_f)`.
    pub fn separability_threshold(&self) -> f64 {
        self.ell(self.b_f)
    }

    fn check_g_domain(&self, x: f64, what: &'static str) -> Result<()> {
        let lo = self.g_domain_start();
        // one ulp-scale of slack so that g(f(b_f)) itself is admissible
        if !(x >= lo - 4.0 * f64::EPSILON * lo.abs().max(1.0)) || x.is_nan() {
            return Err(Error::domain(what, x, format!("[{lo}, ∞)")));
        }
        Ok(())
    }

    /// `g = f⁻¹` on `[f(b_f), ∞)`.
    pub fn g(&self, x: f64) -> Result<f64> {
        self.check_g_domain(x, "g")?;
        Ok(match &self.kind {
            LossKind::Exp => x,
            LossKind::Logistic => x - expm1_ratio((-x).exp()).ln(),
            LossKind::ExpCubed => x.max(0.0).cbrt(),
            LossKind::Tabulated(t) => self.bisect_tabulated(t, x)?,
        })
    }

    pub fn g_prime(&self, x: f64) -> Result<f64> {
        self.check_g_domain(x, "g'")?;
        Ok(match &self.kind {
            LossKind::Exp => 1.0,
            LossKind::Logistic => 1.0 / expm1_ratio((-x).exp()),
            LossKind::ExpCubed => {
                if x <= 0.0 {
                    return Err(Error::domain("g'", x, "(0, ∞)"));
                }
                1.0 / (3.0 * x.powf(2.0 / 3.0))
            }
            LossKind::Tabulated(_) => 1.0 / self.f_prime(self.g(x)?),
        })
    }

    fn bisect_tabulated(&self, t: &Tabulated, x: f64) -> Result<f64> {
        let mut lo = self.b_f.max(t.q[0]);
        let mut hi = *t.q.last().unwrap();
        if x > self.f(hi) {
            return Err(Error::domain("g (tabulated)", x, format!("≤ f({hi})")));
        }
        while hi - lo > BISECTION_RTOL * hi.abs().max(1e-300) {
            let mid = 0.5 * (lo + hi);
            if self.f(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `ℓ⁻¹(v)` for `v < ℓ(b_f)`.
    pub fn ell_inv(&self, v: f64) -> Result<f64> {
        if !(v > 0.0) {
            return Err(Error::domain("ℓ⁻¹", v, "(0, ℓ(b_f)]"));
        }
        self.g(-v.ln())
    }

    /// `λ = g'(u)/g(u)` with `u = log(1/𝓛)`.
    pub fn lambda_from_log_inv(&self, u: f64) -> Result<f64> {
        if !(u > self.g_domain_start()) {
            return Err(Error::domain(
                "λ",
                u,
                format!("log(1/𝓛) > f(b_f) = {}", self.g_domain_start()),
            ));
        }
        let g = self.g(u)?;
        if g <= 0.0 {
            return Err(Error::domain("λ", u, "g(log 1/𝓛) > 0"));
        }
        Ok(self.g_prime(u)? / g)
    }

    /// `λ(𝓛)`; requires `𝓛 < ℓ(b_f)`.
    pub fn lambda_of_loss(&self, loss: f64) -> Result<f64> {
        if !(loss > 0.0) {
            return Err(Error::domain("λ", loss, "(0, ℓ(b_f))"));
        }
        self.lambda_from_log_inv(-loss.ln())
    }
}

/// Sampling grid for numeric assumption checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for SampleGrid {
    fn default() -> Self {
        Self {
            lo: 1e-3,
            hi: 1e3,
            n: 10_000,
        }
    }
}

impl SampleGrid {
    /// Log-spaced points in `[lo, hi]`.
    pub fn points(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let n = self.n.max(2);
        (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub clause: String,
    pub passed: bool,
    /// Worst violating (or tightest) pair of sample points, if any.
    pub worst: Option<(f64, f64)>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B3Report {
    pub loss: String,
    pub clauses: Vec<ClauseResult>,
}

impl B3Report {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }
}

/// Lower bound on `f'(Q_max)·Q_max` accepted as numerical divergence.
pub const DIVERGENCE_BOUND: f64 = 100.0;

/// Grid checks of the (B3) clauses, the `g∘f` round trip, and (when constants are
/// present) the (B3.4) ratio bound.
pub fn validate_b3(spec: &LossSpec, grid: &SampleGrid) -> B3Report {
    let pts: Vec<f64> = grid.points().into_iter().map(|q| q + spec.b_f).collect();
    let mut clauses = Vec::new();

    // (B3.2) f' > 0
    let worst = pts
        .iter()
        .map(|&q| (q, spec.f_prime(q)))
        .fold((f64::NAN, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
    clauses.push(ClauseResult {
        clause: "B3.2 f'(q) > 0".into(),
        passed: worst.1 > 0.0,
        worst: Some(worst),
        detail: format!("min f' = {:e} at q = {}", worst.1, worst.0),
    });

    // (B3.3) f'(q)q non-decreasing
    let h: Vec<f64> = pts.iter().map(|&q| spec.f_prime(q) * q).collect();
    let mut worst_drop = 0.0;
    let mut worst_pair = None;
    for (i, w) in h.windows(2).enumerate() {
        let drop = w[0] - w[1];
        let tol = 1e-12 * w[0].abs().max(1.0);
        if drop > tol && drop > worst_drop {
            worst_drop = drop;
            worst_pair = Some((pts[i], pts[i + 1]));
        }
    }
    clauses.push(ClauseResult {
        clause: "B3.3 f'(q)q non-decreasing".into(),
        passed: worst_pair.is_none(),
        worst: worst_pair,
        detail: format!("largest decrease {worst_drop:e}"),
    });

    let qmax = *pts.last().unwrap();
    let top = spec.f_prime(qmax) * qmax;
    clauses.push(ClauseResult {
        clause: "B3.3 f'(q)q → ∞".into(),
        passed: top >= DIVERGENCE_BOUND,
        worst: Some((qmax, top)),
        detail: format!("f'(Q_max)Q_max = {top:e} vs bound {DIVERGENCE_BOUND}"),
    });

    // g(f(q)) = q on [b_f + 0.1, 50]
    let mut worst_rt: Option<(f64, f64)> = None;
    for &q in pts.iter().filter(|&&q| q >= spec.b_f + 0.1 && q <= 50.0) {
        let err = match spec.g(spec.f(q)) {
            Ok(v) => ((v - q) / q).abs(),
            Err(_) => f64::INFINITY,
        };
        if worst_rt.is_none_or(|w| err > w.1) {
            worst_rt = Some((q, err));
        }
    }
    let rt_err = worst_rt.map_or(0.0, |w| w.1);
    clauses.push(ClauseResult {
        clause: "round trip g(f(q)) = q".into(),
        passed: rt_err <= 1e-10,
        worst: worst_rt,
        detail: format!("max relative error {rt_err:e}"),
    });

    if let Some(tc) = spec.tail {
        let thetas = [0.5, 0.6, 0.75, 0.9, 0.99];
        let mut worst: Option<(f64, f64)> = None;
        let gd = spec.g_domain_start();
        for &x in pts.iter().filter(|&&x| x > tc.b_g && x > gd) {
            for &th in &thetas {
                let tx = th * x;
                if tx <= gd {
                    continue;
                }
                let (Ok(a), Ok(b)) = (spec.g_prime(x), spec.g_prime(tx)) else {
                    continue;
                };
                let r = a / b;
                if worst.is_none_or(|w| r > w.1) {
                    worst = Some((x, r));
                }
            }
        }
        let gb = spec.g(tc.b_g.max(gd)).unwrap_or(spec.b_f);
        for &y in pts.iter().filter(|&&y| y > gb) {
            for &th in &thetas {
                let r = spec.f_prime(y) / spec.f_prime(th * y);
                if worst.is_none_or(|w| r > w.1) {
                    worst = Some((y, r));
                }
            }
        }
        let max_ratio = worst.map_or(0.0, |w| w.1);
        clauses.push(ClauseResult {
            clause: "B3.4 ratio bound".into(),
            passed: max_ratio <= tc.k * (1.0 + 1e-12),
            worst,
            detail: format!("max ratio {max_ratio:.6} vs K = {}", tc.k),
        });
    }

    B3Report {
        loss: spec.name.clone(),
        clauses,
    }
}
