//! Limit-state functions, the benchmark catalogue and analytic references.
//!
//! Every limit-state here is exposed as a *level*: failure is `level > threshold`
//! and movers always push levels upward. Benchmarks whose natural convention is
//! `g(x) < 0` are negated and thresholded at zero. Inputs live in the standard
//! Gaussian space; physical marginals (lognormal) are applied inside the
//! level function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;

/// Law of the level `g(X)` when it is known in closed form.
pub trait LevelLaw: Send + Sync {
    fn cdf(&self, y: f64) -> f64;

    /// Survival function `1 - F(y)`; override when the upper tail needs precision.
    fn sf(&self, y: f64) -> f64 {
        1.0 - self.cdf(y)
    }

    fn pdf(&self, y: f64) -> f64;

    /// Derivative of the pdf, used by the quantile bias bounds.
    fn pdf_prime(&self, _y: f64) -> Option<f64> {
        None
    }

    /// Integrated hazard `Λ(y) = -log(1 - F(y))`.
    fn lambda(&self, y: f64) -> f64 {
        -self.sf(y).ln()
    }

    /// `Λ⁻¹`, when the law supports exact conditional sampling.
    fn inverse_lambda(&self, _t: f64) -> Option<f64> {
        None
    }
}

/// Integrated-hazard view of a level law: maps levels to Poisson time.
#[derive(Clone)]
pub struct HazardView {
    law: Arc<dyn LevelLaw>,
}

impl HazardView {
    pub fn new(law: Arc<dyn LevelLaw>) -> Self {
        Self { law }
    }

    pub fn lambda(&self, y: f64) -> f64 {
        if y == f64::NEG_INFINITY {
            return 0.0;
        }
        self.law.lambda(y)
    }

    pub fn inverse_lambda(&self, t: f64) -> Option<f64> {
        self.law.inverse_lambda(t)
    }

    pub fn has_inverse(&self) -> bool {
        self.law.inverse_lambda(1.0).is_some()
    }

    pub fn law(&self) -> &dyn LevelLaw {
        self.law.as_ref()
    }
}

impl fmt::Debug for HazardView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HazardView")
            .field("invertible", &self.has_inverse())
            .finish()
    }
}

type LevelFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A call-counting limit-state over the standard Gaussian input space.
pub struct LimitState {
    id: String,
    dim: usize,
    threshold: f64,
    level: Box<LevelFn>,
    calls: AtomicU64,
    law: Option<Arc<dyn LevelLaw>>,
}

impl fmt::Debug for LimitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LimitState")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("threshold", &self.threshold)
            .field("calls", &self.call_count())
            .field("analytic", &self.law.is_some())
            .finish()
    }
}

impl LimitState {
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        threshold: f64,
        level: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        assert!(dim > 0, "limit-state dimension must be positive");
        Self {
            id: id.into(),
            dim,
            threshold,
            level: Box::new(level),
            calls: AtomicU64::new(0),
            law: None,
        }
    }

    pub fn with_law(mut self, law: Arc<dyn LevelLaw>) -> Self {
        self.law = Some(law);
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_failure(&self, level: f64) -> bool {
        level > self.threshold
    }

    /// Evaluates the level at `x`, counting the call.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                id: self.id.clone(),
                expected: self.dim,
                got: x.len(),
            });
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let value = (self.level)(x);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Evaluation {
                id: self.id.clone(),
                value,
            })
        }
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// Log-density of the (standard Gaussian) input law, up to a constant.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn law(&self) -> Option<&dyn LevelLaw> {
        self.law.as_deref()
    }

    pub fn analytic_cdf(&self, y: f64) -> Option<f64> {
        self.law.as_ref().map(|l| l.cdf(y))
    }

    pub fn analytic_pdf(&self, y: f64) -> Option<f64> {
        self.law.as_ref().map(|l| l.pdf(y))
    }

    /// Exact failure probability when the level law is known.
    pub fn analytic_probability(&self) -> Option<f64> {
        self.law.as_ref().map(|l| l.sf(self.threshold))
    }

    pub fn hazard(&self) -> Option<HazardView> {
        self.law.clone().map(HazardView::new)
    }
}

/// Lognormal marginal given by its (natural-scale) mean and coefficient of variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalSpec {
    pub mean: f64,
    pub cv: f64,
}

impl LognormalSpec {
    pub fn new(mean: f64, cv: f64) -> Self {
        assert!(mean > 0.0 && cv >= 0.0, "lognormal needs mean > 0 and cv >= 0");
        Self { mean, cv }
    }

    pub fn sigma_log(&self) -> f64 {
        self.cv.powi(2).ln_1p().sqrt()
    }

    pub fn mu_log(&self) -> f64 {
        self.mean.ln() - 0.5 * self.cv.powi(2).ln_1p()
    }

    /// Maps a standard normal coordinate to this lognormal.
    pub fn from_standard(&self, u: f64) -> f64 {
        (self.mu_log() + u * self.sigma_log()).exp()
    }
}

pub fn std_to_lognormal(u: f64, spec: LognormalSpec) -> f64 {
    spec.from_standard(u)
}

// ---------------------------------------------------------------------------
// Watermarking cone

/// `Φ(x) = |xᵀu| / ‖x‖` with `u` the first axis.
pub fn watermark_phi(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    x[0].abs() / norm
}

/// Exact `P(Φ(X) > q)` for `X ~ N(0, I_d)`.
///
/// `Φ² (d-1) / (1-Φ²)` is Fisher(1, d-1), so the tail reduces to
/// `I_{1-q²}((d-1)/2, 1/2)`, which is evaluated directly (no `1 - cdf`).
pub fn watermark_analytic_p(d: usize, q: f64) -> f64 {
    assert!(d >= 2, "watermark needs d >= 2");
    if q <= 0.0 {
        return 1.0;
    }
    if q >= 1.0 {
        return 0.0;
    }
    special::beta_reg((d as f64 - 1.0) / 2.0, 0.5, 1.0 - q * q)
}

#[derive(Debug, Clone, Copy)]
struct WatermarkLaw {
    d: usize,
}

impl LevelLaw for WatermarkLaw {
    fn cdf(&self, y: f64) -> f64 {
        1.0 - self.sf(y)
    }

    fn sf(&self, y: f64) -> f64 {
        watermark_analytic_p(self.d, y)
    }

    fn pdf(&self, y: f64) -> f64 {
        if !(0.0..1.0).contains(&y) {
            return 0.0;
        }
        let a = (self.d as f64 - 1.0) / 2.0;
        2.0 * ((a - 1.0) * (1.0 - y * y).ln() - special::ln_beta(a, 0.5)).exp()
    }

    fn pdf_prime(&self, y: f64) -> Option<f64> {
        if !(0.0..1.0).contains(&y) {
            return Some(0.0);
        }
        let a = (self.d as f64 - 1.0) / 2.0;
        Some(self.pdf(y) * (a - 1.0) * (-2.0 * y) / (1.0 - y * y))
    }

    fn inverse_lambda(&self, t: f64) -> Option<f64> {
        if t <= 0.0 {
            return Some(0.0);
        }
        let d = self.d;
        special::bisect(0.0, 1.0, 1e-15, |y| -watermark_analytic_p(d, y).ln() - t)
    }
}

pub fn watermark(d: usize, threshold: f64) -> LimitState {
    LimitState::new("watermark", d, threshold, watermark_phi).with_law(Arc::new(WatermarkLaw { d }))
}

// ---------------------------------------------------------------------------
// Two-degree-of-freedom damped oscillator

pub const OSCILLATOR_PEAK_FACTOR: f64 = 3.0;

/// Marginals in the order `m_p, m_s, k_p, k_s, ζ_p, ζ_s, F_s, S_0`.
pub fn oscillator_marginals(fs_mean: f64) -> [LognormalSpec; 8] {
    [
        LognormalSpec::new(1.5, 0.10),
        LognormalSpec::new(0.01, 0.10),
        LognormalSpec::new(1.0, 0.20),
        LognormalSpec::new(0.01, 0.20),
        LognormalSpec::new(0.05, 0.40),
        LognormalSpec::new(0.02, 0.50),
        LognormalSpec::new(fs_mean, 0.10),
        LognormalSpec::new(100.0, 0.10),
    ]
}

/// Mean-squared relative displacement of the secondary spring under white noise.
pub fn oscillator_mean_square(phys: &[f64; 8]) -> f64 {
    let [mp, ms, kp, ks, zp, zs, _fs, s0] = *phys;
    let wp = (kp / mp).sqrt();
    let ws = (ks / ms).sqrt();
    let gamma = ms / mp;
    let wa = 0.5 * (wp + ws);
    let za = 0.5 * (zp + zs);
    let theta = (wp - ws) / wa;
    PI * s0 / (4.0 * zs * ws.powi(3))
        * (za * zs / (zp * zs * (4.0 * za * za + theta * theta) + gamma * za * za))
        * ((zp * wp.powi(3) + zs * ws.powi(3)) * wp / (4.0 * za * wa.powi(4)))
}

/// `g(u) = F_s − 3·k_s·√E[x_s²]` in physical convention (failure `g < 0`).
pub fn oscillator_g(u: &[f64], fs_mean: f64) -> f64 {
    let marg = oscillator_marginals(fs_mean);
    let mut phys = [0.0; 8];
    for ((p, &ui), m) in phys.iter_mut().zip(u).zip(marg.iter()) {
        *p = m.from_standard(ui);
    }
    let ks = phys[3];
    let fs = phys[6];
    fs - OSCILLATOR_PEAK_FACTOR * ks * oscillator_mean_square(&phys).sqrt()
}

pub fn oscillator(fs_mean: f64) -> LimitState {
    LimitState::new(format!("oscillator{fs_mean}"), 8, 0.0, move |u| {
        -oscillator_g(u, fs_mean)
    })
}

// ---------------------------------------------------------------------------
// Two-dimensional and concave examples (failure g < 0)

pub fn waarts_g(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let a = 3.0 + 0.1 * (x1 - x2).powi(2) - FRAC_1_SQRT_2 * (x1 + x2).abs();
    let b = 7.0 * FRAC_1_SQRT_2 - (x1 - x2).abs();
    a.min(b)
}

pub fn parabolic_g(x: &[f64]) -> f64 {
    const B: f64 = 5.0;
    const KAPPA: f64 = 0.5;
    const EPS: f64 = 0.1;
    B - x[1] - KAPPA * (x[0] - EPS).powi(2)
}

/// Concave failure domain: `d + aσ√d − Σ exp(−½log(1+σ²) + u_i √log(1+σ²))`.
pub fn concave_g(u: &[f64], a: f64, sigma: f64) -> f64 {
    let d = u.len() as f64;
    let spec = LognormalSpec::new(1.0, sigma);
    d + a * sigma * d.sqrt() - u.iter().map(|&ui| spec.from_standard(ui)).sum::<f64>()
}

pub fn waarts() -> LimitState {
    LimitState::new("waarts", 2, 0.0, |x| -waarts_g(x))
}

pub fn parabolic() -> LimitState {
    LimitState::new("parabolic", 2, 0.0, |x| -parabolic_g(x))
}

pub fn concave(d: usize) -> LimitState {
    LimitState::new(format!("concave{d}"), d, 0.0, |u| -concave_g(u, 3.0, 0.2))
}

// ---------------------------------------------------------------------------
// Toy states with exact hazards (oracle fixtures)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyKind {
    Uniform01,
    Exponential1,
}

#[derive(Debug, Clone, Copy)]
struct UniformLaw;

impl LevelLaw for UniformLaw {
    fn cdf(&self, y: f64) -> f64 {
        y.clamp(0.0, 1.0)
    }
    fn pdf(&self, y: f64) -> f64 {
        if (0.0..=1.0).contains(&y) {
            1.0
        } else {
            0.0
        }
    }
    fn pdf_prime(&self, _y: f64) -> Option<f64> {
        Some(0.0)
    }
    fn lambda(&self, y: f64) -> f64 {
        -(-y.clamp(0.0, 1.0)).ln_1p()
    }
    fn inverse_lambda(&self, t: f64) -> Option<f64> {
        Some(-(-t).exp_m1())
    }
}

#[derive(Debug, Clone, Copy)]
struct ExponentialLaw;

impl LevelLaw for ExponentialLaw {
    fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            0.0
        } else {
            -(-y).exp_m1()
        }
    }
    fn sf(&self, y: f64) -> f64 {
        (-y.max(0.0)).exp()
    }
    fn pdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            0.0
        } else {
            (-y).exp()
        }
    }
    fn pdf_prime(&self, y: f64) -> Option<f64> {
        Some(-self.pdf(y))
    }
    fn lambda(&self, y: f64) -> f64 {
        y.max(0.0)
    }
    fn inverse_lambda(&self, t: f64) -> Option<f64> {
        Some(t)
    }
}

/// One-dimensional toy state with an exact hazard.
///
/// `uniform01` has level `Φ(u)` (uniform on `[0, 1]`, default threshold 0.99);
/// `exponential1` has level `−log(1 − Φ(u))` (Exp(1), default threshold
/// `log 10⁴`).
pub fn toy_ideal_state(kind: ToyKind) -> (LimitState, HazardView) {
    let ls = match kind {
        ToyKind::Uniform01 => {
            LimitState::new("toy-uniform", 1, 0.99, |u| special::normal_cdf(u[0]))
                .with_law(Arc::new(UniformLaw))
        }
        ToyKind::Exponential1 => LimitState::new("toy-exp", 1, 1e4f64.ln(), |u| {
            -special::normal_sf(u[0]).ln()
        })
        .with_law(Arc::new(ExponentialLaw)),
    };
    let hazard = ls.hazard().expect("toy states carry a law");
    (ls, hazard)
}

// ---------------------------------------------------------------------------
// Catalogue

/// Benchmarks selectable by string id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Benchmark {
    Watermark,
    Oscillator15,
    Oscillator21_5,
    Oscillator27_5,
    Waarts,
    Parabolic,
    Concave2,
    Concave20,
    Concave50,
    ToyUniform,
    ToyExp,
}

impl Benchmark {
    pub const ALL: [Benchmark; 11] = [
        Benchmark::Watermark,
        Benchmark::Oscillator15,
        Benchmark::Oscillator21_5,
        Benchmark::Oscillator27_5,
        Benchmark::Waarts,
        Benchmark::Parabolic,
        Benchmark::Concave2,
        Benchmark::Concave20,
        Benchmark::Concave50,
        Benchmark::ToyUniform,
        Benchmark::ToyExp,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Benchmark::Watermark => "watermark",
            Benchmark::Oscillator15 => "oscillator15",
            Benchmark::Oscillator21_5 => "oscillator21.5",
            Benchmark::Oscillator27_5 => "oscillator27.5",
            Benchmark::Waarts => "waarts",
            Benchmark::Parabolic => "parabolic",
            Benchmark::Concave2 => "concave2",
            Benchmark::Concave20 => "concave20",
            Benchmark::Concave50 => "concave50",
            Benchmark::ToyUniform => "toy-uniform",
            Benchmark::ToyExp => "toy-exp",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Benchmark::Watermark | Benchmark::Concave20 => 20,
            Benchmark::Oscillator15 | Benchmark::Oscillator21_5 | Benchmark::Oscillator27_5 => 8,
            Benchmark::Waarts | Benchmark::Parabolic | Benchmark::Concave2 => 2,
            Benchmark::Concave50 => 50,
            Benchmark::ToyUniform | Benchmark::ToyExp => 1,
        }
    }

    /// Builds a fresh limit-state (call counter at zero) with its default threshold.
    pub fn limit_state(self) -> LimitState {
        match self {
            Benchmark::Watermark => watermark(20, 0.95),
            Benchmark::Oscillator15 => oscillator(15.0),
            Benchmark::Oscillator21_5 => oscillator(21.5),
            Benchmark::Oscillator27_5 => oscillator(27.5),
            Benchmark::Waarts => waarts(),
            Benchmark::Parabolic => parabolic(),
            Benchmark::Concave2 => concave(2),
            Benchmark::Concave20 => concave(20),
            Benchmark::Concave50 => concave(50),
            Benchmark::ToyUniform => toy_ideal_state(ToyKind::Uniform01).0,
            Benchmark::ToyExp => toy_ideal_state(ToyKind::Exponential1).0,
        }
    }

    /// Best available reference probability at the default threshold: exact for the
    /// watermark and toy states, published reference estimates otherwise.
    pub fn reference_probability(self) -> f64 {
        match self {
            Benchmark::Watermark => watermark_analytic_p(20, 0.95),
            Benchmark::Oscillator15 => 4.8015e-3,
            Benchmark::Oscillator21_5 => 4.34e-5,
            Benchmark::Oscillator27_5 => 3.745e-7,
            Benchmark::ToyUniform => 0.01,
            Benchmark::ToyExp => 1e-4,
            other => other.doe_table_probability(),
        }
    }

    /// Probability column of the first-DoE benchmark table.
    pub fn doe_table_probability(self) -> f64 {
        match self {
            Benchmark::Waarts => 2.275e-3,
            Benchmark::Parabolic => 2.946e-3,
            Benchmark::Concave2 => 4.821e-3,
            Benchmark::Concave20 => 2.273e-3,
            Benchmark::Concave50 => 1.861e-3,
            Benchmark::Oscillator15 => 4.802e-3,
            Benchmark::Oscillator21_5 => 4.46e-5,
            Benchmark::Oscillator27_5 => 3.76e-7,
            Benchmark::Watermark => 4.704e-11,
            Benchmark::ToyUniform => 0.01,
            Benchmark::ToyExp => 1e-4,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .iter()
            .copied()
            .find(|b| b.id() == s)
            .ok_or_else(|| Error::UnknownBenchmark(s.to_string()))
    }
}

impl TryFrom<String> for Benchmark {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Benchmark> for String {
    fn from(b: Benchmark) -> String {
        b.id().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn watermark_phi_on_axis_and_orthogonal() {
        let ls = watermark(5, 0.95);
        assert_eq!(ls.eval(&[2.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ls.eval(&[0.0, 1.0, -3.0, 0.0, 0.5]).unwrap(), 0.0);
        assert_eq!(ls.call_count(), 2);
    }

    #[test]
    fn waarts_and_parabolic_at_origin() {
        assert!((waarts_g(&[0.0, 0.0]) - 3.0).abs() < 1e-15);
        assert!((parabolic_g(&[0.0, 0.0]) - 4.995).abs() < 1e-15);
        // the mover sees negated values
        assert!((waarts().eval(&[0.0, 0.0]).unwrap() + 3.0).abs() < 1e-15);
    }

    #[test]
    fn concave_two_dim_at_origin() {
        let expected = 2.0 + 3.0 * 0.2 * 2f64.sqrt() - 2.0 * (-0.5 * 1.04f64.ln()).exp();
        assert!((concave_g(&[0.0, 0.0], 3.0, 0.2) - expected).abs() < 1e-14);
        assert!((concave_g(&[0.0, 0.0], 3.0, 0.2) - 0.8874).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch_is_rejected_and_not_counted() {
        let ls = waarts();
        assert!(matches!(
            ls.eval(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1, .. })
        ));
        assert_eq!(ls.call_count(), 0);
    }

    #[test]
    fn watermark_reference_value() {
        let p = watermark_analytic_p(20, 0.95);
        assert!((p / 4.704e-11 - 1.0).abs() < 1e-3, "p = {p:e}");
        assert!((watermark_analytic_p(2, 1e-12) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn watermark_hazard_inverts() {
        let h = watermark(20, 0.95).hazard().unwrap();
        for &t in &[0.1, 2.0, 10.0, 23.78] {
            let y = h.inverse_lambda(t).unwrap();
            assert!((h.lambda(y) - t).abs() < 1e-6 * t.max(1.0), "t = {t}");
        }
    }

    #[test]
    fn watermark_pdf_integrates_to_cdf() {
        let law = WatermarkLaw { d: 20 };
        let (a, b) = (0.3, 0.6);
        let n = 2000;
        let h = (b - a) / n as f64;
        let mut s = law.pdf(a) + law.pdf(b);
        for i in 1..n {
            s += law.pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        assert!((integral - (law.cdf(b) - law.cdf(a))).abs() < 1e-9);
    }

    #[test]
    fn watermark_mc_cross_check_at_half() {
        // naive MC oracle: P(Φ(X) > 0.5), d = 20
        let exact = watermark_analytic_p(20, 0.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 10_000_000usize;
        let mut x = [0.0f64; 20];
        let mut hits = 0usize;
        for _ in 0..n {
            for v in x.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            if watermark_phi(&x) > 0.5 {
                hits += 1;
            }
        }
        let est = hits as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((est - exact).abs() < 4.0 * se, "est {est:e} exact {exact:e}");
    }

    #[test]
    fn lognormal_parameters() {
        let spec = LognormalSpec::new(1.0, 0.2);
        assert!((std_to_lognormal(0.0, spec) - (-0.5 * 1.04f64.ln()).exp()).abs() < 1e-15);
        assert!((std_to_lognormal(0.0, spec) - 0.98058).abs() < 1e-5);
        assert!((std_to_lognormal(0.0, LognormalSpec::new(1.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!((spec.sigma_log().powi(2) - 1.04f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lognormal_moments_by_sampling() {
        let spec = LognormalSpec::new(100.0, 0.1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| spec.from_standard(StandardNormal.sample(&mut rng)))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean / spec.mean - 1.0).abs() < 0.005);
        assert!((var.sqrt() / mean / spec.cv - 1.0).abs() < 0.01);
    }

    #[test]
    fn oscillator_median_point_is_safe() {
        for fs in [15.0, 21.5, 27.5] {
            let g = oscillator_g(&[0.0; 8], fs);
            assert!(g > 0.0, "Fs = {fs}: g = {g}");
        }
        let ls = oscillator(15.0);
        assert!(!ls.is_failure(ls.eval(&[0.0; 8]).unwrap()));
    }

    #[test]
    fn oscillator_zero_mass_is_an_evaluation_error() {
        let ls = LimitState::new("degenerate", 8, 0.0, |_| {
            let mut phys = [1.5, 0.0, 1.0, 0.01, 0.05, 0.02, 15.0, 100.0];
            phys[1] = 0.0;
            -(15.0 - 3.0 * 0.01 * oscillator_mean_square(&phys).sqrt())
        });
        assert!(matches!(ls.eval(&[0.0; 8]), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn toy_states() {
        let (u, hu) = toy_ideal_state(ToyKind::Uniform01);
        assert!((hu.lambda(0.9) - 2.302_585_092_994_046).abs() < 1e-12);
        assert_eq!(u.dim(), 1);
        let (e, he) = toy_ideal_state(ToyKind::Exponential1);
        let p = 1e-6f64;
        let q = -p.ln();
        assert!((q - 13.815_510_557_964_274).abs() < 1e-12);
        assert!((he.inverse_lambda(-p.ln()).unwrap() - q).abs() < 1e-12);
        assert!((e.analytic_pdf(q).unwrap() - p).abs() < 1e-18);
        // level function agrees with the law: Φ(u) tail at u = 3
        let lvl = e.eval(&[3.0]).unwrap();
        assert!((lvl - (-special::normal_sf(3.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn catalogue_ids_round_trip() {
        for b in Benchmark::ALL {
            assert_eq!(b.id().parse::<Benchmark>().unwrap(), b);
            assert_eq!(b.limit_state().dim(), b.dim());
        }
        assert!("nope".parse::<Benchmark>().is_err());
    }

    #[test]
    fn concurrent_calls_are_counted_exactly() {
        let ls = std::sync::Arc::new(waarts());
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let ls = ls.clone();
                std::thread::spawn(move || {
                    for i in 0..10_000 {
                        ls.eval(&[i as f64 * 1e-4, 0.0]).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(ls.call_count(), 40_000);
    }
}
