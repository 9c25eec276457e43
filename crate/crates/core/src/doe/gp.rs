//! Gaussian-process regression with a fixed constant trend (simple kriging).
//!
//! Covariance: `σ² exp(−½ Σ_k (Δ_k/ℓ_k)²)` plus a small nugget on the diagonal.
//! The process variance is profiled out of the likelihood, leaving the length
//! scales to a bounded quasi-Newton search over their logarithms.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpOptions {
    pub restarts: usize,
    pub nugget: f64,
    pub max_iter: usize,
    /// Largest nugget tried when the covariance is numerically singular.
    pub max_nugget: f64,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            nugget: 1e-8,
            max_iter: 100,
            max_nugget: 1e-4,
        }
    }
}

/// Exportable hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub trend: f64,
    pub length_scales: Vec<f64>,
    pub process_sd: f64,
    pub nugget: f64,
    pub neg_log_likelihood: f64,
    pub n_points: usize,
}

#[derive(Clone)]
pub struct GpModel {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    hyper: GpHyper,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl std::fmt::Debug for GpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpModel").field("hyper", &self.hyper).finish()
    }
}

/// Pairwise squared coordinate differences, stored per dimension for `i < j`.
struct Geometry {
    n: usize,
    d: usize,
    diff2: Vec<f64>,
}

impl Geometry {
    fn new(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let d = points.first().map_or(0, Vec::len);
        let pairs = n * n.saturating_sub(1) / 2;
        let mut diff2 = vec![0.0; pairs * d];
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                for k in 0..d {
                    diff2[idx * d + k] = (points[i][k] - points[j][k]).powi(2);
                }
                idx += 1;
            }
        }
        Self { n, d, diff2 }
    }

    /// Correlation matrix without nugget.
    fn correlation(&self, inv_l2: &[f64]) -> DMatrix<f64> {
        let mut r = DMatrix::identity(self.n, self.n);
        let mut idx = 0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let e: f64 = self.diff2[idx * self.d..(idx + 1) * self.d]
                    .iter()
                    .zip(inv_l2)
                    .map(|(a, b)| a * b)
                    .sum();
                let c = (-0.5 * e).exp();
                r[(i, j)] = c;
                r[(j, i)] = c;
                idx += 1;
            }
        }
        r
    }
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    nugget: f64,
}

fn factor(mut r: DMatrix<f64>, nugget: f64, max_nugget: f64) -> Option<Factor> {
    let n = r.nrows();
    let mut nug = nugget;
    for i in 0..n {
        r[(i, i)] += nug;
    }
    loop {
        if let Some(chol) = r.clone().cholesky() {
            return Some(Factor { chol, nugget: nug });
        }
        let next = nug * 10.0;
        if next > max_nugget {
            return None;
        }
        for i in 0..n {
            r[(i, i)] += next - nug;
        }
        nug = next;
    }
}

/// Profiled negative log-likelihood and its gradient in log length scales.
fn nll_grad(geo: &Geometry, resid: &DVector<f64>, theta: &[f64], opts: &GpOptions, want_grad: bool) -> Option<(f64, Vec<f64>)> {
    let n = geo.n as f64;
    let inv_l2: Vec<f64> = theta.iter().map(|t| (-2.0 * t).exp()).collect();
    let corr = geo.correlation(&inv_l2);
    let f = factor(corr.clone(), opts.nugget, opts.max_nugget)?;
    let alpha = f.chol.solve(resid);
    let s = resid.dot(&alpha).max(1e-300);
    let log_det: f64 = f.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let nll = 0.5 * n * (s / n).ln() + log_det;
    if !want_grad {
        return Some((nll, Vec::new()));
    }
    let rinv = f.chol.inverse();
    let c = n / s;
    let mut grad = vec![0.0; geo.d];
    let mut idx = 0;
    for i in 0..geo.n {
        for j in (i + 1)..geo.n {
            let w = rinv[(i, j)] - c * alpha[i] * alpha[j];
            let kij = corr[(i, j)];
            let base = &geo.diff2[idx * geo.d..(idx + 1) * geo.d];
            for k in 0..geo.d {
                // ∂R_ij/∂θ_k = R_ij Δ²/ℓ², counted twice by symmetry, halved by ½
                grad[k] += w * kij * base[k] * inv_l2[k];
            }
            idx += 1;
        }
    }
    Some((nll, grad))
}

/// Bounded BFGS on a box; infeasible evaluations count as `+∞`.
fn minimize(
    f: &dyn Fn(&[f64], bool) -> Option<(f64, Vec<f64>)>,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iter: usize,
) -> Option<(Vec<f64>, f64)> {
    let d = x0.len();
    let clamp = |x: &mut [f64]| {
        for k in 0..d {
            x[k] = x[k].clamp(lower[k], upper[k]);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let (mut fx, mut g) = f(&x, true)?;
    let mut h = DMatrix::<f64>::identity(d, d);
    for _ in 0..max_iter {
        let free: Vec<bool> = (0..d)
            .map(|k| !((x[k] <= lower[k] && g[k] > 0.0) || (x[k] >= upper[k] && g[k] < 0.0)))
            .collect();
        let gv = DVector::from_iterator(d, (0..d).map(|k| if free[k] { g[k] } else { 0.0 }));
        if gv.norm() < 1e-6 {
            break;
        }
        let mut dir = -(&h * &gv);
        for k in 0..d {
            if !free[k] {
                dir[k] = 0.0;
            }
        }
        if dir.dot(&gv) >= 0.0 {
            h = DMatrix::identity(d, d);
            dir = -gv.clone();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut xn: Vec<f64> = (0..d).map(|k| x[k] + step * dir[k]).collect();
            clamp(&mut xn);
            let dx: f64 = (0..d).map(|k| (xn[k] - x[k]) * gv[k]).sum();
            if let Some((fn_, _)) = f(&xn, false) {
                if fn_.is_finite() && fn_ <= fx + 1e-4 * dx {
                    accepted = Some((xn, fn_));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else { break };
        let (_, gn) = f(&xn, true)?;
        let s = DVector::from_iterator(d, (0..d).map(|k| xn[k] - x[k]));
        let y = DVector::from_iterator(d, (0..d).map(|k| gn[k] - g[k]));
        let sy = s.dot(&y);
        let improvement = fx - fn_;
        x = xn;
        g = gn;
        fx = fn_;
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let a = &i - rho * &s * y.transpose();
            let b = &i - rho * &y * s.transpose();
            h = &a * &h * &b + rho * &s * s.transpose();
        }
        if improvement.abs() < 1e-9 * (1.0 + fx.abs()) {
            break;
        }
    }
    Some((x, fx))
}

fn ranges(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    (0..d)
        .map(|k| {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[k]), b.max(p[k])));
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        })
        .collect()
}

/// Best common multiple of the input ranges on a log grid over `[1e-2, 1e1]`.
fn isotropic_start(points: &[Vec<f64>], values: &[f64], trend: f64, opts: &GpOptions, range: &[f64]) -> Option<Vec<f64>> {
    let resid = DVector::from_iterator(values.len(), values.iter().map(|v| v - trend));
    let geo = Geometry::new(points);
    (0..=12)
        .filter_map(|i| {
            let shift = 1e-2f64.ln() + (1e3f64.ln()) * i as f64 / 12.0;
            let theta: Vec<f64> = range.iter().map(|r| r.ln() + shift).collect();
            let (nll, _) = nll_grad(&geo, &resid, &theta, opts, false)?;
            nll.is_finite().then_some((theta, nll))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(t, _)| t)
}

fn check_inputs(points: &[Vec<f64>], values: &[f64]) -> Result<usize> {
    if points.is_empty() || points.len() != values.len() {
        return Err(Error::Gp(format!(
            "{} points and {} values",
            points.len(),
            values.len()
        )));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Gp("points must share a positive dimension".into()));
    }
    if points.len() < d + 1 {
        return Err(Error::Gp(format!("need at least {} points in dimension {d}", d + 1)));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Gp("non-finite training value".into()));
    }
    Ok(d)
}

impl GpModel {
    /// Maximum-likelihood fit with multi-start search over log-uniform initial
    /// scales in `[1e-2, 1e1]` times each input's range.
    pub fn fit<R: Rng + ?Sized>(points: &[Vec<f64>], values: &[f64], trend: f64, opts: &GpOptions, rng: &mut R) -> Result<Self> {
        let d = check_inputs(points, values)?;
        let range = ranges(points);
        let mut starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
            .map(|_| {
                range
                    .iter()
                    .map(|r| r.ln() + rng.random_range(1e-2f64.ln()..1e1f64.ln()))
                    .collect()
            })
            .collect();
        if let Some(iso) = isotropic_start(points, values, trend, opts, &range) {
            starts.push(iso);
        }
        Self::optimize(points, values, trend, opts, &starts, d)
    }

    /// Local refit started from this model's scales.
    pub fn refit(&self, points: &[Vec<f64>], values: &[f64], opts: &GpOptions) -> Result<Self> {
        let d = check_inputs(points, values)?;
        let start: Vec<f64> = self.hyper.length_scales.iter().map(|l| l.ln()).collect();
        Self::optimize(points, values, self.hyper.trend, opts, &[start], d)
    }

    /// Same hyperparameters, new training data.
    pub fn condition(&self, points: &[Vec<f64>], values: &[f64], opts: &GpOptions) -> Result<Self> {
        check_inputs(points, values)?;
        Self::build(points, values, self.hyper.trend, &self.hyper.length_scales, opts)
    }

    fn optimize(points: &[Vec<f64>], values: &[f64], trend: f64, opts: &GpOptions, starts: &[Vec<f64>], d: usize) -> Result<Self> {
        let resid = DVector::from_iterator(values.len(), values.iter().map(|v| v - trend));
        let range = ranges(points);
        if resid.amax() < 1e-300 {
            // no signal about the trend: keep scales at the input range
            return Self::build(points, values, trend, &range, opts);
        }
        let geo = Geometry::new(points);
        let lower: Vec<f64> = range.iter().map(|r| (r * 1e-3).ln()).collect();
        let upper: Vec<f64> = range.iter().map(|r| (r * 1e2).ln()).collect();
        let f = |t: &[f64], g: bool| nll_grad(&geo, &resid, t, opts, g);
        let best = starts
            .iter()
            .filter_map(|s| minimize(&f, s, &lower, &upper, opts.max_iter))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((theta, _)) = best else {
            return Err(Error::Gp(format!(
                "covariance not positive definite for any start ({} points, d={d}, nugget ≤ {})",
                points.len(),
                opts.max_nugget
            )));
        };
        let scales: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        Self::build(points, values, trend, &scales, opts)
    }

    fn build(points: &[Vec<f64>], values: &[f64], trend: f64, scales: &[f64], opts: &GpOptions) -> Result<Self> {
        let n = points.len();
        let resid = DVector::from_iterator(n, values.iter().map(|v| v - trend));
        let geo = Geometry::new(points);
        let inv_l2: Vec<f64> = scales.iter().map(|l| l.powi(-2)).collect();
        let f = factor(geo.correlation(&inv_l2), opts.nugget, opts.max_nugget).ok_or_else(|| {
            Error::Gp(format!(
                "covariance not positive definite ({n} points, nugget escalated to {})",
                opts.max_nugget
            ))
        })?;
        let alpha = f.chol.solve(&resid);
        let s = resid.dot(&alpha).max(0.0);
        let log_det: f64 = f.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let nll = if s > 0.0 {
            0.5 * n as f64 * (s / n as f64).ln() + log_det
        } else {
            f64::NEG_INFINITY
        };
        Ok(Self {
            points: points.to_vec(),
            values: values.to_vec(),
            hyper: GpHyper {
                trend,
                length_scales: scales.to_vec(),
                process_sd: (s / n as f64).sqrt(),
                nugget: f.nugget,
                neg_log_likelihood: nll,
                n_points: n,
            },
            chol: Some(f.chol),
            alpha,
        })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Correlations with the training points; the nugget belongs to the kernel,
    /// so a training point is reproduced exactly.
    fn cross(&self, x: &[f64]) -> DVector<f64> {
        let inv_l2: Vec<f64> = self.hyper.length_scales.iter().map(|l| l.powi(-2)).collect();
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| {
                let e: f64 = p
                    .iter()
                    .zip(x)
                    .zip(&inv_l2)
                    .map(|((a, b), w)| (a - b).powi(2) * w)
                    .sum();
                if e == 0.0 {
                    1.0 + self.hyper.nugget
                } else {
                    (-0.5 * e).exp()
                }
            }),
        )
    }

    /// Posterior mean.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.hyper.trend + self.cross(x).dot(&self.alpha)
    }

    /// Posterior variance.
    pub fn predict_var(&self, x: &[f64]) -> f64 {
        let c = self.cross(x);
        let Some(chol) = &self.chol else { return 0.0 };
        let v = chol.solve(&c);
        (self.hyper.process_sd.powi(2) * (1.0 - c.dot(&v))).max(0.0)
    }
}

/// Fit with default options and a fixed search seed.
pub fn fit_gp(points: &[Vec<f64>], values: &[f64], trend: f64) -> Result<GpModel> {
    let mut rng = crate::rng::stream(0x6770, 0, 0);
    GpModel::fit(points, values, trend, &GpOptions::default(), &mut rng)
}
