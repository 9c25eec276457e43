//! Probability estimation from total move counts, and the cost models used to
//! plan runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run_workers;
use crate::kernel::KernelConfig;
use crate::limit_state::LimitState;
use crate::mover::{EventLog, IdealSampler, McmcSampler, Population, Sampler, Stop};
use crate::rng::Stream;
use crate::special::{bisect, z_two_sided};

/// How conditional samples are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "sampler")]
pub enum Sampling {
    Mcmc(KernelConfig),
    /// Exact sampling through the inverse integrated hazard.
    Ideal,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Mcmc(KernelConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub p_hat: f64,
    pub ci: [f64; 2],
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_calls: u64,
    pub per_worker_calls: Vec<u64>,
    pub seed: u64,
}

impl ProbEstimate {
    /// Calls made by the busiest worker: the run's effective computing time.
    pub fn effective_calls(&self) -> u64 {
        self.per_worker_calls.iter().copied().max().unwrap_or(0)
    }
}

/// `(1 − 1/KN)^M`.
pub fn estimate_p(m: u64, k: usize, n: usize) -> Result<f64> {
    let kn = (k as f64) * (n as f64);
    if kn < 2.0 {
        return Err(Error::InvalidConfig(format!("K·N must be at least 2, got {kn}")));
    }
    Ok((m as f64 * (-1.0 / kn).ln_1p()).exp())
}

/// Variance `p²(p^{−1/N} − 1)` of the estimator.
pub fn variance_p(p: f64, n_tot: usize) -> f64 {
    p * p * (-(p.ln()) / n_tot as f64).exp_m1()
}

/// Cramér-Rao reference `−p² log p / N`.
pub fn cramer_rao(p: f64, n_tot: usize) -> f64 {
    -p * p * p.ln() / n_tot as f64
}

/// Asymptotic `1 − α` confidence interval.
pub fn ci_p(p_hat: f64, n_tot: usize, alpha: f64) -> Result<[f64; 2]> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(p_hat > 0.0 && p_hat <= 1.0) {
        return Err(Error::InvalidConfig(format!("p_hat must lie in (0,1], got {p_hat}")));
    }
    let z = z_two_sided(alpha);
    let n = n_tot as f64;
    let t = -p_hat.ln();
    let z2n = z * z / n;
    let delta = z2n * (t + z2n / 4.0);
    let centre = p_hat * (-z2n / 2.0).exp();
    Ok([centre * (-delta.sqrt()).exp(), centre * delta.sqrt().exp()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbConfig {
    pub n: usize,
    pub n_c: usize,
    pub sampling: Sampling,
    pub alpha: f64,
    pub seed: u64,
    /// Replication index mixed into the worker streams.
    pub rep: u64,
    /// Move this many lowest particles at once (1 means strictly sequential).
    pub batch: usize,
    pub parallel: bool,
}

impl Default for ProbConfig {
    fn default() -> Self {
        Self {
            n: 100,
            n_c: 1,
            sampling: Sampling::default(),
            alpha: 0.05,
            seed: 0,
            rep: 0,
            batch: 1,
            parallel: true,
        }
    }
}

impl ProbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 && self.n_c * self.n < 2 {
            return Err(Error::InvalidConfig("need at least 2 particles in total".into()));
        }
        if self.n_c == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("N and the worker count must be positive".into()));
        }
        if self.batch == 0 || (self.batch > 1 && self.batch >= self.n) {
            return Err(Error::InvalidConfig(format!(
                "batch size must satisfy 1 ≤ k ≤ N−1, got k={}, N={}",
                self.batch, self.n
            )));
        }
        if let Sampling::Mcmc(k) = &self.sampling {
            k.validate()?;
        }
        if self.n < 10 {
            tracing::warn!(n = self.n, "fewer than 10 particles per worker");
        }
        Ok(())
    }
}

/// Runs a population to `stop` with the configured batching.
pub(crate) fn descend<S: Sampler>(sampler: &S, n: usize, batch: usize, stop: Stop, rng: &mut Stream) -> Result<EventLog> {
    let mut pop = Population::new(sampler, n, rng)?;
    if batch > 1 {
        pop.run_batched(batch, stop, rng)?;
    } else {
        pop.run(stop, rng)?;
    }
    Ok(pop.into_log())
}

/// Runs `n_c` independent descents to the threshold of `ls` and combines them.
pub fn run_probability_with(ls: &LimitState, cfg: &ProbConfig) -> Result<ProbEstimate> {
    cfg.validate()?;
    let stop = Stop::Level(ls.threshold());
    let logs = match cfg.sampling {
        Sampling::Mcmc(kernel) => {
            let sampler = McmcSampler::new(ls, kernel)?;
            run_workers(cfg.n_c, cfg.seed, cfg.rep, cfg.parallel, |_, rng| {
                descend(&sampler, cfg.n, cfg.batch, stop, rng)
            })?
        }
        Sampling::Ideal => {
            let hazard = ls.hazard().ok_or_else(|| Error::Unsupported(ls.id().to_string()))?;
            let sampler = IdealSampler::new(hazard)?;
            run_workers(cfg.n_c, cfg.seed, cfg.rep, cfg.parallel, |_, rng| {
                descend(&sampler, cfg.n, cfg.batch, stop, rng)
            })?
        }
    };
    combine(&logs, cfg)
}

fn combine(logs: &[EventLog], cfg: &ProbConfig) -> Result<ProbEstimate> {
    let m: u64 = logs.iter().map(|l| l.total_moves).sum();
    let p_hat = estimate_p(m, cfg.n_c, cfg.n)?;
    let per_worker_calls: Vec<u64> = logs.iter().map(EventLog::n_calls).collect();
    Ok(ProbEstimate {
        p_hat,
        ci: ci_p(p_hat, cfg.n_c * cfg.n, cfg.alpha)?,
        m,
        k: cfg.n_c,
        n: cfg.n,
        n_calls: per_worker_calls.iter().sum(),
        per_worker_calls,
        seed: cfg.seed,
    })
}

/// Probability estimate with Markov-chain sampling on `n_c` parallel workers.
pub fn run_probability(
    ls: &LimitState,
    n: usize,
    n_c: usize,
    kernel: &KernelConfig,
    alpha: f64,
    seed: u64,
) -> Result<ProbEstimate> {
    run_probability_with(
        ls,
        &ProbConfig {
            n,
            n_c,
            sampling: Sampling::Mcmc(*kernel),
            alpha,
            seed,
            ..ProbConfig::default()
        },
    )
}

// ---------------------------------------------------------------------------
// Cost models

/// Inputs of the computing-time comparisons; times are counted in limit-state
/// calls on one core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub p: f64,
    /// Target coefficient of variation.
    pub delta: f64,
    pub n_c: usize,
    pub burn_in: usize,
    /// Level probability of the fixed-level splitting comparison.
    pub p0: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p > 0.0
            && self.p < 1.0
            && self.delta > 0.0
            && self.n_c > 0
            && self.burn_in > 0
            && self.p0 > 0.0
            && self.p0 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid cost model {self:?}")))
        }
    }

    fn log_p2(&self) -> f64 {
        self.p.ln().powi(2)
    }

    fn nc_delta2(&self) -> f64 {
        self.n_c as f64 * self.delta * self.delta
    }
}

/// Crude Monte Carlo: `⌈1/(n_c δ² p)⌉`.
pub fn t_mc(cm: &CostModel) -> f64 {
    (1.0 / (cm.nc_delta2() * cm.p)).ceil()
}

/// Number of particles fixed-level splitting needs at `p0` to reach CV `δ`.
pub fn ms_particles(cm: &CostModel) -> f64 {
    let r = cm.p.ln() / cm.p0.ln();
    r * (1.0 - cm.p0) / (cm.delta * cm.delta * cm.p0)
}

/// Fixed-level splitting: each of the `log p/log p0` levels resamples
/// `N(1−p0)` particles, spread over `n_c` cores but never less than one
/// burn-in per level.
pub fn t_ms(cm: &CostModel) -> f64 {
    let r = cm.p.ln() / cm.p0.ln();
    let per_level = (ms_particles(cm) * (1.0 - cm.p0) / cm.n_c as f64).max(1.0);
    cm.burn_in as f64 * r * per_level
}

/// Leading-order parallel moving-particles time `T(log p)²/(n_c δ²)`.
pub fn t_par(cm: &CostModel) -> f64 {
    cm.burn_in as f64 * cm.log_p2() / cm.nc_delta2()
}

/// Expected parallel time including the slowest-worker and initial-draw terms.
pub fn t_par_expected(cm: &CostModel) -> f64 {
    let nc = cm.n_c as f64;
    let spread = if cm.n_c > 1 {
        (cm.nc_delta2() / cm.log_p2()).sqrt() * (2.0 * nc.ln()).sqrt()
    } else {
        0.0
    };
    t_par(cm) * (1.0 + spread + 1.0 / (cm.burn_in as f64 * (-cm.p.ln())))
}

/// Level probability at which fixed-level splitting uses exactly `n_c` fresh
/// particles per level, which minimizes [`t_ms`].
pub fn optimal_p0(cm: &CostModel) -> Result<f64> {
    let (lp, d2, nc) = (cm.p.ln(), cm.delta * cm.delta, cm.n_c as f64);
    let f = |p0: f64| (lp / p0.ln()) * (1.0 - p0).powi(2) / (d2 * p0) - nc;
    let (lo, hi) = (1e-12, 1.0 - 1e-12);
    if f(lo).signum() == f(hi).signum() {
        return Err(Error::Planner(format!(
            "no level probability in (0,1) balances {nc} cores at δ={}: f(0⁺)={:.3e}, f(1⁻)={:.3e}",
            cm.delta,
            f(lo),
            f(hi)
        )));
    }
    bisect(lo, hi, 1e-10, f).ok_or_else(|| Error::Planner("bisection did not converge".into()))
}

/// CV of fixed-level splitting: `δ² ≈ (log p/log p0)(1−p0)/(N p0)`.
pub fn delta_ms(p: f64, p0: f64, n: f64) -> f64 {
    ((p.ln() / p0.ln()) * (1.0 - p0) / (n * p0)).sqrt()
}

/// CV of the moving-particles estimator with `n_tot` particles.
pub fn delta_mp(p: f64, n_tot: usize) -> f64 {
    (-p.ln() / n_tot as f64).sqrt()
}

/// Total particles needed by moving particles to reach CV `δ`.
pub fn particles_for_delta(p: f64, delta: f64) -> usize {
    (-p.ln() / (delta * delta)).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub model: CostModel,
    pub n_tot: usize,
    pub t_mc: f64,
    pub t_ms: f64,
    pub t_par: f64,
    pub t_par_expected: f64,
    pub p0_star: Option<f64>,
    pub t_ms_at_p0_star: Option<f64>,
    pub par_over_mc: f64,
}

pub fn plan(cm: &CostModel) -> Result<PlanReport> {
    cm.validate()?;
    let p0_star = optimal_p0(cm).ok();
    Ok(PlanReport {
        model: *cm,
        n_tot: particles_for_delta(cm.p, cm.delta),
        t_mc: t_mc(cm),
        t_ms: t_ms(cm),
        t_par: t_par(cm),
        t_par_expected: t_par_expected(cm),
        p0_star,
        t_ms_at_p0_star: p0_star.map(|p0| t_ms(&CostModel { p0, ..*cm })),
        par_over_mc: t_par(cm) / t_mc(cm),
    })
}
