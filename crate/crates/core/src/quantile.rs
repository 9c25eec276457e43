//! Extreme quantile estimation from the merged event sequence of parallel
//! descents.
//!
//! With `N_tot` particles in total, the `M`-th smallest merged level with
//! `M = ⌈−N_tot log p⌉` sits near the `p`-quantile of the level law. Only events
//! below the lowest current level of every worker are known to be complete, so
//! the runners keep descending until enough complete events exist.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit_state::{LevelLaw, LimitState};
use crate::mover::{merge_logs, EventLog, IdealSampler, McmcSampler, Population, Sampler, Stop};
use crate::probability::Sampling;
use crate::rng::{stream, Stream};
use crate::special::z_two_sided;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMode {
    #[default]
    #[serde(rename = "2pass")]
    TwoPass,
    #[serde(rename = "seq")]
    Sequential,
}

impl std::str::FromStr for QuantileMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2pass" | "two-pass" | "two_pass" => Ok(Self::TwoPass),
            "seq" | "sequential" => Ok(Self::Sequential),
            other => Err(Error::InvalidConfig(format!("unknown quantile mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    /// `None` when a two-pass run fell short and no top-up was requested.
    pub q_hat: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub p: f64,
    /// Counted moves summed over workers.
    #[serde(rename = "M")]
    pub total_moves: u64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_calls: u64,
    pub per_worker_calls: Vec<u64>,
    pub seed: u64,
    pub m: usize,
    pub m0: Option<u64>,
    pub alpha_risk: f64,
    /// Complete events available when the main algorithm finished (before any top-up).
    pub events_obtained: usize,
    pub shortfall: bool,
    pub ci_indices: [usize; 2],
    /// Complete events used for the estimate, top-up included.
    pub events_complete: usize,
    /// Largest number of counted moves made by a single worker.
    pub iterations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileDiagnostics {
    pub clt_sd: f64,
    pub bias_lower: f64,
    pub bias_upper: f64,
    pub gamma_q: f64,
    pub expected_iters: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileConfig {
    pub p: f64,
    pub n: usize,
    pub n_c: usize,
    pub mode: QuantileMode,
    pub sampling: Sampling,
    /// Confidence level parameter of the interval.
    pub alpha: f64,
    /// Risk of a two-pass shortfall, used to size `m0`.
    pub alpha_risk: f64,
    /// Overrides the computed per-worker move budget of the first pass.
    pub m0: Option<u64>,
    /// Continue after a two-pass shortfall until enough events exist.
    pub topup: bool,
    /// Keep descending until the upper confidence index is complete.
    pub extend_for_ci: bool,
    pub seed: u64,
    pub rep: u64,
    pub parallel: bool,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        Self {
            p: 1e-3,
            n: 100,
            n_c: 10,
            mode: QuantileMode::TwoPass,
            sampling: Sampling::default(),
            alpha: 0.05,
            alpha_risk: 0.05,
            m0: None,
            topup: true,
            extend_for_ci: false,
            seed: 0,
            rep: 0,
            parallel: true,
        }
    }
}

impl QuantileConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidConfig(format!("p must lie in (0,1), got {}", self.p)));
        }
        if self.n == 0 || self.n_c == 0 {
            return Err(Error::InvalidConfig("N and the worker count must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if target_events(self.p, self.n * self.n_c) < 2 {
            return Err(Error::InvalidConfig(
                "target event index must be at least 2; increase N or decrease p".into(),
            ));
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

/// `M = ⌈−N_tot log p⌉`.
pub fn target_events(p: f64, n_tot: usize) -> usize {
    (-(n_tot as f64) * p.ln()).ceil() as usize
}

/// Location constant `b_n` of the Gumbel approximation to the maximum of `n` normals.
pub fn gumbel_location(n_c: usize) -> f64 {
    let l = (n_c as f64).ln();
    let s = (2.0 * l).sqrt();
    s - (l.ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * s)
}

/// Per-worker move budget of the first pass such that all workers' `m0`-th levels
/// exceed the target quantile with probability about `1 − α`.
pub fn choose_m0(n: usize, n_c: usize, p: f64, alpha: f64) -> Result<u64> {
    let fallback = (-(n as f64) * p.ln()).ceil();
    if !(alpha > 0.0 && alpha < (-1.0f64).exp()) || n_c < 2 {
        return Err(Error::InvalidConfig(format!(
            "m0 sizing needs 0 < α < 1/e and at least 2 workers (got α={alpha}, n_c={n_c}); \
             m0 = ⌈−N log p⌉ = {fallback} is a safe choice"
        )));
    }
    let nt = -(n as f64) * p.ln();
    let beta = gumbel_location(n_c) - (1.0 / alpha).ln().ln() / (2.0 * (n_c as f64).ln()).sqrt();
    let delta = beta * beta + 4.0 * nt;
    Ok((nt + beta * beta / 2.0 - beta * delta.sqrt() / 2.0).ceil() as u64)
}

/// Midpoint of the `(m−1)`-th and `m`-th smallest values (1-based) of sorted levels.
pub fn estimate_q_sorted(sorted: &[f64], m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidConfig("the target event index must be at least 2".into()));
    }
    if sorted.len() < m {
        return Err(Error::Shortfall {
            needed: m,
            available: sorted.len(),
        });
    }
    Ok(0.5 * (sorted[m - 2] + sorted[m - 1]))
}

/// Quantile estimate from a merged log.
pub fn estimate_q(merged: &EventLog, m: usize) -> Result<f64> {
    estimate_q_sorted(&merged.sorted_levels(), m)
}

/// Order-statistic indices `(⌊m − Z√m⌋, ⌈m + Z√m⌉)` of the confidence interval.
pub fn ci_indices(m: usize, alpha: f64) -> (usize, usize) {
    let z = z_two_sided(alpha);
    let w = z * (m as f64).sqrt();
    // a vanishing half-width must not move the indices off m
    let lo = (m as f64 - w + 1e-9).floor().max(1.0) as usize;
    let hi = (m as f64 + w - 1e-9).ceil() as usize;
    (lo, hi)
}

pub fn ci_q_sorted(sorted: &[f64], m: usize, alpha: f64) -> Result<[f64; 2]> {
    let (lo, hi) = ci_indices(m, alpha);
    if sorted.len() < hi {
        return Err(Error::NeedsWiderRun {
            needed: hi,
            available: sorted.len(),
        });
    }
    Ok([sorted[lo - 1], sorted[hi - 1]])
}

pub fn ci_q(merged: &EventLog, m: usize, alpha: f64) -> Result<[f64; 2]> {
    ci_q_sorted(&merged.sorted_levels(), m, alpha)
}

fn bias_a(p: f64, f_q: f64, fp_q: f64) -> f64 {
    -p.ln() / 2.0 * (1.0 + fp_q * p / (f_q * f_q))
}

/// Bounds on the bias of the `(M+k)`-th merged level.
pub fn bias_bounds(p: f64, f_q: f64, fp_q: f64, n_tot: usize, k: i64) -> (f64, f64) {
    let a = bias_a(p, f_q, fp_q);
    let s = p / (n_tot as f64 * f_q);
    (s * (a + k as f64), s * (a + k as f64 + 1.0))
}

/// Bias bounds of `q̂ = ½(q_{M−1} + q_M)`.
pub fn estimator_bias_bounds(p: f64, f_q: f64, fp_q: f64, n_tot: usize) -> (f64, f64) {
    let a = bias_a(p, f_q, fp_q);
    let s = p / (n_tot as f64 * f_q);
    (s * (a - 0.5), s * (a + 0.5))
}

/// Asymptotic standard deviation `√(−p² log p / f(q)² / N_tot)`.
pub fn clt_sd(p: f64, f_q: f64, n_tot: usize) -> f64 {
    (quantile_cov(p, f_q, n_tot, 0, 0)).sqrt()
}

/// Limit covariance of `(q_{M+k1}, q_{M+k2})`; the same for every pair.
pub fn quantile_cov(p: f64, f_q: f64, n_tot: usize, _k1: i64, _k2: i64) -> f64 {
    -p * p * p.ln() / (f_q * f_q) / n_tot as f64
}

/// `γ(q) = q f(q) / (−p log p)`.
pub fn gamma_q(q: f64, f_q: f64, p: f64) -> f64 {
    q * f_q / (-p * p.ln())
}

/// Parallel computing time needed for a relative error `δ` on `q`.
pub fn t_par_quantile(p: f64, delta: f64, q: f64, f_q: f64, n_c: usize, burn_in: usize) -> f64 {
    let t = burn_in as f64;
    let nc = n_c as f64;
    let lead = (t / nc) * (p * p.ln() / (delta * q * f_q)).powi(2);
    let spread = if n_c > 1 {
        delta * gamma_q(q, f_q, p) * (2.0 * nc * nc.ln()).sqrt()
    } else {
        0.0
    };
    lead * (1.0 + 1.0 / (t * (-p.ln())) + spread)
}

/// Crude Monte Carlo time for the same relative error on `q`.
pub fn t_mc_quantile(p: f64, delta: f64, q: f64, f_q: f64, n_c: usize) -> f64 {
    (p / ((q * f_q * delta).powi(2) * n_c as f64)).ceil()
}

/// Expected moves per worker: `−N log p + √(2N log(1/p) log n_c)`.
pub fn expected_iters_two_pass(n: usize, n_c: usize, p: f64) -> f64 {
    let nt = -(n as f64) * p.ln();
    nt + (2.0 * nt * (n_c as f64).ln()).sqrt()
}

/// Diagnostics from an analytic level law.
pub fn diagnostics(law: &dyn LevelLaw, q: f64, p: f64, n: usize, n_c: usize) -> Option<QuantileDiagnostics> {
    let f = law.pdf(q);
    let fp = law.pdf_prime(q)?;
    if !(f > 0.0) {
        return None;
    }
    let n_tot = n * n_c;
    let (bias_lower, bias_upper) = estimator_bias_bounds(p, f, fp, n_tot);
    Some(QuantileDiagnostics {
        clt_sd: clt_sd(p, f, n_tot),
        bias_lower,
        bias_upper,
        gamma_q: gamma_q(q, f, p),
        expected_iters: expected_iters_two_pass(n, n_c, p),
    })
}

// ---------------------------------------------------------------------------
// Runners

/// Counts accepted levels at or below a non-decreasing bound.
#[derive(Default)]
struct Tally {
    pending: BinaryHeap<Reverse<Level>>,
    counted: usize,
    seen: Vec<usize>,
}

struct Level(f64);
impl PartialEq for Level {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Level {}
impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Level {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Tally {
    fn new(workers: usize) -> Self {
        Self {
            seen: vec![0; workers],
            ..Self::default()
        }
    }

    fn update<S: Sampler>(&mut self, workers: &[Worker<'_, S>], bound: f64) -> usize {
        for (w, seen) in workers.iter().zip(self.seen.iter_mut()) {
            let events = w.pop.events();
            for e in &events[*seen..] {
                if e.accepted {
                    self.pending.push(Reverse(Level(e.level)));
                }
            }
            *seen = events.len();
        }
        while let Some(Reverse(Level(l))) = self.pending.peek() {
            if *l <= bound {
                self.pending.pop();
                self.counted += 1;
            } else {
                break;
            }
        }
        self.counted
    }
}

struct Worker<'s, S: Sampler> {
    pop: Population<'s, S>,
    rng: Stream,
}

fn for_each_worker<S: Sampler>(
    workers: &mut [Worker<'_, S>],
    parallel: bool,
    f: impl Fn(&mut Worker<'_, S>) -> Result<()> + Sync + Send,
) -> Result<()>
where
    S::Position: Send,
{
    if parallel {
        workers.par_iter_mut().map(&f).collect::<Result<Vec<()>>>()?;
    } else {
        for w in workers.iter_mut() {
            f(w)?;
        }
    }
    Ok(())
}

fn complete_level<S: Sampler>(workers: &[Worker<'_, S>]) -> f64 {
    workers.iter().map(|w| w.pop.min_level()).fold(f64::INFINITY, f64::min)
}

/// Each worker makes one more counted move.
fn lockstep_round<S: Sampler>(workers: &mut [Worker<'_, S>], parallel: bool) -> Result<()>
where
    S::Position: Send,
{
    for_each_worker(workers, parallel, |w| {
        let target = w.pop.moves() + 1;
        w.pop.run(Stop::Moves(target), &mut w.rng)
    })
}

fn run_with<S: Sampler>(sampler: &S, cfg: &QuantileConfig) -> Result<QuantileEstimate>
where
    S::Position: Send,
{
    let n_tot = cfg.n * cfg.n_c;
    let m = target_events(cfg.p, n_tot);
    let (m_lo, m_hi) = ci_indices(m, cfg.alpha);
    let goal = if cfg.extend_for_ci { m.max(m_hi) } else { m };

    let mut workers = (0..cfg.n_c)
        .map(|w| {
            let mut rng = stream(cfg.seed, w as u64, cfg.rep);
            let pop = Population::new(sampler, cfg.n, &mut rng)?;
            Ok(Worker { pop, rng })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tally = Tally::new(cfg.n_c);

    let (m0, events_obtained, shortfall) = match cfg.mode {
        QuantileMode::TwoPass => {
            let m0 = match cfg.m0 {
                Some(m0) => m0,
                None => choose_m0(cfg.n, cfg.n_c, cfg.p, cfg.alpha_risk)?,
            };
            for_each_worker(&mut workers, cfg.parallel, |w| w.pop.run(Stop::Moves(m0), &mut w.rng))?;
            let q_max = workers.iter().map(|w| w.pop.min_level()).fold(f64::NEG_INFINITY, f64::max);
            for_each_worker(&mut workers, cfg.parallel, |w| w.pop.run(Stop::Level(q_max), &mut w.rng))?;
            let obtained = tally.update(&workers, q_max);
            (Some(m0), obtained, obtained < m)
        }
        QuantileMode::Sequential => {
            lockstep_round(&mut workers, cfg.parallel)?;
            while tally.update(&workers, complete_level(&workers)) < goal {
                lockstep_round(&mut workers, cfg.parallel)?;
            }
            (None, tally.counted, false)
        }
    };

    let mut complete = tally.update(&workers, complete_level(&workers));
    let stop_early = shortfall && !cfg.topup;
    if !stop_early {
        while complete < goal {
            lockstep_round(&mut workers, cfg.parallel)?;
            complete = tally.update(&workers, complete_level(&workers));
        }
    }

    let logs: Vec<EventLog> = workers.iter().map(|w| w.pop.log()).collect();
    let merged = merge_logs(&logs);
    let levels = merged.levels_up_to(merged.complete_up_to);
    let q_hat = if stop_early {
        None
    } else {
        Some(estimate_q_sorted(&levels, m)?)
    };
    let ci = if stop_early {
        None
    } else {
        ci_q_sorted(&levels, m, cfg.alpha).ok()
    };
    let per_worker_calls: Vec<u64> = workers.iter().map(|w| w.pop.calls()).collect();
    Ok(QuantileEstimate {
        q_hat,
        ci,
        p: cfg.p,
        total_moves: workers.iter().map(|w| w.pop.moves()).sum(),
        k: cfg.n_c,
        n: cfg.n,
        n_calls: per_worker_calls.iter().sum(),
        per_worker_calls,
        seed: cfg.seed,
        m,
        m0,
        alpha_risk: cfg.alpha_risk,
        events_obtained,
        shortfall,
        ci_indices: [m_lo, m_hi],
        events_complete: levels.len(),
        iterations: workers.iter().map(|w| w.pop.moves()).max().unwrap_or(0),
    })
}

/// Quantile run with the mode and sampler given by `cfg`; the limit-state's own
/// threshold is ignored.
pub fn run_quantile(ls: &LimitState, cfg: &QuantileConfig) -> Result<QuantileEstimate> {
    cfg.validate()?;
    match cfg.sampling {
        Sampling::Mcmc(kernel) => run_with(&McmcSampler::new(ls, kernel)?, cfg),
        Sampling::Ideal => {
            let hazard = ls.hazard().ok_or_else(|| Error::Unsupported(ls.id().to_string()))?;
            run_with(&IdealSampler::new(hazard)?, cfg)
        }
    }
}

pub fn run_quantile_two_pass(ls: &LimitState, cfg: &QuantileConfig) -> Result<QuantileEstimate> {
    run_quantile(
        ls,
        &QuantileConfig {
            mode: QuantileMode::TwoPass,
            ..cfg.clone()
        },
    )
}

pub fn run_quantile_sequential(ls: &LimitState, cfg: &QuantileConfig) -> Result<QuantileEstimate> {
    run_quantile(
        ls,
        &QuantileConfig {
            mode: QuantileMode::Sequential,
            ..cfg.clone()
        },
    )
}
