//! Request types shared by the HTTP service, its client and the command line.
//! Each request validates itself and runs synchronously through [`execute`](ProbRequest::execute).

use serde::{Deserialize, Serialize};

use crate::doe::{build_doe, expected_doe_calls, DoeConfig, DoeResult};
use crate::error::Result;
use crate::harness::{replicate, ExperimentConfig, Replication, SamplerKind};
use crate::kernel::KernelConfig;
use crate::limit_state::{Benchmark, LimitState};
use crate::probability::{plan, run_probability_with, CostModel, PlanReport, ProbConfig, ProbEstimate, Sampling};
use crate::quantile::{diagnostics, run_quantile, QuantileConfig, QuantileDiagnostics, QuantileEstimate, QuantileMode};

fn default_n() -> usize {
    100
}
fn default_one() -> usize {
    1
}
fn default_alpha() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_n_fail() -> usize {
    10
}
fn default_p0() -> f64 {
    0.1
}
fn default_burn_in() -> usize {
    20
}

fn sampling(kind: SamplerKind, kernel: KernelConfig) -> Sampling {
    match kind {
        SamplerKind::Mcmc => Sampling::Mcmc(kernel),
        SamplerKind::Ideal => Sampling::Ideal,
    }
}

fn state(benchmark: Benchmark, threshold: Option<f64>) -> LimitState {
    let ls = benchmark.limit_state();
    match threshold {
        Some(t) => ls.with_threshold(t),
        None => ls,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbRequest {
    pub benchmark: Benchmark,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub batch: usize,
}

impl ProbRequest {
    pub fn new(benchmark: Benchmark) -> Self {
        Self {
            benchmark,
            threshold: None,
            n: default_n(),
            workers: 1,
            kernel: KernelConfig::default(),
            sampler: SamplerKind::Mcmc,
            alpha: default_alpha(),
            seed: 0,
            batch: 1,
        }
    }

    pub fn execute(&self) -> Result<ProbEstimate> {
        let ls = state(self.benchmark, self.threshold);
        run_probability_with(
            &ls,
            &ProbConfig {
                n: self.n,
                n_c: self.workers,
                sampling: sampling(self.sampler, self.kernel),
                alpha: self.alpha,
                seed: self.seed,
                rep: 0,
                batch: self.batch,
                parallel: true,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRequest {
    pub benchmark: Benchmark,
    pub p: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default)]
    pub mode: QuantileMode,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub alpha_risk: f64,
    #[serde(default)]
    pub m0: Option<u64>,
    #[serde(default = "default_true")]
    pub topup: bool,
    #[serde(default)]
    pub extend_for_ci: bool,
    #[serde(default)]
    pub seed: u64,
}

impl QuantileRequest {
    pub fn new(benchmark: Benchmark, p: f64) -> Self {
        Self {
            benchmark,
            p,
            n: default_n(),
            workers: 1,
            mode: QuantileMode::TwoPass,
            kernel: KernelConfig::default(),
            sampler: SamplerKind::Mcmc,
            alpha: default_alpha(),
            alpha_risk: default_alpha(),
            m0: None,
            topup: true,
            extend_for_ci: false,
            seed: 0,
        }
    }

    pub fn execute(&self) -> Result<QuantileResponse> {
        let ls = self.benchmark.limit_state();
        let estimate = run_quantile(
            &ls,
            &QuantileConfig {
                p: self.p,
                n: self.n,
                n_c: self.workers,
                mode: self.mode,
                sampling: sampling(self.sampler, self.kernel),
                alpha: self.alpha,
                alpha_risk: self.alpha_risk,
                m0: self.m0,
                topup: self.topup,
                extend_for_ci: self.extend_for_ci,
                seed: self.seed,
                rep: 0,
                parallel: true,
            },
        )?;
        let diagnostics = ls.law().and_then(|law| {
            let q = estimate.q_hat?;
            diagnostics(law, q, self.p, self.n, self.workers)
        });
        Ok(QuantileResponse { estimate, diagnostics })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileResponse {
    #[serde(flatten)]
    pub estimate: QuantileEstimate,
    /// Present when the benchmark's level law is known analytically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<QuantileDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeRequest {
    pub benchmark: Benchmark,
    #[serde(default = "default_n_fail")]
    pub n_fail: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub rough_p: Option<f64>,
    #[serde(default)]
    pub move_cap: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl DoeRequest {
    pub fn new(benchmark: Benchmark) -> Self {
        Self {
            benchmark,
            n_fail: default_n_fail(),
            kernel: KernelConfig::default(),
            rough_p: None,
            move_cap: None,
            seed: 0,
        }
    }

    pub fn execute(&self) -> Result<DoeResponse> {
        let ls = self.benchmark.limit_state();
        let result = build_doe(
            &ls,
            &DoeConfig {
                n_fail: self.n_fail,
                kernel: self.kernel,
                rough_p: self.rough_p,
                move_cap: self.move_cap,
                ..DoeConfig::default()
            },
            self.seed,
        )?;
        Ok(DoeResponse {
            expected_calls: expected_doe_calls(ls.dim(), self.n_fail, self.benchmark.doe_table_probability()),
            result,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeResponse {
    pub result: DoeResult,
    /// `(d+1) + N_fail log(1/p)` at the benchmark's tabulated probability.
    pub expected_calls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub p: f64,
    pub delta: f64,
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_p0")]
    pub p0: f64,
}

impl PlanRequest {
    pub fn execute(&self) -> Result<PlanReport> {
        plan(&CostModel {
            p: self.p,
            delta: self.delta,
            n_c: self.workers,
            burn_in: self.burn_in,
            p0: self.p0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRequest {
    pub config: ExperimentConfig,
}

impl ReplicateRequest {
    pub fn execute(&self) -> Result<Vec<Replication>> {
        replicate(&self.config)
    }
}

/// Entry of the benchmark catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInfo {
    pub id: Benchmark,
    pub dim: usize,
    pub threshold: f64,
    pub reference_probability: f64,
    pub analytic: bool,
}

pub fn catalogue() -> Vec<BenchmarkInfo> {
    Benchmark::ALL
        .iter()
        .map(|&b| {
            let ls = b.limit_state();
            BenchmarkInfo {
                id: b,
                dim: ls.dim(),
                threshold: ls.threshold(),
                reference_probability: b.reference_probability(),
                analytic: ls.law().is_some(),
            }
        })
        .collect()
}
