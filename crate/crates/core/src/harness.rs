//! Worker orchestration and replicated experiments.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doe::{build_doe, DoeConfig};
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::limit_state::Benchmark;
use crate::mover::EventLog;
use crate::probability::{run_probability_with, ProbConfig, Sampling};
use crate::quantile::{run_quantile, QuantileConfig, QuantileMode};
use crate::rng::{self, stream, Stream};
use crate::stats::{boxplot_summary, ReplicationSummary};

/// Runs `n_c` descents on the streams `(master_seed, worker, rep)` and returns
/// their logs in worker order. Results do not depend on `parallel`.
pub fn run_workers<F>(n_c: usize, master_seed: u64, rep: u64, parallel: bool, job: F) -> Result<Vec<EventLog>>
where
    F: Fn(usize, &mut Stream) -> Result<EventLog> + Sync,
{
    if n_c == 0 {
        return Err(Error::InvalidConfig("at least one worker is required".into()));
    }
    let run = |w: usize| job(w, &mut stream(master_seed, w as u64, rep));
    let results: Vec<Result<EventLog>> = if parallel {
        (0..n_c).into_par_iter().map(run).collect()
    } else {
        (0..n_c).map(run).collect()
    };
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed == 0 {
        return Ok(results.into_iter().map(|r| r.expect("checked")).collect());
    }
    let mut partial = Vec::new();
    let mut first = None;
    for (w, r) in results.into_iter().enumerate() {
        match r {
            Ok(log) => partial.push(log),
            Err(e) if first.is_none() => first = Some((w, e.to_string())),
            Err(_) => {}
        }
    }
    let (first_worker, first_error) = first.expect("at least one failure");
    Err(Error::Workers {
        total: n_c,
        failed,
        first_worker,
        first_error,
        partial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    Prob,
    Quantile2pass,
    Quantileseq,
    Doe,
    Plan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Mcmc,
    Ideal,
}

/// A replicated experiment, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub mode: ExperimentMode,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_one")]
    pub n_c: usize,
    /// Extra `n_c × N` layouts, written as `"10x100"`; one output per layout.
    #[serde(default)]
    pub configurations: Vec<String>,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub alpha_risk: f64,
    /// Target probability of quantile runs.
    #[serde(default)]
    pub p: Option<f64>,
    /// Overrides the benchmark's default threshold for probability runs.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_n_fail")]
    pub n_fail: usize,
    #[serde(default = "default_one")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_n() -> usize {
    100
}
fn default_one() -> usize {
    1
}
fn default_alpha() -> f64 {
    0.05
}
fn default_n_fail() -> usize {
    10
}

/// Parses `"KxN"` into `(n_c, N)`.
pub fn parse_layout(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidConfig(format!("layout `{s}` is not of the form <workers>x<particles>"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let k = a.trim().parse().map_err(|_| bad())?;
    let n = b.trim().parse().map_err(|_| bad())?;
    Ok((k, n))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_c == 0 || self.reps == 0 || self.n_fail == 0 {
            return Err(Error::InvalidConfig("n, n_c, reps and n_fail must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        self.kernel.validate()?;
        for layout in self.layouts()? {
            if layout.1 < 10 {
                tracing::warn!(layout = %format!("{}x{}", layout.0, layout.1), "fewer than 10 particles per worker");
            }
        }
        match self.mode {
            ExperimentMode::Quantile2pass | ExperimentMode::Quantileseq if self.p.is_none() => {
                Err(Error::InvalidConfig("quantile experiments need `p`".into()))
            }
            ExperimentMode::Plan => Err(Error::InvalidConfig(
                "cost planning is deterministic; use the plan command instead of replicate".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `(n_c, N)` layouts to run: the explicit list, or the single `n_c × n`.
    pub fn layouts(&self) -> Result<Vec<(usize, usize)>> {
        if self.configurations.is_empty() {
            Ok(vec![(self.n_c, self.n)])
        } else {
            self.configurations.iter().map(|s| parse_layout(s)).collect()
        }
    }

    fn sampling(&self) -> Sampling {
        match self.sampler {
            SamplerKind::Mcmc => Sampling::Mcmc(self.kernel),
            SamplerKind::Ideal => Sampling::Ideal,
        }
    }
}

/// One line of a replication CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub rep: usize,
    pub estimate: f64,
    pub n_calls: u64,
    pub effective_calls: u64,
    pub moves: u64,
    pub shortfall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub layout: String,
    pub summary: ReplicationSummary,
    pub rows: Vec<RepRow>,
}

impl Replication {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<RepRow>> {
        let mut r = csv::Reader::from_reader(input);
        Ok(r.deserialize().collect::<std::result::Result<Vec<RepRow>, _>>()?)
    }

    /// Summary recomputed from rows.
    pub fn summarize(rows: &[RepRow]) -> Result<ReplicationSummary> {
        let est: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
        let calls: Vec<u64> = rows.iter().map(|r| r.n_calls).collect();
        boxplot_summary(&est, &calls)
    }
}

fn run_rep(cfg: &ExperimentConfig, n_c: usize, n: usize, rep: usize) -> Result<RepRow> {
    let mut ls = cfg.benchmark.limit_state();
    if let Some(t) = cfg.threshold {
        ls = ls.with_threshold(t);
    }
    match cfg.mode {
        ExperimentMode::Prob => {
            let est = run_probability_with(
                &ls,
                &ProbConfig {
                    n,
                    n_c,
                    sampling: cfg.sampling(),
                    alpha: cfg.alpha,
                    seed: cfg.seed,
                    rep: rep as u64,
                    batch: 1,
                    parallel: false,
                },
            )?;
            Ok(RepRow {
                rep,
                estimate: est.p_hat,
                n_calls: est.n_calls,
                effective_calls: est.effective_calls(),
                moves: est.m,
                shortfall: false,
            })
        }
        ExperimentMode::Quantile2pass | ExperimentMode::Quantileseq => {
            let mode = if cfg.mode == ExperimentMode::Quantile2pass {
                QuantileMode::TwoPass
            } else {
                QuantileMode::Sequential
            };
            let est = run_quantile(
                &ls,
                &QuantileConfig {
                    p: cfg.p.expect("validated"),
                    n,
                    n_c,
                    mode,
                    sampling: cfg.sampling(),
                    alpha: cfg.alpha,
                    alpha_risk: cfg.alpha_risk,
                    seed: cfg.seed,
                    rep: rep as u64,
                    parallel: false,
                    ..QuantileConfig::default()
                },
            )?;
            Ok(RepRow {
                rep,
                estimate: est.q_hat.unwrap_or(f64::NAN),
                n_calls: est.n_calls,
                effective_calls: est.per_worker_calls.iter().copied().max().unwrap_or(0),
                moves: est.iterations,
                shortfall: est.shortfall,
            })
        }
        ExperimentMode::Doe => {
            let res = build_doe(
                &ls,
                &DoeConfig {
                    n_fail: cfg.n_fail,
                    kernel: cfg.kernel,
                    ..DoeConfig::default()
                },
                rng::derive(cfg.seed, rep as u64),
            )?;
            Ok(RepRow {
                rep,
                estimate: res.n_calls as f64,
                n_calls: res.n_calls,
                effective_calls: res.n_calls,
                moves: res.per_chain_moves.iter().sum::<usize>() as u64,
                shortfall: false,
            })
        }
        ExperimentMode::Plan => Err(Error::InvalidConfig("plan is not replicable".into())),
    }
}

/// Runs every layout `reps` times. Replications run in parallel; each one is
/// fully determined by `(seed, rep)`.
pub fn replicate(cfg: &ExperimentConfig) -> Result<Vec<Replication>> {
    cfg.validate()?;
    cfg.layouts()?
        .into_iter()
        .map(|(n_c, n)| {
            let rows = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| run_rep(cfg, n_c, n, rep))
                .collect::<Result<Vec<_>>>()?;
            Ok(Replication {
                layout: format!("{n_c}x{n}"),
                summary: Replication::summarize(&rows)?,
                rows,
            })
        })
        .collect()
}

/// Output path of one layout: the configured path, suffixed by the layout when
/// several layouts are run.
pub fn layout_path(base: &Path, layout: &str, several: bool) -> PathBuf {
    if !several {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("replicate");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_{layout}.{ext}"))
}

/// Writes one CSV per layout and returns the paths.
pub fn write_replications(reps: &[Replication], base: &Path) -> Result<Vec<PathBuf>> {
    let several = reps.len() > 1;
    reps.iter()
        .map(|r| {
            let path = layout_path(base, &r.layout, several);
            r.write_csv(std::fs::File::create(&path)?)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_state::{toy_ideal_state, ToyKind};
    use crate::mover::{ideal_descend, Stop};

    #[test]
    fn worker_order_and_determinism() {
        let (_, h) = toy_ideal_state(ToyKind::Exponential1);
        let job = |_: usize, r: &mut Stream| ideal_descend(&h, 5, Stop::Level(3.0), r);
        let a = run_workers(6, 11, 0, true, job).unwrap();
        let b = run_workers(6, 11, 0, false, job).unwrap();
        assert_eq!(a, b);
        let direct = ideal_descend(&h, 5, Stop::Level(3.0), &mut stream(11, 2, 0)).unwrap();
        assert_eq!(a[2], direct);
    }

    #[test]
    fn worker_failures_keep_partial_logs() {
        let (_, h) = toy_ideal_state(ToyKind::Exponential1);
        let err = run_workers(4, 1, 0, true, |w, r| {
            if w == 1 {
                Err(Error::EmptyPopulation)
            } else {
                ideal_descend(&h, 3, Stop::Level(1.0), r)
            }
        })
        .unwrap_err();
        match err {
            Error::Workers {
                total,
                failed,
                first_worker,
                partial,
                ..
            } => {
                assert_eq!((total, failed, first_worker, partial.len()), (4, 1, 1, 3));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn toml_config_and_layouts() {
        let cfg = ExperimentConfig::from_toml(
            r#"
benchmark = "toy-exp"
mode = "prob"
configurations = ["2x10", "5x4"]
sampler = "ideal"
reps = 3
seed = 5

[kernel]
kind = "direct_gaussian"
sigma = 0.3
burn_in = 20
"#,
        )
        .unwrap();
        assert_eq!(cfg.layouts().unwrap(), vec![(2, 10), (5, 4)]);
        assert!(ExperimentConfig::from_toml("benchmark = \"nope\"\nmode = \"prob\"").is_err());
        assert!(ExperimentConfig::from_toml("benchmark = \"waarts\"\nmode = \"quantileseq\"").is_err());
        assert!(parse_layout("10-100").is_err());
    }

    #[test]
    fn replicate_round_trip_and_determinism() {
        let cfg = ExperimentConfig::from_toml(
            "benchmark = \"toy-exp\"\nmode = \"prob\"\nsampler = \"ideal\"\nn = 20\nn_c = 2\nreps = 5\nseed = 3\nconfigurations = [\"2x20\", \"4x10\"]",
        )
        .unwrap();
        let a = replicate(&cfg).unwrap();
        let b = replicate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_replications(&a, &dir.path().join("r.csv")).unwrap();
        assert!(paths[0].ends_with("r_2x20.csv"));
        let rows = Replication::read_rows(std::fs::File::open(&paths[1]).unwrap()).unwrap();
        assert_eq!(rows, a[1].rows);
        assert_eq!(Replication::summarize(&rows).unwrap(), a[1].summary);
    }
}
