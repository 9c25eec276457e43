//! `splitmove`: command-line client of the splitmove service.
//!
//! Without `--server` an in-process server is started on an ephemeral port.
//! Exit codes: 0 success, 2 quantile shortfall without top-up, 1 error.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use splitmove_client::{Client, ClientError};
use splitmove_core::doe::DoeResult;
use splitmove_core::harness::{write_replications, ExperimentConfig, SamplerKind};
use splitmove_core::wire::{DoeRequest, PlanRequest, ProbRequest, QuantileRequest, ReplicateRequest};
use splitmove_core::{Benchmark, KernelConfig, KernelKind, QuantileMode};

#[derive(Parser)]
#[command(name = "splitmove", version, about = "Moving-particles rare-event estimation")]
struct Cli {
    /// Base URL of a running service; an ephemeral local server is used otherwise.
    #[arg(long, global = true, env = "SPLITMOVE_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a failure probability.
    Prob(ProbArgs),
    /// Estimate an extreme quantile.
    Quantile(QuantileArgs),
    /// Build a first design of experiments with failing points.
    Doe(DoeArgs),
    /// Compare computing-time models for a target precision.
    Plan(PlanArgs),
    /// Run a replicated experiment described by a TOML file.
    Replicate(ReplicateArgs),
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Args)]
struct KernelArgs {
    /// TOML file with a `[kernel]` table (`kind`, `sigma`, `burn_in`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// `direct_gaussian` or `metropolis_hastings`.
    #[arg(long, value_parser = parse_kind)]
    kernel_kind: Option<KernelKind>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Transitions per conditional resampling.
    #[arg(long)]
    burn_in: Option<usize>,
}

#[derive(Deserialize, Default)]
struct KernelFile {
    #[serde(default)]
    kernel: KernelConfig,
}

fn parse_kind(s: &str) -> Result<KernelKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown kernel kind `{s}` (expected direct_gaussian or metropolis_hastings)"))
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown sampler `{s}` (expected mcmc or ideal)"))
}

impl KernelArgs {
    fn resolve(&self) -> anyhow::Result<KernelConfig> {
        let mut k = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<KernelFile>(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
                    .kernel
            }
            None => KernelConfig::default(),
        };
        if let Some(kind) = self.kernel_kind {
            k.kind = kind;
        }
        if let Some(s) = self.sigma {
            k.sigma = s;
        }
        if let Some(t) = self.burn_in {
            k.burn_in = t;
        }
        Ok(k)
    }
}

#[derive(Args)]
struct ProbArgs {
    #[arg(long)]
    benchmark: Benchmark,
    /// Overrides the benchmark's default threshold.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    /// Particles per worker.
    #[arg(short = 'n', long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// `mcmc` or `ideal` (exact sampling, analytic benchmarks only).
    #[arg(long, default_value = "mcmc", value_parser = parse_sampler)]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lowest particles moved together within a worker.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Also write the JSON result here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantileArgs {
    #[arg(long)]
    benchmark: Benchmark,
    /// Exceedance probability of the quantile.
    #[arg(long)]
    p: f64,
    #[arg(short = 'n', long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    workers: usize,
    /// `2pass` or `seq`.
    #[arg(long, default_value = "2pass")]
    mode: QuantileMode,
    #[arg(long, default_value = "mcmc", value_parser = parse_sampler)]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Accepted risk that the first pass falls short.
    #[arg(long, default_value_t = 0.05)]
    alpha_risk: f64,
    /// First-pass move budget per worker (derived from the risk otherwise).
    #[arg(long)]
    m0: Option<u64>,
    /// Report a shortfall instead of running extra rounds (exit code 2).
    #[arg(long)]
    no_topup: bool,
    /// Continue until the upper confidence index is reached.
    #[arg(long)]
    extend_for_ci: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DoeArgs {
    #[arg(long)]
    benchmark: Benchmark,
    #[arg(long, default_value_t = 10)]
    n_fail: usize,
    /// Rough failure probability used to size the per-chain move cap.
    #[arg(long)]
    rough_p: Option<f64>,
    #[arg(long)]
    move_cap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Design CSV `x1..xd,g,is_failure,chain_id,move_index`.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Surrogate hyperparameters as JSON.
    #[arg(long)]
    gp: Option<PathBuf>,
    /// Full JSON result.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    p: f64,
    /// Target coefficient of variation.
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 20)]
    burn_in: usize,
    /// Level probability of the fixed-level splitting comparison.
    #[arg(long, default_value_t = 0.1)]
    p0: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Experiment TOML.
    config: PathBuf,
    /// CSV output path (overrides `output` in the file); suffixed per layout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(value: &impl serde::Serialize, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn write_design(result: &DoeResult, design: Option<&Path>, gp: Option<&Path>) -> anyhow::Result<()> {
    if let Some(path) = design {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        result.write_csv(file)?;
    }
    if let Some(path) = gp {
        fs::write(path, serde_json::to_string_pretty(&result.hyper)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

async fn run(client: &Client, cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Prob(a) => {
            let req = ProbRequest {
                benchmark: a.benchmark,
                threshold: a.threshold,
                n: a.n,
                workers: a.workers,
                kernel: a.kernel.resolve()?,
                sampler: a.sampler,
                alpha: a.alpha,
                seed: a.seed,
                batch: a.batch,
            };
            emit(&client.prob(&req).await?, a.out.as_deref())?;
        }
        Command::Quantile(a) => {
            let req = QuantileRequest {
                benchmark: a.benchmark,
                p: a.p,
                n: a.n,
                workers: a.workers,
                mode: a.mode,
                kernel: a.kernel.resolve()?,
                sampler: a.sampler,
                alpha: a.alpha,
                alpha_risk: a.alpha_risk,
                m0: a.m0,
                topup: !a.no_topup,
                extend_for_ci: a.extend_for_ci,
                seed: a.seed,
            };
            let resp = client.quantile(&req).await?;
            emit(&resp, a.out.as_deref())?;
            if resp.estimate.shortfall && !req.topup {
                eprintln!(
                    "shortfall: {} complete events, {} required",
                    resp.estimate.events_obtained, resp.estimate.m
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::Doe(a) => {
            let req = DoeRequest {
                benchmark: a.benchmark,
                n_fail: a.n_fail,
                kernel: a.kernel.resolve()?,
                rough_p: a.rough_p,
                move_cap: a.move_cap,
                seed: a.seed,
            };
            match client.doe(&req).await {
                Ok(resp) => {
                    write_design(&resp.result, a.design.as_deref(), a.gp.as_deref())?;
                    emit(&resp, a.out.as_deref())?;
                }
                Err(ClientError::Service { body, .. }) if body.partial.is_some() => {
                    let partial: DoeResult = serde_json::from_value(body.partial.expect("checked"))?;
                    write_design(&partial, a.design.as_deref(), a.gp.as_deref())?;
                    bail!("{} (partial design with {} points written)", body.error, partial.design.len());
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Plan(a) => {
            let req = PlanRequest {
                p: a.p,
                delta: a.delta,
                workers: a.workers,
                burn_in: a.burn_in,
                p0: a.p0,
            };
            emit(&client.plan(&req).await?, a.out.as_deref())?;
        }
        Command::Replicate(a) => {
            let config = ExperimentConfig::from_path(&a.config)?;
            let out = a.out.clone().or_else(|| config.output.clone());
            let reps = client.replicate(&ReplicateRequest { config }).await?;
            if let Some(base) = out {
                for path in write_replications(&reps, &base)? {
                    eprintln!("wrote {}", path.display());
                }
            }
            let summaries: Vec<_> = reps
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "layout": r.layout,
                        "quartiles": r.summary.quartiles,
                        "whiskers": r.summary.whiskers,
                        "mean_calls": r.rows.iter().map(|x| x.n_calls as f64).sum::<f64>() / r.rows.len().max(1) as f64,
                        "shortfalls": r.rows.iter().filter(|x| x.shortfall).count(),
                    })
                })
                .collect();
            emit(&summaries, None)?;
        }
        Command::Serve { .. } => unreachable!("handled before connecting"),
    }
    Ok(ExitCode::SUCCESS)
}

async fn start(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Command::Serve { addr } = cli.cmd {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        splitmove_service::serve(listener).await?;
        return Ok(ExitCode::SUCCESS);
    }
    let (client, _server) = match &cli.server {
        Some(url) => (Client::new(url.clone()), None),
        None => {
            let (addr, handle) = splitmove_service::spawn_ephemeral().await.context("starting local server")?;
            (Client::new(format!("http://{addr}")), Some(handle))
        }
    };
    run(&client, cli.cmd).await
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(start(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
