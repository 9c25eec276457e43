use thiserror::Error;

use crate::doe::DoeResult;
use crate::mover::EventLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input has dimension {got}, limit-state `{id}` expects {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },

    #[error("limit-state `{id}` returned a non-finite value ({value})")]
    Evaluation { id: String, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),

    #[error("cannot select a seed from an empty population")]
    EmptyPopulation,

    #[error("limit-state `{0}` has no inverse integrated hazard; exact sampling is unavailable")]
    Unsupported(String),

    #[error("descent made no counted move in {attempts} consecutive attempts")]
    Stalled { attempts: u64 },

    #[error("only {available} complete events, {needed} required")]
    Shortfall { needed: usize, available: usize },

    #[error("confidence bound needs event #{needed}, only {available} complete events; rerun with a wider target")]
    NeedsWiderRun { needed: usize, available: usize },

    #[error("cost planner: {0}")]
    Planner(String),

    #[error("gaussian process: {0}")]
    Gp(String),

    #[error("{failed} of {total} workers failed (first: worker {first_worker}: {first_error})")]
    Workers {
        total: usize,
        failed: usize,
        first_worker: usize,
        first_error: String,
        partial: Vec<EventLog>,
    },

    #[error("design of experiments stopped: chain {chain} exceeded {cap} moves")]
    DoeIncomplete {
        chain: usize,
        cap: usize,
        partial: Box<DoeResult>,
    },

    #[error("statistical test invalid: {0}")]
    TestInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}
