//! First design of experiments reaching the failure domain.
//!
//! Each chain starts from a fresh input draw and climbs a kriging surrogate whose
//! trend is pinned at the failure threshold, so unexplored regions look as
//! promising as the threshold itself. One true call is spent per move; the
//! surrogate is retrained after every call and the chain keeps its best true
//! position.

mod gp;

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use gp::{fit_gp, GpHyper, GpModel, GpOptions};

use crate::error::{Error, Result};
use crate::kernel::{propose, KernelConfig};
use crate::limit_state::LimitState;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoeConfig {
    pub n_fail: usize,
    /// Proposal used by the surrogate climb; `burn_in` is the number of
    /// proposals scored per move.
    pub kernel: KernelConfig,
    /// Rough probability guess used only to size the per-chain move cap.
    pub rough_p: Option<f64>,
    /// Explicit per-chain move cap, overriding the one derived from `rough_p`.
    pub move_cap: Option<usize>,
    pub gp: GpOptions,
    /// Re-estimate hyperparameters (warm start) once the design has grown by this factor.
    pub reoptimize_growth: f64,
    /// Climbs retried before falling back to a plain proposal when none improves.
    pub max_idle_climbs: usize,
}

impl Default for DoeConfig {
    fn default() -> Self {
        Self {
            n_fail: 10,
            kernel: KernelConfig::default(),
            rough_p: None,
            move_cap: None,
            gp: GpOptions::default(),
            reoptimize_growth: 1.1,
            max_idle_climbs: 20,
        }
    }
}

impl DoeConfig {
    pub fn cap(&self) -> usize {
        self.move_cap.unwrap_or_else(|| {
            let p = self.rough_p.unwrap_or(1e-12).max(1e-12);
            50 * (1.0 / p).ln().ceil() as usize
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.n_fail == 0 {
            return Err(Error::InvalidConfig("n_fail must be at least 1".into()));
        }
        if !(self.reoptimize_growth >= 1.0) {
            return Err(Error::InvalidConfig("reoptimize_growth must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub x: Vec<f64>,
    /// Level value (failure when above the threshold).
    pub g: f64,
    pub is_failure: bool,
    /// `None` for the initial space-filling draws.
    pub chain_id: Option<usize>,
    pub move_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeResult {
    pub dim: usize,
    pub threshold: f64,
    pub design: Vec<DesignPoint>,
    /// Failing points in the design.
    pub n_fail: usize,
    pub n_calls: u64,
    /// True calls spent by each chain, its starting draw included.
    pub per_chain_moves: Vec<usize>,
    /// Number of surrogate trainings (one initial fit plus one per chain call).
    pub fits: usize,
    pub hyper: GpHyper,
}

impl DoeResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        header.extend(["g", "is_failure", "chain_id", "move_index"].map(String::from));
        w.write_record(&header)?;
        for p in &self.design {
            let mut rec: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
            rec.push(p.g.to_string());
            rec.push(p.is_failure.to_string());
            rec.push(p.chain_id.map(|c| c.to_string()).unwrap_or_default());
            rec.push(p.move_index.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a design written by [`DoeResult::write_csv`].
    pub fn read_design_csv<R: std::io::Read>(input: R) -> Result<Vec<DesignPoint>> {
        let mut r = csv::Reader::from_reader(input);
        let dim = r.headers()?.len().saturating_sub(4);
        let bad = |what: &str| Error::InvalidConfig(format!("bad design row: {what}"));
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(&rec[i])) };
            let x = (0..dim).map(num).collect::<Result<Vec<_>>>()?;
            out.push(DesignPoint {
                x,
                g: num(dim)?,
                is_failure: rec[dim + 1].parse().map_err(|_| bad(&rec[dim + 1]))?,
                chain_id: match &rec[dim + 2] {
                    "" => None,
                    s => Some(s.parse().map_err(|_| bad(s))?),
                },
                move_index: rec[dim + 3].parse().map_err(|_| bad(&rec[dim + 3]))?,
            });
        }
        Ok(out)
    }
}

/// `(d+1) + N_fail log(1/p)`.
pub fn expected_doe_calls(d: usize, n_fail: usize, p: f64) -> f64 {
    (d + 1) as f64 + n_fail as f64 * (1.0 / p).ln()
}

/// Chains `steps` kernel proposals from `x`, moving whenever the surrogate
/// predicts more than the running best `y`. Makes no true calls.
pub fn surrogate_climb<R: Rng + ?Sized>(
    x: &[f64],
    y: f64,
    model: &GpModel,
    cfg: &KernelConfig,
    steps: usize,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let mut best = x.to_vec();
    let mut best_y = y;
    let mut cand = vec![0.0; x.len()];
    for _ in 0..steps {
        propose(cfg, &best, &mut cand, rng);
        let pred = model.predict(&cand);
        if pred > best_y {
            best.copy_from_slice(&cand);
            best_y = pred;
        }
    }
    (best, best_y)
}

struct Trainer {
    opts: GpOptions,
    growth: f64,
    last_opt: usize,
    last_full: usize,
    fits: usize,
    rng: Stream,
}

impl Trainer {
    fn initial(&mut self, points: &[Vec<f64>], values: &[f64], trend: f64) -> Result<GpModel> {
        self.fits = 1;
        self.last_opt = points.len();
        self.last_full = points.len();
        GpModel::fit(points, values, trend, &self.opts, &mut self.rng)
    }

    /// Retrains after one new observation: full multi-start search whenever the
    /// design doubles, a warm-started search on geometric growth, otherwise the
    /// current hyperparameters conditioned on all data.
    fn update(&mut self, model: &GpModel, points: &[Vec<f64>], values: &[f64]) -> Result<GpModel> {
        self.fits += 1;
        let n = points.len();
        if n >= 2 * self.last_full {
            self.last_full = n;
            self.last_opt = n;
            let full = GpModel::fit(points, values, model.hyper().trend, &self.opts, &mut self.rng)?;
            let warm = model.refit(points, values, &self.opts)?;
            return Ok(if warm.hyper().neg_log_likelihood < full.hyper().neg_log_likelihood {
                warm
            } else {
                full
            });
        }
        if n as f64 >= self.growth * self.last_opt as f64 {
            self.last_opt = n;
            return model.refit(points, values, &self.opts);
        }
        model.condition(points, values, &self.opts)
    }
}

/// Builds a design containing at least `cfg.n_fail` failing points.
pub fn build_doe(ls: &LimitState, cfg: &DoeConfig, seed: u64) -> Result<DoeResult> {
    cfg.validate()?;
    let d = ls.dim();
    let q = ls.threshold();
    let cap = cfg.cap();
    let mut rng = stream(seed, 0, 0);
    let mut trainer = Trainer {
        opts: cfg.gp,
        growth: cfg.reoptimize_growth,
        last_opt: 0,
        last_full: 0,
        fits: 0,
        rng: stream(seed, 1, 0),
    };
    let draw = |rng: &mut Stream| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };

    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut design = Vec::new();
    let mut n_calls = 0u64;
    let mut record = |x: Vec<f64>, y: f64, chain: Option<usize>, idx: usize, points: &mut Vec<Vec<f64>>, values: &mut Vec<f64>| {
        points.push(x.clone());
        values.push(y);
        design.push(DesignPoint {
            x,
            g: y,
            is_failure: ls.is_failure(y),
            chain_id: chain,
            move_index: idx,
        });
        n_calls += 1;
    };

    for i in 0..=d {
        let x = draw(&mut rng);
        let y = ls.eval(&x)?;
        record(x, y, None, i, &mut points, &mut values);
    }
    let mut model = trainer.initial(&points, &values, q)?;
    let mut per_chain_moves = Vec::with_capacity(cfg.n_fail);
    let steps = cfg.kernel.burn_in;

    for chain in 0..cfg.n_fail {
        let mut x = draw(&mut rng);
        let mut y = ls.eval(&x)?;
        record(x.clone(), y, Some(chain), 0, &mut points, &mut values);
        model = trainer.update(&model, &points, &values)?;
        let mut moves = 1;
        while !ls.is_failure(y) {
            if moves >= cap {
                per_chain_moves.push(moves);
                let hyper = model.hyper().clone();
                return Err(Error::DoeIncomplete {
                    chain,
                    cap,
                    partial: Box::new(finish(d, q, design, n_calls, per_chain_moves, trainer.fits, hyper)),
                });
            }
            let mut cand = None;
            for _ in 0..cfg.max_idle_climbs.max(1) {
                let (c, _) = surrogate_climb(&x, y, &model, &cfg.kernel, steps, &mut rng);
                if c != x {
                    cand = Some(c);
                    break;
                }
            }
            let cand = cand.unwrap_or_else(|| {
                let mut c = vec![0.0; d];
                propose(&cfg.kernel, &x, &mut c, &mut rng);
                c
            });
            let yc = ls.eval(&cand)?;
            record(cand.clone(), yc, Some(chain), moves, &mut points, &mut values);
            model = trainer.update(&model, &points, &values)?;
            if yc >= y {
                x = cand;
                y = yc;
            }
            moves += 1;
        }
        per_chain_moves.push(moves);
    }
    let hyper = model.hyper().clone();
    Ok(finish(d, q, design, n_calls, per_chain_moves, trainer.fits, hyper))
}

fn finish(
    dim: usize,
    threshold: f64,
    design: Vec<DesignPoint>,
    n_calls: u64,
    per_chain_moves: Vec<usize>,
    fits: usize,
    hyper: GpHyper,
) -> DoeResult {
    DoeResult {
        dim,
        threshold,
        n_fail: design.iter().filter(|p| p.is_failure).count(),
        design,
        n_calls,
        per_chain_moves,
        fits,
        hyper,
    }
}
