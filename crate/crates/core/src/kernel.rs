//! Conditional sampling from `μ(· | level > q)` by reversible Markov transitions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit_state::LimitState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    MetropolisHastings,
    #[default]
    DirectGaussian,
}

/// Increment law `W` of the Metropolis-Hastings proposal `x + σW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum Proposal {
    #[default]
    Gaussian,
    /// Independent uniform coordinates on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub sigma: f64,
    pub burn_in: usize,
    pub proposal: Proposal,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::DirectGaussian,
            sigma: 0.3,
            burn_in: 20,
            proposal: Proposal::Gaussian,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "kernel.sigma must be a non-negative real, got {}",
                self.sigma
            )));
        }
        if self.burn_in == 0 {
            return Err(Error::InvalidConfig("kernel.burn_in must be at least 1".into()));
        }
        if let Proposal::Uniform { half_width } = self.proposal {
            if !(half_width > 0.0) {
                return Err(Error::InvalidConfig(
                    "uniform proposal half_width must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Result of a single kernel step or of a full transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub position: Vec<f64>,
    pub level: f64,
    pub accepted: bool,
    pub calls: u64,
}

fn draw_increment<R: Rng + ?Sized>(proposal: Proposal, rng: &mut R) -> f64 {
    match proposal {
        Proposal::Gaussian => StandardNormal.sample(rng),
        Proposal::Uniform { half_width } => rng.random_range(-half_width..=half_width),
    }
}

/// Writes a proposal from `x` into `out`; the density-free form used by the
/// direct kernel and the surrogate climb.
pub(crate) fn propose<R: Rng + ?Sized>(cfg: &KernelConfig, x: &[f64], out: &mut [f64], rng: &mut R) {
    match cfg.kind {
        KernelKind::DirectGaussian => {
            let scale = (1.0 + cfg.sigma * cfg.sigma).sqrt().recip();
            for (o, &xi) in out.iter_mut().zip(x) {
                let w: f64 = StandardNormal.sample(rng);
                *o = (xi + cfg.sigma * w) * scale;
            }
        }
        KernelKind::MetropolisHastings => {
            for (o, &xi) in out.iter_mut().zip(x) {
                *o = xi + cfg.sigma * draw_increment(cfg.proposal, rng);
            }
        }
    }
}

/// One step in place. Returns `(accepted, called_g)`.
fn step_in_place<R: Rng + ?Sized>(
    x: &mut Vec<f64>,
    level: &mut f64,
    scratch: &mut Vec<f64>,
    q: f64,
    cfg: &KernelConfig,
    ls: &LimitState,
    log_pdf: &dyn Fn(&[f64]) -> f64,
    rng: &mut R,
) -> Result<(bool, bool)> {
    scratch.resize(x.len(), 0.0);
    propose(cfg, x, scratch, rng);
    if cfg.kind == KernelKind::MetropolisHastings {
        // density ratio decides first; g is only called if it could accept
        let log_ratio = log_pdf(scratch) - log_pdf(x);
        let u: f64 = rng.random();
        if log_ratio < 0.0 && u >= log_ratio.exp() {
            return Ok((false, false));
        }
    }
    let candidate = ls.eval(scratch)?;
    if candidate > q {
        std::mem::swap(x, scratch);
        *level = candidate;
        Ok((true, true))
    } else {
        Ok((false, true))
    }
}

/// Metropolis-Hastings step targeting `f_X · 1{g > q}`.
pub fn mh_step<R: Rng + ?Sized>(
    x: &[f64],
    level: f64,
    q: f64,
    cfg: &KernelConfig,
    ls: &LimitState,
    log_pdf: &dyn Fn(&[f64]) -> f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let cfg = KernelConfig {
        kind: KernelKind::MetropolisHastings,
        ..*cfg
    };
    let mut pos = x.to_vec();
    let mut lvl = level;
    let mut scratch = Vec::with_capacity(x.len());
    let (accepted, called) = step_in_place(&mut pos, &mut lvl, &mut scratch, q, &cfg, ls, log_pdf, rng)?;
    Ok(StepOutcome {
        position: pos,
        level: lvl,
        accepted,
        calls: called as u64,
    })
}

/// Direct reversible step for standard Gaussian inputs: `(x + σW)/√(1+σ²)`.
pub fn direct_gaussian_step<R: Rng + ?Sized>(
    x: &[f64],
    level: f64,
    q: f64,
    cfg: &KernelConfig,
    ls: &LimitState,
    rng: &mut R,
) -> Result<StepOutcome> {
    let cfg = KernelConfig {
        kind: KernelKind::DirectGaussian,
        ..*cfg
    };
    let mut pos = x.to_vec();
    let mut lvl = level;
    let mut scratch = Vec::with_capacity(x.len());
    let no_density = |_: &[f64]| 0.0;
    let (accepted, _) = step_in_place(&mut pos, &mut lvl, &mut scratch, q, &cfg, ls, &no_density, rng)?;
    Ok(StepOutcome {
        position: pos,
        level: lvl,
        accepted,
        calls: 1,
    })
}

/// `burn_in` successive steps from `x` (which must satisfy `level > q`).
/// `accepted` reports whether at least one step moved the chain.
pub fn transition<R: Rng + ?Sized>(
    x: &[f64],
    level: f64,
    q: f64,
    cfg: &KernelConfig,
    ls: &LimitState,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut pos = x.to_vec();
    let mut lvl = level;
    let mut scratch = Vec::with_capacity(x.len());
    let mut any = false;
    let mut calls = 0;
    let log_pdf = |v: &[f64]| ls.log_density(v);
    for _ in 0..cfg.burn_in {
        let (accepted, called) = step_in_place(&mut pos, &mut lvl, &mut scratch, q, cfg, ls, &log_pdf, rng)?;
        any |= accepted;
        calls += called as u64;
    }
    Ok(StepOutcome {
        position: pos,
        level: lvl,
        accepted: any,
        calls,
    })
}

/// Genealogy of a particle state, used to keep a mover from restarting on its
/// own offspring.
///
/// A freshly generated state has `parent_id` set to the origin of its seed. A
/// replica (every burn-in step rejected) is a copy of its seed: it inherits the
/// seed's parent and records the seed's origin in `is_replica_of`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub particle_id: u64,
    pub parent_id: Option<u64>,
    pub is_replica_of: Option<u64>,
}

impl Lineage {
    pub fn root(id: u64) -> Self {
        Self {
            particle_id: id,
            parent_id: None,
            is_replica_of: None,
        }
    }

    /// Identity of the sample this state is (replicas share their original's).
    pub fn origin(&self) -> u64 {
        self.is_replica_of.unwrap_or(self.particle_id)
    }

    pub fn fresh_from(id: u64, seed: &Lineage) -> Self {
        Self {
            particle_id: id,
            parent_id: Some(seed.origin()),
            is_replica_of: None,
        }
    }

    pub fn replica_of(id: u64, seed: &Lineage) -> Self {
        Self {
            particle_id: id,
            parent_id: seed.parent_id,
            is_replica_of: Some(seed.origin()),
        }
    }

    /// True when `self` is a son of `mover`, a replica of such a son, or a copy of
    /// the mover itself.
    pub fn descends_from(&self, mover: &Lineage) -> bool {
        self.parent_id == Some(mover.origin()) || self.origin() == mover.origin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedChoice {
    /// Index into the candidate slice.
    pub index: usize,
    /// Set when no eligible seed existed: the move counts only if a transition
    /// is accepted.
    pub count_only_if_accepted: bool,
}

/// Picks a seed uniformly among candidates that do not descend from the mover,
/// falling back to all candidates when every one of them does.
pub fn select_seed<R: Rng + ?Sized>(candidates: &[Lineage], mover: &Lineage, rng: &mut R) -> Result<SeedChoice> {
    if candidates.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let eligible = candidates.iter().filter(|c| !c.descends_from(mover)).count();
    if eligible == 0 {
        return Ok(SeedChoice {
            index: rng.random_range(0..candidates.len()),
            count_only_if_accepted: true,
        });
    }
    let pick = rng.random_range(0..eligible);
    let index = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.descends_from(mover))
        .nth(pick)
        .map(|(i, _)| i)
        .expect("pick < eligible");
    Ok(SeedChoice {
        index,
        count_only_if_accepted: false,
    })
}
