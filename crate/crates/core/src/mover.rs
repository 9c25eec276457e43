//! Single-particle and population descents, event logs and the exact-sampling mode.
//!
//! A descent repeatedly resamples its lowest particle conditionally above that
//! particle's level. Mapped through the integrated hazard, the recorded levels
//! form a Poisson process of rate `N`; the [`EventLog`] is its empirical
//! realisation.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, KernelConfig, Lineage};
use crate::limit_state::{HazardView, LimitState};
use crate::rng::{self, Stream};

/// Consecutive uncounted attempts tolerated before a descent is declared stuck.
pub const MAX_STALLED_ATTEMPTS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle<P> {
    pub id: u64,
    pub position: P,
    pub level: f64,
    pub moves: u64,
    pub lineage: Lineage,
}

/// One logged attempt.
///
/// `m` is the number of counted moves of the descent once this event is applied;
/// initial draws carry `m = 0`. Uncounted attempts have `accepted = false` and
/// repeat the mover's unchanged level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub m: u64,
    pub level: f64,
    pub mark: u64,
    pub accepted: bool,
    pub calls_so_far: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub n_particles: usize,
    pub total_moves: u64,
    /// Every event of the underlying process at or below this level is in the log.
    pub complete_up_to: f64,
    /// Set when several events were produced by one concurrent batch.
    pub batch_ordering: Option<String>,
}

impl EventLog {
    /// Levels of accepted events (initial draws included), sorted ascending.
    pub fn sorted_levels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.events.iter().filter(|e| e.accepted).map(|e| e.level).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Accepted levels `≤ t`, sorted ascending.
    pub fn levels_up_to(&self, t: f64) -> Vec<f64> {
        let mut v = self.sorted_levels();
        v.truncate(v.partition_point(|&l| l <= t));
        v
    }

    pub fn count_at_or_below(&self, t: f64) -> usize {
        self.events.iter().filter(|e| e.accepted && e.level <= t).count()
    }

    pub fn n_calls(&self) -> u64 {
        self.events.iter().map(|e| e.calls_so_far).max().unwrap_or(0)
    }

    pub fn attempts(&self) -> usize {
        self.events.iter().filter(|e| e.m > 0 || !e.accepted).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# n_particles={} total_moves={} complete_up_to={}",
            self.n_particles, self.total_moves, self.complete_up_to
        )?;
        if let Some(order) = &self.batch_ordering {
            writeln!(out, "# ordering={order}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for e in &self.events {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut n_particles = 0;
        let mut total_moves = 0;
        let mut complete_up_to = f64::INFINITY;
        let mut batch_ordering = None;
        let mut body = String::new();
        let mut line = String::new();
        while input.read_line(&mut line)? > 0 {
            if let Some(meta) = line.trim().strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    let Some((k, v)) = kv.split_once('=') else { continue };
                    match k {
                        "n_particles" => n_particles = parse_header(kv, v)?,
                        "total_moves" => total_moves = parse_header(kv, v)?,
                        "complete_up_to" => complete_up_to = parse_header(kv, v)?,
                        "ordering" => batch_ordering = Some(v.to_string()),
                        _ => {}
                    }
                }
            } else {
                body.push_str(&line);
            }
            line.clear();
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let events = r.deserialize().collect::<std::result::Result<Vec<Event>, _>>()?;
        Ok(Self {
            events,
            n_particles,
            total_moves,
            complete_up_to,
            batch_ordering,
        })
    }
}

fn parse_header<T: std::str::FromStr>(kv: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("bad event log header `{kv}`")))
}

/// Merges worker logs into one log sorted by level. Marks are offset so that
/// particles of different workers stay distinct.
pub fn merge_logs(logs: &[EventLog]) -> EventLog {
    let mut events = Vec::with_capacity(logs.iter().map(|l| l.events.len()).sum());
    let mut offset = 0u64;
    for log in logs {
        events.extend(log.events.iter().map(|e| Event {
            mark: e.mark + offset,
            ..*e
        }));
        offset += log.n_particles as u64;
    }
    events.sort_by(|a, b| a.level.total_cmp(&b.level));
    EventLog {
        events,
        n_particles: logs.iter().map(|l| l.n_particles).sum(),
        total_moves: logs.iter().map(|l| l.total_moves).sum(),
        complete_up_to: logs
            .iter()
            .map(|l| l.complete_up_to)
            .fold(f64::INFINITY, f64::min),
        batch_ordering: logs.iter().find_map(|l| l.batch_ordering.clone()),
    }
}

/// Outcome of one conditional resampling.
#[derive(Debug, Clone)]
pub struct Resampled<P> {
    pub position: P,
    pub level: f64,
    pub accepted: bool,
    pub calls: u64,
}

/// Source of initial draws and conditional resamplings.
pub trait Sampler: Sync {
    type Position: Clone + Send + Sync;

    fn initial(&self, rng: &mut Stream) -> Result<Resampled<Self::Position>>;

    /// Sample above `threshold` starting from a seed whose level exceeds it.
    fn resample(
        &self,
        seed: &Self::Position,
        seed_level: f64,
        threshold: f64,
        rng: &mut Stream,
    ) -> Result<Resampled<Self::Position>>;

    /// Whether the seed position matters; exact samplers skip seed selection.
    fn uses_seed(&self) -> bool {
        true
    }
}

/// Markov-chain conditional sampling on a limit-state.
#[derive(Debug, Clone, Copy)]
pub struct McmcSampler<'a> {
    pub ls: &'a LimitState,
    pub cfg: KernelConfig,
}

impl<'a> McmcSampler<'a> {
    pub fn new(ls: &'a LimitState, cfg: KernelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { ls, cfg })
    }
}

impl Sampler for McmcSampler<'_> {
    type Position = Vec<f64>;

    fn initial(&self, rng: &mut Stream) -> Result<Resampled<Vec<f64>>> {
        let x: Vec<f64> = (0..self.ls.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let level = self.ls.eval(&x)?;
        Ok(Resampled {
            position: x,
            level,
            accepted: true,
            calls: 1,
        })
    }

    fn resample(&self, seed: &Vec<f64>, seed_level: f64, threshold: f64, rng: &mut Stream) -> Result<Resampled<Vec<f64>>> {
        let out = kernel::transition(seed, seed_level, threshold, &self.cfg, self.ls, rng)?;
        Ok(Resampled {
            position: out.position,
            level: out.level,
            accepted: out.accepted,
            calls: out.calls,
        })
    }
}

/// Exact conditional sampling through `Λ⁻¹`; levels only, one "call" per draw.
#[derive(Debug, Clone)]
pub struct IdealSampler {
    hazard: HazardView,
}

impl IdealSampler {
    pub fn new(hazard: HazardView) -> Result<Self> {
        if !hazard.has_inverse() {
            return Err(Error::Unsupported("ideal mode".into()));
        }
        Ok(Self { hazard })
    }

    fn draw(&self, from: f64, rng: &mut Stream) -> Result<f64> {
        let e: f64 = Exp1.sample(rng);
        let t = self.hazard.lambda(from) + e;
        let level = self
            .hazard
            .inverse_lambda(t)
            .ok_or_else(|| Error::Unsupported("ideal mode".into()))?;
        if level.is_finite() {
            Ok(level)
        } else {
            Err(Error::Evaluation {
                id: "ideal".into(),
                value: level,
            })
        }
    }
}

impl Sampler for IdealSampler {
    type Position = ();

    fn initial(&self, rng: &mut Stream) -> Result<Resampled<()>> {
        Ok(Resampled {
            position: (),
            level: self.draw(f64::NEG_INFINITY, rng)?,
            accepted: true,
            calls: 1,
        })
    }

    fn resample(&self, _seed: &(), _seed_level: f64, threshold: f64, rng: &mut Stream) -> Result<Resampled<()>> {
        Ok(Resampled {
            position: (),
            level: self.draw(threshold, rng)?,
            accepted: true,
            calls: 1,
        })
    }

    fn uses_seed(&self) -> bool {
        false
    }
}

/// Stopping rule, evaluated on the population's minimum level or move count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    /// Stop once every particle has level `≥ q`.
    Level(f64),
    /// Stop once the descent has counted this many moves.
    Moves(u64),
}

/// A resumable population descent.
pub struct Population<'s, S: Sampler> {
    sampler: &'s S,
    particles: Vec<Particle<S::Position>>,
    events: Vec<Event>,
    moves: u64,
    calls: u64,
    next_state: u64,
    stalled: u64,
    batched: bool,
}

impl<'s, S: Sampler> Population<'s, S> {
    /// Draws `n` particles independently from the input law.
    pub fn new(sampler: &'s S, n: usize, rng: &mut Stream) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("population needs at least one particle".into()));
        }
        let mut pop = Self {
            sampler,
            particles: Vec::with_capacity(n),
            events: Vec::with_capacity(n * 16),
            moves: 0,
            calls: 0,
            next_state: n as u64,
            stalled: 0,
            batched: false,
        };
        for i in 0..n {
            let draw = sampler.initial(rng)?;
            pop.calls += draw.calls;
            pop.particles.push(Particle {
                id: i as u64,
                position: draw.position,
                level: draw.level,
                moves: 0,
                lineage: Lineage::root(i as u64),
            });
            pop.events.push(Event {
                m: 0,
                level: draw.level,
                mark: i as u64,
                accepted: true,
                calls_so_far: pop.calls,
            });
        }
        Ok(pop)
    }

    pub fn particles(&self) -> &[Particle<S::Position>] {
        &self.particles
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn moves(&self) -> u64 {
        self.moves
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn min_level(&self) -> f64 {
        self.particles.iter().map(|p| p.level).fold(f64::INFINITY, f64::min)
    }

    pub fn is_done(&self, stop: Stop) -> bool {
        match stop {
            Stop::Level(q) => self.min_level() >= q,
            Stop::Moves(m) => self.moves >= m,
        }
    }

    /// Index of a lowest particle, ties broken uniformly. Always consumes one draw.
    fn argmin(&self, rng: &mut Stream) -> usize {
        let min = self.min_level();
        let ties = self.particles.iter().filter(|p| p.level == min).count();
        let pick = rng.random_range(0..ties.max(1));
        self.particles
            .iter()
            .enumerate()
            .filter(|(_, p)| p.level == min)
            .nth(pick)
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_state;
        self.next_state += 1;
        id
    }

    /// Chooses a seed for particle `i` among particles outside `excluded`
    /// (which always contains `i`). Returns `(seed index, count only if accepted)`.
    fn choose_seed(&self, i: usize, excluded: &[bool], rng: &mut Stream) -> Result<(usize, bool)> {
        if !self.sampler.uses_seed() {
            return Ok((i, false));
        }
        let level = self.particles[i].level;
        let idx: Vec<usize> = (0..self.particles.len())
            .filter(|&j| !excluded[j] && self.particles[j].level > level)
            .collect();
        if idx.is_empty() {
            return Ok((i, true));
        }
        let lineages: Vec<Lineage> = idx.iter().map(|&j| self.particles[j].lineage).collect();
        let choice = kernel::select_seed(&lineages, &self.particles[i].lineage, rng)?;
        Ok((idx[choice.index], choice.count_only_if_accepted))
    }

    /// Applies a resampling outcome to particle `i`; returns whether the move counted.
    fn apply(&mut self, i: usize, seed: usize, conditional: bool, out: Resampled<S::Position>) -> Result<bool> {
        self.calls += out.calls;
        let counted = out.accepted || !conditional;
        if counted {
            let seed_lineage = self.particles[seed].lineage;
            let id = self.fresh_id();
            let p = &mut self.particles[i];
            p.lineage = if out.accepted {
                Lineage::fresh_from(id, &seed_lineage)
            } else {
                Lineage::replica_of(id, &seed_lineage)
            };
            p.position = out.position;
            p.level = out.level;
            p.moves += 1;
            self.moves += 1;
            self.stalled = 0;
        } else {
            self.stalled += 1;
            if self.stalled >= MAX_STALLED_ATTEMPTS {
                return Err(Error::Stalled {
                    attempts: self.stalled,
                });
            }
        }
        let p = &self.particles[i];
        self.events.push(Event {
            m: self.moves,
            level: p.level,
            mark: p.id,
            accepted: counted,
            calls_so_far: self.calls,
        });
        Ok(counted)
    }

    /// One move attempt on the lowest particle. Returns whether it counted.
    pub fn step(&mut self, rng: &mut Stream) -> Result<bool> {
        let i = self.argmin(rng);
        let mut excluded = vec![false; self.particles.len()];
        excluded[i] = true;
        let (seed, conditional) = self.choose_seed(i, &excluded, rng)?;
        let threshold = self.particles[i].level;
        let s = &self.particles[seed];
        let out = self.sampler.resample(&s.position, s.level, threshold, rng)?;
        self.apply(i, seed, conditional, out)
    }

    pub fn run(&mut self, stop: Stop, rng: &mut Stream) -> Result<()> {
        while !self.is_done(stop) {
            self.step(rng)?;
        }
        Ok(())
    }

    /// Moves up to `k` lowest particles concurrently, seeding only from particles
    /// outside the batch. Particles already satisfying a level stop are left alone,
    /// and a move stop never overshoots. Returns the number of counted moves.
    pub fn step_batch(&mut self, k: usize, stop: Stop, rng: &mut Stream) -> Result<usize> {
        let n = self.particles.len();
        if k == 0 || k >= n {
            return Err(Error::InvalidConfig(format!(
                "batch size must satisfy 1 ≤ k ≤ N−1, got k={k}, N={n}"
            )));
        }
        self.batched = true;
        let k = match stop {
            Stop::Moves(m) => k.min(m.saturating_sub(self.moves) as usize),
            Stop::Level(_) => k,
        };
        // lowest first; random keys break ties uniformly
        let mut order: Vec<(f64, u64, usize)> =
            (0..n).map(|i| (self.particles[i].level, rng.random::<u64>(), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let batch: Vec<usize> = order
            .iter()
            .filter(|(l, _, _)| match stop {
                Stop::Level(q) => *l < q,
                Stop::Moves(_) => true,
            })
            .take(k)
            .map(|&(_, _, i)| i)
            .collect();
        let mut excluded = vec![false; n];
        for &i in &batch {
            excluded[i] = true;
        }
        let mut jobs = Vec::with_capacity(batch.len());
        for &i in &batch {
            let (seed, conditional) = self.choose_seed(i, &excluded, rng)?;
            jobs.push((i, seed, conditional, rng::child(rng)));
        }
        let sampler = self.sampler;
        let particles = &self.particles;
        let outs: Vec<Result<Resampled<S::Position>>> = jobs
            .par_iter_mut()
            .map(|(i, seed, _, r)| {
                let s = &particles[*seed];
                sampler.resample(&s.position, s.level, particles[*i].level, r)
            })
            .collect();
        let mut results = Vec::with_capacity(outs.len());
        for ((i, seed, conditional, _), out) in jobs.into_iter().zip(outs) {
            results.push((i, seed, conditional, out?));
        }
        // log in order of resulting level
        results.sort_by(|a, b| a.3.level.total_cmp(&b.3.level));
        let mut counted = 0;
        for (i, seed, conditional, out) in results {
            counted += self.apply(i, seed, conditional, out)? as usize;
        }
        Ok(counted)
    }

    pub fn run_batched(&mut self, k: usize, stop: Stop, rng: &mut Stream) -> Result<()> {
        while !self.is_done(stop) {
            self.step_batch(k, stop, rng)?;
        }
        Ok(())
    }

    pub fn log(&self) -> EventLog {
        EventLog {
            events: self.events.clone(),
            n_particles: self.particles.len(),
            total_moves: self.moves,
            complete_up_to: self.min_level(),
            batch_ordering: self.batched.then(|| "post-move-level".to_string()),
        }
    }

    pub fn into_log(self) -> EventLog {
        let complete_up_to = self.min_level();
        EventLog {
            n_particles: self.particles.len(),
            total_moves: self.moves,
            complete_up_to,
            batch_ordering: self.batched.then(|| "post-move-level".to_string()),
            events: self.events,
        }
    }
}

/// Descent of a single particle.
pub fn descend_single(ls: &LimitState, stop: Stop, cfg: &KernelConfig, rng: &mut Stream) -> Result<EventLog> {
    descend_population(1, ls, stop, cfg, rng)
}

/// Descent of `n` particles with Markov-chain resampling.
pub fn descend_population(
    n: usize,
    ls: &LimitState,
    stop: Stop,
    cfg: &KernelConfig,
    rng: &mut Stream,
) -> Result<EventLog> {
    let sampler = McmcSampler::new(ls, *cfg)?;
    let mut pop = Population::new(&sampler, n, rng)?;
    pop.run(stop, rng)?;
    Ok(pop.into_log())
}

/// Descent moving the `k` lowest particles at once.
pub fn descend_population_kbatch(
    n: usize,
    k: usize,
    ls: &LimitState,
    stop: Stop,
    cfg: &KernelConfig,
    rng: &mut Stream,
) -> Result<EventLog> {
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "batch size must satisfy 1 ≤ k ≤ N−1, got k={k}, N={n}"
        )));
    }
    let sampler = McmcSampler::new(ls, *cfg)?;
    let mut pop = Population::new(&sampler, n, rng)?;
    pop.run_batched(k, stop, rng)?;
    Ok(pop.into_log())
}

/// Descent with exact conditional sampling.
pub fn ideal_descend(hazard: &HazardView, n: usize, stop: Stop, rng: &mut Stream) -> Result<EventLog> {
    let sampler = IdealSampler::new(hazard.clone())?;
    let mut pop = Population::new(&sampler, n, rng)?;
    pop.run(stop, rng)?;
    Ok(pop.into_log())
}

/// Same as [`ideal_descend`] with `k`-batch moves.
pub fn ideal_descend_kbatch(hazard: &HazardView, n: usize, k: usize, stop: Stop, rng: &mut Stream) -> Result<EventLog> {
    let sampler = IdealSampler::new(hazard.clone())?;
    let mut pop = Population::new(&sampler, n, rng)?;
    pop.run_batched(k, stop, rng)?;
    Ok(pop.into_log())
}
