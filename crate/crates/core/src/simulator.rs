//! Semi-Markov simulation with common random numbers.
//!
//! Each rollout seed owns independent ChaCha streams per event type, so every
//! policy sees the same arrival epochs and the same k-th service or switch-over
//! duration of each kind.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{exhaustive_policy, heuristic_policy, HeuristicParams, LimitCycle};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::solver::PolicyTable;
use crate::state::Action;

/// Simulated queues may grow to this multiple of the model capacity.
pub const QUEUE_CAP_FACTOR: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum EventTag {
    Arrival1 = 0,
    Arrival2 = 1,
    Serve1 = 2,
    Serve2 = 3,
    Switch12 = 4,
    Switch21 = 5,
    Initial = 6,
}

/// Independent deterministic substreams for one base seed.
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed }
    }

    pub fn stream(&self, tag: EventTag) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tag as u64);
        rng
    }
}

/// Policy consulted by the simulator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SimPolicy {
    Table(PolicyTable),
    Exhaustive,
    Heuristic(HeuristicParams),
}

impl SimPolicy {
    /// `flag` is the heuristic's per-visit memory; other policies ignore it.
    pub fn decide(&self, n1: usize, n2: usize, l1: usize, flag: &mut bool) -> Action {
        match self {
            SimPolicy::Table(t) => t.action(n1, n2, l1),
            SimPolicy::Exhaustive => exhaustive_policy(n1, n2, l1),
            SimPolicy::Heuristic(p) => {
                let (a, f) = heuristic_policy(p, n1, n2, l1, *flag);
                *flag = f;
                a
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialDist {
    /// Uniform over `0..=x1`, `0..=x2` and both server locations.
    Uniform { x1: usize, x2: usize },
    Fixed { n1: usize, n2: usize, l1: usize },
}

impl InitialDist {
    pub fn uniform(cfg: &ScenarioConfig) -> Self {
        InitialDist::Uniform { x1: cfg.x1, x2: cfg.x2 }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
        match *self {
            InitialDist::Uniform { x1, x2 } => (rng.random_range(0..=x1), rng.random_range(0..=x2), rng.random_range(0..2)),
            InitialDist::Fixed { n1, n2, l1 } => (n1, n2, l1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub n1: usize,
    pub n2: usize,
    pub l1: usize,
    pub action: Action,
    /// Cost of the step discounted to its own start.
    pub cost: f64,
    pub dt: f64,
    pub t: f64,
    /// Arrivals during the step as `(offset from step start, queue)`.
    pub arrivals: Vec<(f64, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub steps: Vec<TraceStep>,
    pub horizon: f64,
}

#[derive(Clone, Debug)]
pub struct RolloutOutcome {
    pub cost: f64,
    pub trace: Option<RolloutTrace>,
}

/// `(c / beta)(e^{-beta t} - e^{-beta dt})`: discounted cost of rate `c` held from `t` to `dt`.
#[inline]
pub fn z_cost(c: f64, t: f64, dt: f64, beta: f64) -> f64 {
    c / beta * ((-beta * t).exp() - (-beta * dt).exp())
}

/// Cost of one step: the customers present over the whole step plus each arrival from its epoch.
pub fn step_wise_cost(n1: usize, n2: usize, arrivals: &[(f64, usize)], dt: f64, c1: f64, c2: f64, beta: f64) -> f64 {
    let held = c1 * n1 as f64 + c2 * n2 as f64;
    let mut cost = z_cost(held, 0.0, dt, beta);
    for &(t, q) in arrivals {
        cost += z_cost(if q == 0 { c1 } else { c2 }, t, dt, beta);
    }
    cost
}

struct ArrivalClock {
    rate: f64,
    next: f64,
    rng: ChaCha8Rng,
}

impl ArrivalClock {
    fn new(rate: f64, mut rng: ChaCha8Rng) -> Self {
        let next = if rate > 0.0 { exp_gap(rate, &mut rng) } else { f64::INFINITY };
        ArrivalClock { rate, next, rng }
    }

    fn advance(&mut self) {
        self.next += exp_gap(self.rate, &mut self.rng);
    }
}

fn exp_gap(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    -(-u).ln_1p() / rate
}

/// One discounted rollout up to the first epoch at or after `horizon`.
pub fn rollout(cfg: &ScenarioConfig, policy: &SimPolicy, initial: &InitialDist, seed: u64, horizon: f64, record: bool) -> Result<RolloutOutcome> {
    assert!(horizon > 0.0, "horizon must be positive");
    let streams = SeedStream::new(seed);
    let (mut n1, mut n2, mut l1) = initial.draw(&mut streams.stream(EventTag::Initial));
    let mut clocks = [
        ArrivalClock::new(cfg.lambda1, streams.stream(EventTag::Arrival1)),
        ArrivalClock::new(cfg.lambda2, streams.stream(EventTag::Arrival2)),
    ];
    let mut serve_rng = [streams.stream(EventTag::Serve1), streams.stream(EventTag::Serve2)];
    let mut switch_rng = [streams.stream(EventTag::Switch12), streams.stream(EventTag::Switch21)];
    let caps = [QUEUE_CAP_FACTOR * cfg.x1, QUEUE_CAP_FACTOR * cfg.x2];

    let mut t = 0.0;
    let mut total = 0.0;
    let mut flag = false;
    let mut trace = record.then(|| RolloutTrace { steps: Vec::new(), horizon });
    let mut arrivals = Vec::new();
    while t < horizon {
        let action = policy.decide(n1, n2, l1, &mut flag);
        let dt = match action {
            Action::Serve => {
                if (if l1 == 0 { n1 } else { n2 }) == 0 {
                    return Err(Error::InfeasibleDecision { n1, n2, l1, action });
                }
                cfg.serve(l1).sample(&mut serve_rng[l1])
            }
            Action::Switch => cfg.switch_from(l1).sample(&mut switch_rng[l1]),
            Action::Idle => {
                let next = clocks[0].next.min(clocks[1].next);
                if !next.is_finite() {
                    break;
                }
                next - t
            }
        };
        let end = t + dt;
        arrivals.clear();
        for (q, clock) in clocks.iter_mut().enumerate() {
            while clock.next <= end {
                arrivals.push((clock.next - t, q));
                clock.advance();
            }
        }
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let cost = step_wise_cost(n1, n2, &arrivals, dt, cfg.c1, cfg.c2, cfg.beta);
        total += (-cfg.beta * t).exp() * cost;
        if let Some(tr) = trace.as_mut() {
            tr.steps.push(TraceStep { n1, n2, l1, action, cost, dt, t, arrivals: arrivals.clone() });
        }
        for &(_, q) in &arrivals {
            if q == 0 {
                n1 += 1;
            } else {
                n2 += 1;
            }
        }
        match action {
            Action::Serve if l1 == 0 => n1 -= 1,
            Action::Serve => n2 -= 1,
            Action::Switch => l1 = 1 - l1,
            Action::Idle => {}
        }
        for (q, len) in [n1, n2].into_iter().enumerate() {
            if len > caps[q] {
                return Err(Error::QueueOverflow { queue: q, len, cap: caps[q] });
            }
        }
        t = end;
    }
    Ok(RolloutOutcome { cost: total, trace })
}

#[derive(Clone, Copy, Debug)]
pub struct SampleOptions {
    pub rollouts: usize,
    pub horizon: f64,
    /// Rollout `k` uses seed `seed + k`.
    pub seed: u64,
    pub shuffle_seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

fn run_pool<T: Send, F: FnOnce() -> T + Send>(workers: Option<usize>, f: F) -> Result<T> {
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Empirical distribution of discounted rollout costs, shuffled to decouple policies sharing seeds.
pub fn sample_performance(cfg: &ScenarioConfig, policy: &SimPolicy, initial: &InitialDist, opts: &SampleOptions) -> Result<Vec<f64>> {
    if opts.rollouts < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: opts.rollouts });
    }
    let mut out = run_pool(opts.workers, || {
        (0..opts.rollouts)
            .into_par_iter()
            .map(|k| rollout(cfg, policy, initial, opts.seed.wrapping_add(k as u64), opts.horizon, false).map(|o| o.cost))
            .collect::<Result<Vec<f64>>>()
    })??;
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.shuffle_seed));
    Ok(out)
}

/// Recorded traces for rollouts `seed .. seed + count`.
pub fn sample_traces(cfg: &ScenarioConfig, policy: &SimPolicy, initial: &InitialDist, seed: u64, count: usize, horizon: f64, workers: Option<usize>) -> Result<Vec<RolloutTrace>> {
    run_pool(workers, || {
        (0..count)
            .into_par_iter()
            .map(|k| rollout(cfg, policy, initial, seed.wrapping_add(k as u64), horizon, true).map(|o| o.trace.unwrap()))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Visit frequencies of embedded states `(n1, n2, l1)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub counts: BTreeMap<(usize, usize, usize), u64>,
    pub total: u64,
    /// Visits with the server at queue 1 and queue 2.
    pub visits: [u64; 2],
}

impl FrequencyTable {
    pub fn freq(&self, n1: usize, n2: usize, l1: usize) -> f64 {
        self.counts.get(&(n1, n2, l1)).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    /// Queue-length marginal, summed over server locations.
    pub fn marginal(&self) -> BTreeMap<(usize, usize), f64> {
        let mut m = BTreeMap::new();
        for (&(a, b, _), &c) in &self.counts {
            *m.entry((a, b)).or_insert(0.0) += c as f64 / self.total as f64;
        }
        m
    }

    pub fn merge(&mut self, other: &FrequencyTable) {
        for (k, v) in &other.counts {
            *self.counts.entry(*k).or_insert(0) += v;
        }
        self.total += other.total;
        self.visits[0] += other.visits[0];
        self.visits[1] += other.visits[1];
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n1", "n2", "l1", "freq"]).map_err(crate::lattice::csv_err)?;
        for &(a, b, l) in self.counts.keys() {
            out.write_record([a.to_string(), b.to_string(), l.to_string(), self.freq(a, b, l).to_string()])
                .map_err(crate::lattice::csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn after_burn_in(trace: &RolloutTrace, burn_in: usize) -> Result<&[TraceStep]> {
    if trace.steps.len() <= burn_in {
        return Err(Error::TooFewSamples { needed: burn_in + 1, got: trace.steps.len() });
    }
    Ok(&trace.steps[burn_in..])
}

/// Default burn-in: 10% of the trace.
pub fn default_burn_in(trace: &RolloutTrace) -> usize {
    trace.steps.len() / 10
}

pub fn embedded_stationary(trace: &RolloutTrace, burn_in: usize) -> Result<FrequencyTable> {
    let mut table = FrequencyTable::default();
    for s in after_burn_in(trace, burn_in)? {
        *table.counts.entry((s.n1, s.n2, s.l1)).or_insert(0) += 1;
        table.total += 1;
        table.visits[s.l1] += 1;
    }
    Ok(table)
}

/// Time spent per action, overall and per server location.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionFractions {
    /// Fraction of time idling, serving, switching.
    pub fraction: [f64; 3],
    pub total_time: f64,
    /// Time per action with the server at queue 1 and queue 2.
    pub time: [[f64; 3]; 2],
}

impl ActionFractions {
    pub fn work(&self) -> f64 {
        self.fraction[Action::Serve.index()]
    }

    pub fn merge(&mut self, other: &ActionFractions) {
        for q in 0..2 {
            for a in 0..3 {
                self.time[q][a] += other.time[q][a];
            }
        }
        self.total_time += other.total_time;
        for a in 0..3 {
            self.fraction[a] = (self.time[0][a] + self.time[1][a]) / self.total_time;
        }
    }
}

pub fn action_time_fractions(trace: &RolloutTrace, burn_in: usize) -> Result<ActionFractions> {
    let mut out = ActionFractions::default();
    for s in after_burn_in(trace, burn_in)? {
        out.time[s.l1][s.action.index()] += s.dt;
    }
    out.total_time = out.time.iter().flatten().sum();
    for a in 0..3 {
        out.fraction[a] = (out.time[0][a] + out.time[1][a]) / out.total_time;
    }
    Ok(out)
}

/// Integer lattice points within one unit of the fluid cycle, sampled `grid` times per segment.
pub fn limit_cycle_hull(cycle: &LimitCycle, grid: usize) -> BTreeSet<(usize, usize)> {
    assert!(grid >= 1);
    let c = &cycle.corners;
    let mut set = BTreeSet::new();
    for k in 0..5 {
        let (a, b) = (c[k], c[(k + 1) % 5]);
        for i in 0..=grid {
            let w = i as f64 / grid as f64;
            let (y1, y2) = (a.0 + w * (b.0 - a.0), a.1 + w * (b.1 - a.1));
            for x1 in [y1.floor(), y1.ceil()] {
                for x2 in [y2.floor(), y2.ceil()] {
                    set.insert((x1.max(0.0) as usize, x2.max(0.0) as usize));
                }
            }
        }
    }
    set
}

/// Embedded-chain probability of queue lengths lying on the fluid limit cycle.
pub fn limit_cycle_occupancy(freq: &FrequencyTable, cycle: &LimitCycle, grid: usize) -> f64 {
    let marginal = freq.marginal();
    limit_cycle_hull(cycle, grid).iter().map(|k| marginal.get(k).copied().unwrap_or(0.0)).sum()
}

/// Time-stationary law from the embedded one: `phi_j ∝ embedded_j * E[dt_j]`.
pub fn overall_stationary(embedded: &[f64], mean_durations: &[f64]) -> Vec<f64> {
    assert_eq!(embedded.len(), mean_durations.len());
    let w: Vec<f64> = embedded.iter().zip(mean_durations).map(|(p, t)| p * t).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}
