//! Truncated bivariate Poisson birth process over arrival counts `(a1, a2)`.
//!
//! The transient law `phi(t)` is integrated by explicit Euler and then weighted
//! against a sojourn-time distribution to give the arrival-count distribution
//! seen by a decision event, plus the holding-cost integrals the SMDP needs.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::DurationDist;
use crate::error::{Error, Result};
use crate::index::StateIndexer;
use crate::scenario::{ScenarioConfig, TruncationMode};

/// Euler steps never exceed this multiple of the fastest exit time.
pub const STABILITY_FACTOR: f64 = 0.1;
/// Default Euler step as a multiple of the fastest exit time.
pub const DEFAULT_STEP_FACTOR: f64 = 0.005;
/// Default minimum number of Euler steps across an event's support.
pub const DEFAULT_MIN_STEPS: f64 = 20_000.0;

const CLAMP: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    pub n1: usize,
    pub n2: usize,
    pub mode: TruncationMode,
    /// Per row: diagonal first, then up to two birth entries.
    rows: Vec<Vec<(usize, f64)>>,
}

impl GeneratorMatrix {
    pub fn new<F>(n1: usize, n2: usize, mode: TruncationMode, rates: F) -> Self
    where
        F: Fn(usize, usize) -> (f64, f64),
    {
        let width = n2 + 1;
        let mut rows = Vec::with_capacity((n1 + 1) * width);
        for a1 in 0..=n1 {
            for a2 in 0..=n2 {
                let i = a1 * width + a2;
                let (l1, l2) = rates(a1, a2);
                let mut row = vec![(i, 0.0)];
                let mut out = 0.0;
                if a1 < n1 {
                    row.push((i + width, l1));
                    out += l1;
                } else if mode == TruncationMode::UnassignedOutflow {
                    out += l1;
                }
                if a2 < n2 {
                    row.push((i + 1, l2));
                    out += l2;
                } else if mode == TruncationMode::UnassignedOutflow {
                    out += l2;
                }
                row[0].1 = -out;
                row.retain(|&(j, v)| j == i || v != 0.0);
                rows.push(row);
            }
        }
        GeneratorMatrix { n1, n2, mode, rows }
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn indexer(&self) -> StateIndexer {
        StateIndexer::new(&[self.n1, self.n2])
    }

    #[inline]
    pub fn cell(&self, a1: usize, a2: usize) -> usize {
        a1 * (self.n2 + 1) + a2
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / (self.n2 + 1), idx % (self.n2 + 1))
    }

    /// Sparse row `i` as `(column, value)`, diagonal first.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|e| e.1).sum()
    }

    /// Largest total exit rate of any cell.
    pub fn max_exit_rate(&self) -> f64 {
        self.rows.iter().map(|r| -r[0].1).fold(0.0, f64::max)
    }

    /// `out = phi Q`.
    pub fn left_mul(&self, phi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let p = phi[i];
            if p == 0.0 {
                continue;
            }
            for &(j, q) in row {
                out[j] += p * q;
            }
        }
    }

    /// Expected-arrival cost rate per cell, `c1 a1 + c2 a2`.
    pub fn cell_costs(&self, c1: f64, c2: f64) -> Vec<f64> {
        (0..self.size())
            .map(|i| {
                let (a1, a2) = self.coords(i);
                c1 * a1 as f64 + c2 * a2 as f64
            })
            .collect()
    }
}

pub fn build_generator(cfg: &ScenarioConfig) -> GeneratorMatrix {
    GeneratorMatrix::new(cfg.n1, cfg.n2, cfg.truncation_mode, |a1, a2| cfg.rates_at(a1, a2))
}

/// Default Euler step for integrating up to `t_end`.
pub fn default_step(gen: &GeneratorMatrix, t_end: f64) -> f64 {
    let g = gen.max_exit_rate();
    let by_rate = if g > 0.0 { DEFAULT_STEP_FACTOR / g } else { f64::INFINITY };
    by_rate.min(t_end / DEFAULT_MIN_STEPS).max(f64::MIN_POSITIVE)
}

/// Explicit Euler march of `d phi / dt = phi Q` from unit mass at the origin.
pub struct EulerStepper<'a> {
    gen: &'a GeneratorMatrix,
    dt: f64,
    step: usize,
    phi: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> EulerStepper<'a> {
    pub fn new(gen: &'a GeneratorMatrix, dt: f64) -> Result<Self> {
        let g = gen.max_exit_rate();
        if g > 0.0 && dt > STABILITY_FACTOR / g {
            return Err(Error::UnstableStep { dt, bound: STABILITY_FACTOR / g });
        }
        let mut phi = vec![0.0; gen.size()];
        phi[0] = 1.0;
        Ok(EulerStepper { gen, dt, step: 0, phi, scratch: vec![0.0; gen.size()] })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn advance(&mut self) -> Result<()> {
        self.gen.left_mul(&self.phi, &mut self.scratch);
        self.step += 1;
        for (cell, (p, d)) in self.phi.iter_mut().zip(&self.scratch).enumerate() {
            *p += self.dt * d;
            if *p < 0.0 {
                if *p < -CLAMP {
                    return Err(Error::NegativeProbability { value: *p, cell, step: self.step });
                }
                *p = 0.0;
            }
        }
        Ok(())
    }
}

/// Stored transient solution on a uniform grid `t_k = k dt`.
#[derive(Clone, Debug)]
pub struct TransientMesh {
    pub n1: usize,
    pub n2: usize,
    pub dt: f64,
    pub phi: Vec<Vec<f64>>,
}

impl TransientMesh {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    /// Linear interpolation between grid points.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let x = (t / self.dt).max(0.0);
        let k = (x.floor() as usize).min(self.len() - 1);
        if k + 1 >= self.len() {
            return self.phi[k].clone();
        }
        let w = x - k as f64;
        self.phi[k].iter().zip(&self.phi[k + 1]).map(|(a, b)| a + w * (b - a)).collect()
    }

    /// Columns `t, idx, n1, n2, phi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "idx", "n1", "n2", "phi"]).map_err(csv_err)?;
        let width = self.n2 + 1;
        for (k, phi) in self.phi.iter().enumerate() {
            let t = self.time(k).to_string();
            for (i, p) in phi.iter().enumerate() {
                let rec = [t.clone(), i.to_string(), (i / width).to_string(), (i % width).to_string(), p.to_string()];
                out.write_record(&rec).map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn transient_mesh(gen: &GeneratorMatrix, t_end: f64, dt: f64) -> Result<TransientMesh> {
    let mut stepper = EulerStepper::new(gen, dt)?;
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut phi = Vec::with_capacity(steps + 1);
    phi.push(stepper.phi().to_vec());
    for _ in 0..steps {
        stepper.advance()?;
        phi.push(stepper.phi().to_vec());
    }
    Ok(TransientMesh { n1: gen.n1, n2: gen.n2, dt, phi })
}

/// Sequential accumulator for the integrals an event needs.
///
/// Samples `(t, phi(t))` arrive in time order. Integrals against `f_e` use the
/// trapezoid rule in `phi` with cdf increments as weights, which is exact in
/// mass and tolerates densities that are unbounded at the origin.
struct EventIntegrator<'a> {
    dist: &'a DurationDist,
    beta: f64,
    cell_costs: Option<&'a [f64]>,
    plain: Vec<f64>,
    discounted: Vec<f64>,
    prev: Option<Sample>,
    inner: f64,
    arrival_cost: f64,
}

struct Sample {
    t: f64,
    cdf: f64,
    disc: f64,
    phi: Vec<f64>,
    cost_rate: f64,
}

impl<'a> EventIntegrator<'a> {
    fn new(dist: &'a DurationDist, beta: f64, size: usize, cell_costs: Option<&'a [f64]>) -> Self {
        EventIntegrator {
            dist,
            beta,
            cell_costs,
            plain: vec![0.0; size],
            discounted: vec![0.0; size],
            prev: None,
            inner: 0.0,
            arrival_cost: 0.0,
        }
    }

    fn push(&mut self, t: f64, phi: &[f64]) {
        let cdf = self.dist.cdf(t);
        let disc = (-self.beta * t).exp();
        let cost_rate = self.cell_costs.map_or(0.0, |c| c.iter().zip(phi).map(|(a, b)| a * b).sum());
        if let Some(prev) = &mut self.prev {
            let w = 0.5 * (cdf - prev.cdf);
            if w != 0.0 {
                for j in 0..phi.len() {
                    self.plain[j] += w * (prev.phi[j] + phi[j]);
                    self.discounted[j] += w * (prev.disc * prev.phi[j] + disc * phi[j]);
                }
            }
            let inner_prev = self.inner;
            self.inner += 0.5 * (t - prev.t) * (prev.disc * prev.cost_rate + disc * cost_rate);
            self.arrival_cost += w * (inner_prev + self.inner);
            prev.t = t;
            prev.cdf = cdf;
            prev.disc = disc;
            prev.phi.copy_from_slice(phi);
            prev.cost_rate = cost_rate;
        } else {
            self.prev = Some(Sample { t, cdf, disc, phi: phi.to_vec(), cost_rate });
        }
    }
}

/// Arrival-count distribution and cost integrals for one decision event.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrivalSummary {
    pub n1: usize,
    pub n2: usize,
    /// `P(a1, a2 | e)`, flattened with `a2` fastest.
    pub plain: Vec<f64>,
    /// `E[e^{-beta t_e} 1{arrivals = (a1, a2)}]`.
    pub discounted: Vec<f64>,
    /// Multiplier of `c1 n1 + c2 n2` for customers present at the decision.
    pub holding_existing: f64,
    /// Expected discounted holding cost of customers arriving during the event.
    pub arrival_cost: f64,
    /// Duration mass beyond the integration cutoff.
    pub tail_mass: f64,
}

impl ArrivalSummary {
    pub fn cell(&self, a1: usize, a2: usize) -> usize {
        a1 * (self.n2 + 1) + a2
    }
}

fn check_coverage(mesh: &TransientMesh, f_e: &DurationDist) -> Result<f64> {
    let required = f_e.support_end();
    if mesh.t_end() + 1e-12 * required.max(1.0) < required {
        return Err(Error::MeshCoverage { mesh_end: mesh.t_end(), required, tail_mass: f_e.sf(mesh.t_end()) });
    }
    Ok(required)
}

fn deterministic_point(mesh: &TransientMesh, value: f64) -> Result<Vec<f64>> {
    if value > mesh.t_end() + 1e-12 {
        return Err(Error::MeshCoverage { mesh_end: mesh.t_end(), required: value, tail_mass: 1.0 });
    }
    Ok(mesh.at(value))
}

/// Expected arrival-count probabilities over a stored mesh, discounted when `beta` is given.
pub fn expected_arrival_probs(mesh: &TransientMesh, f_e: &DurationDist, beta: Option<f64>) -> Result<Vec<f64>> {
    if let DurationDist::Deterministic { value } = *f_e {
        let phi = deterministic_point(mesh, value)?;
        let d = beta.map_or(1.0, |b| (-b * value).exp());
        return Ok(phi.into_iter().map(|p| p * d).collect());
    }
    let required = check_coverage(mesh, f_e)?;
    let size = mesh.phi[0].len();
    let mut acc = EventIntegrator::new(f_e, beta.unwrap_or(0.0), size, None);
    for (k, phi) in mesh.phi.iter().enumerate() {
        let t = mesh.time(k);
        acc.push(t, phi);
        if t >= required {
            break;
        }
    }
    Ok(if beta.is_some() { acc.discounted } else { acc.plain })
}

/// `E[(1 - e^{-beta t_e}) / beta]`, the multiplier of the holding rate of customers already present.
pub fn holding_cost_existing(f_e: &DurationDist, beta: f64) -> f64 {
    f_e.expect(|t| -(-beta * t).exp_m1() / beta, 1e-12)
}

/// `(1 - e^{-bt}(1 + bt)) / b^2 = int_0^t s e^{-bs} ds`, with a series for small `bt`.
fn ramp_discounted(beta: f64, t: f64) -> f64 {
    let x = beta * t;
    if x < 1e-3 {
        t * t * (0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0)
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / (beta * beta)
    }
}

/// Arrival holding cost for constant rates: `(c1 l1 + c2 l2) E[int_0^t s e^{-beta s} ds]`.
pub fn homogeneous_arrival_cost(f_e: &DurationDist, cfg: &ScenarioConfig) -> f64 {
    let w = cfg.c1 * cfg.lambda1 + cfg.c2 * cfg.lambda2;
    if w == 0.0 {
        return 0.0;
    }
    w * f_e.expect(|t| ramp_discounted(cfg.beta, t), 1e-12)
}

/// Arrival holding cost over a stored mesh. Constant rates use the closed form.
pub fn holding_cost_arrivals(mesh: &TransientMesh, f_e: &DurationDist, cfg: &ScenarioConfig) -> Result<f64> {
    if cfg.is_homogeneous() {
        return Ok(homogeneous_arrival_cost(f_e, cfg));
    }
    let gen_costs = cell_costs(mesh.n1, mesh.n2, cfg.c1, cfg.c2);
    let size = gen_costs.len();
    let mut acc = EventIntegrator::new(f_e, cfg.beta, size, Some(&gen_costs));
    if let DurationDist::Deterministic { value } = *f_e {
        deterministic_point(mesh, value)?;
        for (k, phi) in mesh.phi.iter().enumerate() {
            let t = mesh.time(k);
            if t > value {
                let tail = mesh.at(value);
                acc.push(value, &tail);
                break;
            }
            acc.push(t, phi);
        }
        return Ok(acc.inner);
    }
    let required = check_coverage(mesh, f_e)?;
    for (k, phi) in mesh.phi.iter().enumerate() {
        let t = mesh.time(k);
        acc.push(t, phi);
        if t >= required {
            break;
        }
    }
    Ok(acc.arrival_cost)
}

fn cell_costs(n1: usize, n2: usize, c1: f64, c2: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity((n1 + 1) * (n2 + 1));
    for a1 in 0..=n1 {
        for a2 in 0..=n2 {
            v.push(c1 * a1 as f64 + c2 * a2 as f64);
        }
    }
    v
}

/// Computes an event summary by marching Euler without storing the mesh.
///
/// `dt = None` picks [`default_step`].
pub fn summarize_event(gen: &GeneratorMatrix, f_e: &DurationDist, cfg: &ScenarioConfig, dt: Option<f64>) -> Result<ArrivalSummary> {
    let beta = cfg.beta;
    let size = gen.size();
    let costs = (!cfg.is_homogeneous()).then(|| gen.cell_costs(cfg.c1, cfg.c2));
    let mut acc = EventIntegrator::new(f_e, beta, size, costs.as_deref());

    let (t_end, tail_mass) = match *f_e {
        DurationDist::Deterministic { value } => (value, 0.0),
        _ => {
            let t = f_e.support_end();
            (t, f_e.sf(t))
        }
    };
    let mut dt = dt.unwrap_or_else(|| default_step(gen, t_end));
    let steps = if t_end > 0.0 { (t_end / dt - 1e-9).ceil().max(1.0) as usize } else { 0 };
    if f_e.is_deterministic() && steps > 0 {
        // land exactly on the point mass
        dt = t_end / steps as f64;
    }
    let mut stepper = EulerStepper::new(gen, dt)?;
    acc.push(0.0, stepper.phi());
    for _ in 0..steps {
        stepper.advance()?;
        acc.push(stepper.time(), stepper.phi());
    }

    let (plain, discounted, inner_cost) = if let DurationDist::Deterministic { value } = *f_e {
        let phi = stepper.phi().to_vec();
        let d = (-beta * value).exp();
        let disc = phi.iter().map(|p| p * d).collect();
        (phi, disc, acc.inner)
    } else {
        (acc.plain, acc.discounted, acc.arrival_cost)
    };
    let arrival_cost = if cfg.is_homogeneous() { homogeneous_arrival_cost(f_e, cfg) } else { inner_cost };
    Ok(ArrivalSummary {
        n1: gen.n1,
        n2: gen.n2,
        plain,
        discounted,
        holding_existing: holding_cost_existing(f_e, beta),
        arrival_cost,
        tail_mass,
    })
}

/// Summaries for serving each queue and for switching away from each queue.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EventSummaries {
    pub serve: [ArrivalSummary; 2],
    pub switch: [ArrivalSummary; 2],
}

pub fn summarize_events(cfg: &ScenarioConfig) -> Result<EventSummaries> {
    let gen = build_generator(cfg);
    let events = [&cfg.serve1, &cfg.serve2, &cfg.switch12, &cfg.switch21];
    let mut out: Vec<ArrivalSummary> = events
        .par_iter()
        .map(|d| summarize_event(&gen, d, cfg, None))
        .collect::<Result<_>>()?;
    let s21 = out.pop().unwrap();
    let s12 = out.pop().unwrap();
    let m2 = out.pop().unwrap();
    let m1 = out.pop().unwrap();
    Ok(EventSummaries { serve: [m1, m2], switch: [s12, s21] })
}

/// Collapses a lattice vector onto a smaller lattice, pooling overflow into the capped cells.
pub fn pool_lattice(v: &[f64], from: (usize, usize), to: (usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; (to.0 + 1) * (to.1 + 1)];
    for a1 in 0..=from.0 {
        for a2 in 0..=from.1 {
            let j = a1.min(to.0) * (to.1 + 1) + a2.min(to.1);
            out[j] += v[a1 * (from.1 + 1) + a2];
        }
    }
    out
}

/// Restricts a lattice vector to the cells of a smaller lattice.
pub fn restrict_lattice(v: &[f64], from: (usize, usize), to: (usize, usize)) -> Vec<f64> {
    let mut out = Vec::with_capacity((to.0 + 1) * (to.1 + 1));
    for a1 in 0..=to.0 {
        for a2 in 0..=to.1 {
            out.push(v[a1 * (from.1 + 1) + a2]);
        }
    }
    out
}
