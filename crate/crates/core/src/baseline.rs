//! Exhaustive and priority-heuristic policies, and the fluid limit cycle used for screening.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::solver::PolicyTable;
use crate::state::Action;

/// Serve while the current queue is non-empty, switch to a non-empty other queue, otherwise idle.
pub fn exhaustive_policy(n1: usize, n2: usize, l1: usize) -> Action {
    let (here, there) = if l1 == 0 { (n1, n2) } else { (n2, n1) };
    if here > 0 {
        Action::Serve
    } else if there > 0 {
        Action::Switch
    } else {
        Action::Idle
    }
}

pub fn exhaustive_table(x1: usize, x2: usize) -> PolicyTable {
    PolicyTable::from_fn(x1, x2, exhaustive_policy)
}

/// Inputs of the priority heuristic; queue 1 must be the priority queue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mean_switch12: f64,
    pub mean_switch21: f64,
    pub c1: f64,
    pub c2: f64,
}

impl HeuristicParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let p = HeuristicParams {
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            mu1: cfg.serve1.rate(),
            mu2: cfg.serve2.rate(),
            mean_switch12: cfg.switch12.mean(),
            mean_switch21: cfg.switch21.mean(),
            c1: cfg.c1,
            c2: cfg.c2,
        };
        if p.rho() >= 1.0 {
            return Err(Error::InvalidConfig(format!("heuristic requires rho < 1, got {}", p.rho())));
        }
        if p.c1 * p.lambda1 <= p.c2 * p.lambda2 {
            return Err(Error::InvalidConfig("heuristic requires queue 1 as priority queue (c1 lambda1 > c2 lambda2)".into()));
        }
        Ok(p)
    }

    pub fn rho(&self) -> f64 {
        self.lambda1 / self.mu1 + self.lambda2 / self.mu2
    }
}

/// One decision of the priority heuristic. `served_queue2` is the caller-held flag
/// recording whether a queue-2 job was served during the current visit.
pub fn heuristic_policy(p: &HeuristicParams, n1: usize, n2: usize, l1: usize, served_queue2: bool) -> (Action, bool) {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    if l1 == 0 {
        if n1 > 0 {
            (Action::Serve, served_queue2)
        } else if n2f > p.lambda2 * p.mean_switch21 {
            (Action::Switch, served_queue2)
        } else {
            (Action::Idle, served_queue2)
        }
    } else if n2 > 0 {
        let rho = p.rho();
        let index = (n1f + p.lambda1 * p.mean_switch12)
            / (n1f + p.mu1 * p.mean_switch12 + (p.mu1 - p.lambda1) * p.mean_switch21);
        if index <= p.c1 * p.mu1 * rho + p.c2 * p.mu2 * (1.0 - rho) || !served_queue2 {
            (Action::Serve, true)
        } else {
            (Action::Switch, false)
        }
    } else if n1f > p.lambda1 * p.mean_switch12 {
        (Action::Switch, false)
    } else {
        (Action::Idle, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleKind {
    PureBowTie,
    TruncatedBowTie,
}

/// Corners of the optimal fluid limit cycle, queue 1 as priority queue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub kind: CycleKind,
    pub alpha1: f64,
    /// Value of `c1 l1 rho - (c1 l1 - c2 l2)(1 - rho2)`; negative means a slow mode.
    pub slow_mode_value: f64,
    pub rho: f64,
    /// Quadratic coefficients `(a, b, c)` for `alpha1`.
    pub coefficients: (f64, f64, f64),
    pub corners: [(f64, f64); 5],
}

impl LimitCycle {
    /// Largest fluid length of each queue along the cycle.
    pub fn max_lengths(&self) -> (f64, f64) {
        self.corners.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (f64::max(a, x), f64::max(b, y)))
    }
}

pub fn analyze_limit_cycle(cfg: &ScenarioConfig) -> Result<LimitCycle> {
    let (l1, l2) = (cfg.lambda1, cfg.lambda2);
    let rho1 = l1 * cfg.serve1.mean();
    let rho2 = l2 * cfg.serve2.mean();
    let rho = rho1 + rho2;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho, rho1, rho2 });
    }
    let (w1, w2) = (cfg.c1 * l1, cfg.c2 * l2);
    let t12 = cfg.switch12.mean();
    let t21 = cfg.switch21.mean();
    let total = t12 + t21;

    let slow = w1 * rho - (w1 - w2) * (1.0 - rho2);
    let a = w1 * rho2 * rho2 * (1.0 - rho1) + w2 * (1.0 - rho1).powi(2) * (1.0 - rho2);
    let b = 2.0 * w1 * rho2 * rho2 + 2.0 * w2 * (1.0 - rho1) * (1.0 - rho2);
    let c = slow;
    let (kind, alpha1) = if slow < 0.0 {
        let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
        let roots = [(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)];
        let pos: f64 = roots.iter().filter(|r| **r > 0.0).sum();
        if pos <= 0.0 || !pos.is_finite() {
            return Err(Error::InvalidConfig(format!("no positive root for alpha1 (a={a}, b={b}, c={c})")));
        }
        (CycleKind::TruncatedBowTie, pos)
    } else {
        (CycleKind::PureBowTie, 0.0)
    };

    let k = total / (1.0 - rho);
    let c1 = (0.0, l2 * (t21 + rho1 * k * (1.0 + alpha1 * rho2)));
    let c2 = (0.0, l2 * (t21 + k * (alpha1 * (1.0 - rho1) * (1.0 - rho2) + rho1)));
    let c3 = (l1 * t12, l2 * k * (1.0 + alpha1 * (1.0 - rho1)) * (1.0 - rho2));
    let c4 = (l1 * (t12 + rho2 * k * (1.0 + alpha1 * (1.0 - rho1))), 0.0);
    let c5 = (l1 * k * (1.0 + alpha1 * rho2) * (1.0 - rho2), l2 * t21);
    Ok(LimitCycle { kind, alpha1, slow_mode_value: slow, rho, coefficients: (a, b, c), corners: [c1, c2, c3, c4, c5] })
}

/// Minimum capacities `ceil(margin * max corner)`, at least 1.
pub fn truncation_bounds(cycle: &LimitCycle, margin: f64) -> (usize, usize) {
    let (m1, m2) = cycle.max_lengths();
    let b = |m: f64| ((margin * m).ceil() as usize).max(1);
    (b(m1), b(m2))
}
