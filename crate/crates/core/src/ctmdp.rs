//! Uniformised continuous-time models for exponential durations.
//!
//! The preemptive model decides at every uniformised tick over `(n1, n2, l1)`.
//! The non-preemptive model adds the server activity `l2` and connects free
//! decision states to serving/switching states with instantaneous links.

use crate::error::{Error, Result};
use crate::index::{QuadIndex, TripleIndex};
use crate::scenario::{validate_scenario, ScenarioConfig};
use crate::solver::{Policy, PolicyTable, QNode, ValueGraph};
use crate::sparse::{RowBuilder, SparseRows};
use crate::state::{feasible_at, Action, Activity};

fn require_exponential(cfg: &ScenarioConfig) -> Result<()> {
    validate_scenario(cfg)?;
    if !cfg.all_exponential() {
        return Err(Error::InvalidConfig("continuous-time models require exponential durations".into()));
    }
    Ok(())
}

/// Conservative uniformisation rate `lambda1 + lambda2 + max completion rate`.
pub fn uniformisation_rate(cfg: &ScenarioConfig) -> f64 {
    let fastest = cfg.durations().iter().map(|d| d.rate()).fold(0.0, f64::max);
    cfg.arrival_rate() + fastest
}

/// Adds the two arrival entries of a uniformised row; arrivals at capacity stay put.
fn add_arrivals<F: Fn(usize, usize) -> usize>(row: &mut RowBuilder, cfg: &ScenarioConfig, n1: usize, n2: usize, rate: f64, to: F) -> f64 {
    let mut used = 0.0;
    for q in 0..2 {
        let p = cfg.lambda(q) / rate;
        if p == 0.0 {
            continue;
        }
        let (m1, m2) = if q == 0 { ((n1 + 1).min(cfg.x1), n2) } else { (n1, (n2 + 1).min(cfg.x2)) };
        row.add(to(m1, m2), p);
        used += p;
    }
    used
}

#[derive(Clone, Debug)]
pub struct PreemptiveModel {
    pub index: TripleIndex,
    pub gamma: f64,
    pub alpha: f64,
    /// Per-tick cost, the same for every action.
    pub cost: Vec<f64>,
    /// Indexed by `Action::index()`; rows of infeasible actions are empty.
    pub transitions: [SparseRows; 3],
}

pub fn build_preemptive(cfg: &ScenarioConfig) -> Result<PreemptiveModel> {
    require_exponential(cfg)?;
    let index = TripleIndex::new(cfg.x1, cfg.x2);
    let n = index.size();
    let gamma = uniformisation_rate(cfg);
    let mut transitions = [SparseRows::new(n, n), SparseRows::new(n, n), SparseRows::new(n, n)];
    let mut cost = vec![0.0; n];
    let mut row = RowBuilder::new(n);
    for s in 0..n {
        let (n1, n2, l1) = index.coords(s);
        cost[s] = cfg.holding_rate(n1, n2) / (gamma + cfg.beta);
        for a in feasible_at(if l1 == 0 { n1 } else { n2 }).iter() {
            let mut used = add_arrivals(&mut row, cfg, n1, n2, gamma, |a1, a2| index.index(a1, a2, l1));
            match a {
                Action::Idle => {}
                Action::Serve => {
                    let p = cfg.serve(l1).rate() / gamma;
                    let (m1, m2) = if l1 == 0 { (n1 - 1, n2) } else { (n1, n2 - 1) };
                    row.add(index.index(m1, m2, l1), p);
                    used += p;
                }
                Action::Switch => {
                    let p = cfg.switch_from(l1).rate() / gamma;
                    row.add(index.index(n1, n2, 1 - l1), p);
                    used += p;
                }
            }
            row.add(s, 1.0 - used);
            transitions[a.index()].rows[s] = row.take();
        }
    }
    Ok(PreemptiveModel { index, gamma, alpha: gamma / (gamma + cfg.beta), cost, transitions })
}

impl PreemptiveModel {
    pub fn value_graph(&self) -> ValueGraph {
        let mut nodes = Vec::new();
        let mut offsets = vec![0];
        for s in 0..self.index.size() {
            for a in Action::ALL {
                let next = &self.transitions[a.index()].rows[s];
                if !next.is_empty() {
                    nodes.push(QNode { state: s, action: Some(a), cost: self.cost[s], discount: self.alpha, next: next.clone() });
                }
            }
            offsets.push(nodes.len());
        }
        ValueGraph::new(nodes, offsets, vec![true; self.index.size()])
    }

    pub fn policy_table(&self, policy: &Policy) -> PolicyTable {
        PolicyTable::new(self.index.x1, self.index.x2, policy.actions.iter().map(|a| a.expect("decision state")).collect())
    }
}

#[derive(Clone, Debug)]
pub struct NonPreemptiveModel {
    pub index: QuadIndex,
    pub gamma: f64,
    pub gamma_lambda: f64,
    pub beta: f64,
    /// Q-nodes per state in the order of `index`.
    pub graph: ValueGraph,
}

pub fn build_nonpreemptive(cfg: &ScenarioConfig) -> Result<NonPreemptiveModel> {
    require_exponential(cfg)?;
    let index = QuadIndex::new(cfg.x1, cfg.x2);
    let n = index.size();
    let gamma = uniformisation_rate(cfg);
    let gl = cfg.arrival_rate();
    let beta = cfg.beta;
    let mut nodes = Vec::with_capacity(n * 2);
    let mut offsets = vec![0];
    let mut decision = Vec::with_capacity(n);
    let mut row = RowBuilder::new(n);
    for s in 0..n {
        let (n1, n2, l1, l2) = index.coords(s);
        let h = cfg.holding_rate(n1, n2);
        match Activity::from_index(l2) {
            Activity::Free => {
                decision.push(true);
                for a in feasible_at(if l1 == 0 { n1 } else { n2 }).iter() {
                    let node = match a {
                        Action::Idle if gl > 0.0 => {
                            add_arrivals(&mut row, cfg, n1, n2, gl, |a1, a2| index.index(a1, a2, l1, 0));
                            QNode { state: s, action: Some(a), cost: h / (beta + gl), discount: gl / (gl + beta), next: row.take() }
                        }
                        Action::Idle => QNode { state: s, action: Some(a), cost: h / beta, discount: 0.0, next: vec![(s, 1.0)] },
                        Action::Serve => QNode { state: s, action: Some(a), cost: 0.0, discount: 1.0, next: vec![(index.index(n1, n2, l1, 1), 1.0)] },
                        Action::Switch => QNode { state: s, action: Some(a), cost: 0.0, discount: 1.0, next: vec![(index.index(n1, n2, l1, 2), 1.0)] },
                    };
                    nodes.push(node);
                }
            }
            busy => {
                decision.push(false);
                let mut used = add_arrivals(&mut row, cfg, n1, n2, gamma, |a1, a2| index.index(a1, a2, l1, l2));
                if busy == Activity::Serving {
                    let p = cfg.serve(l1).rate() / gamma;
                    // states serving an empty queue are unreachable; keep them stochastic
                    let (m1, m2) = if l1 == 0 { (n1.saturating_sub(1), n2) } else { (n1, n2.saturating_sub(1)) };
                    row.add(index.index(m1, m2, l1, 0), p);
                    used += p;
                } else {
                    let p = cfg.switch_from(l1).rate() / gamma;
                    row.add(index.index(n1, n2, 1 - l1, 0), p);
                    used += p;
                }
                row.add(s, 1.0 - used);
                nodes.push(QNode { state: s, action: None, cost: h / (gamma + beta), discount: gamma / (gamma + beta), next: row.take() });
            }
        }
        offsets.push(nodes.len());
    }
    let graph = ValueGraph::new(nodes, offsets, decision);
    Ok(NonPreemptiveModel { index, gamma, gamma_lambda: gl, beta, graph })
}

pub fn build_value_graph(model: &NonPreemptiveModel) -> ValueGraph {
    model.graph.clone()
}

impl NonPreemptiveModel {
    /// Actions at the free states `(n1, n2, l1, 0)`.
    pub fn policy_table(&self, policy: &Policy) -> PolicyTable {
        let t = TripleIndex::new(self.index.x1, self.index.x2);
        let actions = (0..t.size())
            .map(|s| {
                let (n1, n2, l1) = t.coords(s);
                policy.actions[self.index.index(n1, n2, l1, 0)].expect("free state")
            })
            .collect();
        PolicyTable::new(self.index.x1, self.index.x2, actions)
    }

    /// Node choice for the non-preemptive graph from a table over free states.
    pub fn choice_from_table(&self, table: &PolicyTable) -> Result<Vec<usize>> {
        self.graph.choice_from(|s| {
            let (n1, n2, l1, _) = self.index.coords(s);
            table.action(n1, n2, l1)
        })
    }
}
