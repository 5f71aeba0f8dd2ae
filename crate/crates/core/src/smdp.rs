//! Semi-Markov decision model over `(n1, n2, l1)` with general durations.

use serde::Serialize;
use std::io::Write;

use crate::error::{Error, Result};
use crate::index::TripleIndex;
use crate::lattice::{csv_err, summarize_events, ArrivalSummary, EventSummaries};
use crate::scenario::{validate_scenario, ScenarioConfig};
use crate::solver::{QNode, ValueGraph};
use crate::sparse::{RowBuilder, SparseRows};
use crate::state::{feasible_at, Action};

/// Transitions and costs of one action over every decision state.
#[derive(Clone, Debug)]
pub struct ActionModel {
    pub action: Action,
    pub p: SparseRows,
    pub p_beta: SparseRows,
    pub cost: Vec<f64>,
    pub feasible: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct SmdpModel {
    pub index: TripleIndex,
    /// Indexed by `Action::index()`.
    pub actions: [ActionModel; 3],
}

fn empty_model(action: Action, n: usize) -> ActionModel {
    ActionModel { action, p: SparseRows::new(n, n), p_beta: SparseRows::new(n, n), cost: vec![0.0; n], feasible: vec![false; n] }
}

/// Adds the arrival distribution of `ev` on top of base queue lengths, pooling at capacity.
fn add_arrivals(
    rows: (&mut RowBuilder, &mut RowBuilder),
    ev: &ArrivalSummary,
    base: (usize, usize),
    l1: usize,
    index: &TripleIndex,
) -> f64 {
    let (plain, disc) = rows;
    let mut moved = 0.0;
    for a1 in 0..=ev.n1 {
        let t1 = (base.0 + a1).min(index.x1);
        for a2 in 0..=ev.n2 {
            let c = ev.cell(a1, a2);
            let (p, pb) = (ev.plain[c], ev.discounted[c]);
            if p == 0.0 && pb == 0.0 {
                continue;
            }
            let j = index.index(t1, (base.1 + a2).min(index.x2), l1);
            plain.add(j, p);
            disc.add(j, pb);
            moved += p;
        }
    }
    moved
}

/// Pooling must neither create nor lose mass.
fn check_pooled(row: &[(usize, f64)], moved: f64) {
    let received: f64 = row.iter().map(|e| e.1).sum();
    debug_assert!((moved - received).abs() <= 1e-12, "pooling moved {moved}, received {received}");
}

/// Builds the three action models from precomputed event summaries.
pub fn build_action_model(cfg: &ScenarioConfig, ev: &EventSummaries) -> Result<[ActionModel; 3]> {
    for s in ev.serve.iter().chain(&ev.switch) {
        if s.n1 != cfg.n1 || s.n2 != cfg.n2 {
            return Err(Error::InvalidConfig("event summaries were built for a different lattice".into()));
        }
    }
    let index = TripleIndex::new(cfg.x1, cfg.x2);
    let n = index.size();
    let mut idle = empty_model(Action::Idle, n);
    let mut serve = empty_model(Action::Serve, n);
    let mut switch = empty_model(Action::Switch, n);
    let mut plain = RowBuilder::new(n);
    let mut disc = RowBuilder::new(n);

    let g = cfg.arrival_rate();
    let beta = cfg.beta;
    for s in 0..n {
        let (n1, n2, l1) = index.coords(s);
        let h = cfg.holding_rate(n1, n2);
        let acts = feasible_at(if l1 == 0 { n1 } else { n2 });

        idle.feasible[s] = true;
        if g > 0.0 {
            let alpha = g / (g + beta);
            for (q, target) in [(0, index.index((n1 + 1).min(cfg.x1), n2, l1)), (1, index.index(n1, (n2 + 1).min(cfg.x2), l1))] {
                let p = cfg.lambda(q) / g;
                plain.add(target, p);
                disc.add(target, alpha * p);
            }
            idle.cost[s] = h / (beta + g);
        } else {
            plain.add(s, 1.0);
            idle.cost[s] = h / beta;
        }
        idle.p.rows[s] = plain.take();
        idle.p_beta.rows[s] = disc.take();

        if acts.contains(Action::Serve) {
            let e = &ev.serve[l1];
            let base = if l1 == 0 { (n1 - 1, n2) } else { (n1, n2 - 1) };
            let moved = add_arrivals((&mut plain, &mut disc), e, base, l1, &index);
            serve.p.rows[s] = plain.take();
            check_pooled(&serve.p.rows[s], moved);
            serve.p_beta.rows[s] = disc.take();
            serve.cost[s] = h * e.holding_existing + e.arrival_cost;
            serve.feasible[s] = true;
        }

        let e = &ev.switch[l1];
        let moved = add_arrivals((&mut plain, &mut disc), e, (n1, n2), 1 - l1, &index);
        switch.p.rows[s] = plain.take();
        check_pooled(&switch.p.rows[s], moved);
        switch.p_beta.rows[s] = disc.take();
        switch.cost[s] = h * e.holding_existing + e.arrival_cost + cfg.switch_cost(l1);
        switch.feasible[s] = true;
    }
    Ok([idle, serve, switch])
}

/// Per-action cost vectors; zero where the action is infeasible.
pub fn build_cost_vector(cfg: &ScenarioConfig, ev: &EventSummaries) -> [Vec<f64>; 3] {
    let index = TripleIndex::new(cfg.x1, cfg.x2);
    let g = cfg.arrival_rate();
    let mut out = [vec![0.0; index.size()], vec![0.0; index.size()], vec![0.0; index.size()]];
    for s in 0..index.size() {
        let (n1, n2, l1) = index.coords(s);
        let h = cfg.holding_rate(n1, n2);
        out[0][s] = if g > 0.0 { h / (cfg.beta + g) } else { h / cfg.beta };
        if (if l1 == 0 { n1 } else { n2 }) > 0 {
            out[1][s] = h * ev.serve[l1].holding_existing + ev.serve[l1].arrival_cost;
        }
        out[2][s] = h * ev.switch[l1].holding_existing + ev.switch[l1].arrival_cost + cfg.switch_cost(l1);
    }
    out
}

impl SmdpModel {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        validate_scenario(cfg)?;
        let ev = summarize_events(cfg)?;
        Self::from_summaries(cfg, &ev)
    }

    pub fn from_summaries(cfg: &ScenarioConfig, ev: &EventSummaries) -> Result<Self> {
        let actions = build_action_model(cfg, ev)?;
        Ok(SmdpModel { index: TripleIndex::new(cfg.x1, cfg.x2), actions })
    }

    pub fn size(&self) -> usize {
        self.index.size()
    }

    pub fn model(&self, a: Action) -> &ActionModel {
        &self.actions[a.index()]
    }

    /// Q-nodes carry the discounted kernel with `discount = 1`.
    pub fn value_graph(&self) -> ValueGraph {
        let mut nodes = Vec::new();
        let mut offsets = vec![0];
        for s in 0..self.size() {
            for a in Action::ALL {
                let m = self.model(a);
                if m.feasible[s] {
                    nodes.push(QNode { state: s, action: Some(a), cost: m.cost[s], discount: 1.0, next: m.p_beta.rows[s].clone() });
                }
            }
            offsets.push(nodes.len());
        }
        ValueGraph::new(nodes, offsets, vec![true; self.size()])
    }

    /// Plain embedded-chain kernel under a per-state action assignment.
    pub fn policy_kernel(&self, actions: &[Action]) -> SparseRows {
        let n = self.size();
        let mut p = SparseRows::new(n, n);
        for (s, a) in actions.iter().enumerate() {
            p.rows[s] = self.model(*a).p.rows[s].clone();
        }
        p
    }

    /// CSV rows `idx_from, idx_to, action, p, p_beta, cost`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            idx_from: usize,
            idx_to: usize,
            action: Action,
            p: f64,
            p_beta: f64,
            cost: f64,
        }
        let mut out = csv::Writer::from_writer(w);
        for m in &self.actions {
            for s in 0..self.size() {
                if !m.feasible[s] {
                    continue;
                }
                for &(j, p) in m.p.row(s) {
                    let row = Row { idx_from: s, idx_to: j, action: m.action, p, p_beta: m.p_beta.get(s, j), cost: m.cost[s] };
                    out.serialize(row).map_err(csv_err)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DurationDist;
    use crate::scenario::presets;

    fn small_asym(x: usize) -> ScenarioConfig {
        presets::asymmetric_variance().with_capacity(x, x).with_lattice(x + 4, x + 4)
    }

    #[test]
    fn idle_uniformisation() {
        let cfg = small_asym(4);
        let m = SmdpModel::build(&cfg).unwrap();
        let ix = m.index;
        let idle = m.model(Action::Idle);
        let s = ix.index(0, 0, 0);
        assert_eq!(idle.p.get(s, ix.index(1, 0, 0)), 0.5);
        assert_eq!(idle.p.get(s, ix.index(0, 1, 0)), 0.5);
        assert!((idle.p_beta.get(s, ix.index(1, 0, 0)) - 0.5 * 1.6 / 1.65).abs() < 1e-12);
        assert!((idle.cost[ix.index(1, 0, 0)] - 1.0 / 1.65).abs() < 1e-12);
        assert!((0.48485 - 0.5 * 1.6 / 1.65f64).abs() < 1e-5);
    }

    #[test]
    fn serve_without_arrivals_decrements() {
        let cfg = small_asym(4);
        let ev = summarize_events(&cfg).unwrap();
        let m = SmdpModel::from_summaries(&cfg, &ev).unwrap();
        let ix = m.index;
        let p0 = ev.serve[0].plain[0];
        assert_eq!(m.model(Action::Serve).p.get(ix.index(1, 0, 0), ix.index(0, 0, 0)), p0);
    }

    #[test]
    fn pooling_lands_on_capped_state() {
        let cfg = small_asym(2);
        let ev = summarize_events(&cfg).unwrap();
        let m = SmdpModel::from_summaries(&cfg, &ev).unwrap();
        let ix = m.index;
        let serve = m.model(Action::Serve);
        let from = ix.index(2, 0, 0);
        // everything with a1 >= 1 and a2 = 0 lands on (2, 0)
        let expected: f64 = (1..=ev.serve[0].n1).map(|a1| ev.serve[0].plain[ev.serve[0].cell(a1, 0)]).sum();
        assert!((serve.p.get(from, ix.index(2, 0, 0)) - expected).abs() < 1e-15);
        assert!(expected > 0.0);
    }

    #[test]
    fn rows_and_costs_are_consistent() {
        let cfg = small_asym(6);
        let m = SmdpModel::build(&cfg).unwrap();
        let ev = summarize_events(&cfg).unwrap();
        let costs = build_cost_vector(&cfg, &ev);
        for a in Action::ALL {
            let am = m.model(a);
            for s in 0..m.size() {
                assert_eq!(am.cost[s], costs[a.index()][s]);
                if !am.feasible[s] {
                    assert!(am.p.row(s).is_empty() && am.cost[s] == 0.0);
                    continue;
                }
                let sum = am.p.row_sum(s);
                assert!(sum > 1.0 - 2e-4 && sum < 1.0 + 1e-12, "{a:?} {s} {sum}");
                assert!(am.p_beta.row_sum(s) < 1.0);
                for &(j, v) in am.p_beta.row(s) {
                    assert!(v <= am.p.get(s, j) + 1e-15);
                }
                assert!(am.cost[s] >= 0.0);
            }
        }
        assert_eq!(costs[0][m.index.index(0, 0, 1)], 0.0);
        assert_eq!(costs[1][m.index.index(0, 0, 0)], 0.0);
        assert!(costs[2][m.index.index(0, 0, 0)] > 0.0); // arrival cost only
    }

    #[test]
    fn costs_increase_with_queue_lengths() {
        let cfg = small_asym(5);
        let m = SmdpModel::build(&cfg).unwrap();
        let ix = m.index;
        for a in Action::ALL {
            let c = &m.model(a).cost;
            for n1 in 0..5 {
                for n2 in 0..5 {
                    for l1 in 0..2 {
                        let here = ix.index(n1, n2, l1);
                        let s1 = ix.index(n1 + 1, n2, l1);
                        let s2 = ix.index(n1, n2 + 1, l1);
                        if m.model(a).feasible[here] {
                            assert!(c[s1] >= c[here] && c[s2] >= c[here]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_serve_cost() {
        let mut cfg = small_asym(3);
        cfg.serve1 = DurationDist::deterministic(1.0);
        let ev = summarize_events(&cfg).unwrap();
        let b = cfg.beta;
        let ch = (1.0 - (-b).exp()) / b;
        assert!((ev.serve[0].holding_existing - ch).abs() < 1e-12);
        let ci = 1.6 * (1.0 - (-b).exp() * (1.0 + b)) / (b * b);
        assert!((ev.serve[0].arrival_cost - ci).abs() < 1e-10);
        let m = SmdpModel::from_summaries(&cfg, &ev).unwrap();
        let s = m.index.index(2, 1, 0);
        assert!((m.model(Action::Serve).cost[s] - (3.0 * ch + ci)).abs() < 1e-10);
    }

    #[test]
    fn switch_adds_lump_cost_and_moves_server() {
        let mut cfg = small_asym(3);
        cfg.k12 = 5.0;
        let m = SmdpModel::build(&cfg).unwrap();
        let ix = m.index;
        let sw = m.model(Action::Switch);
        assert!(sw.cost[ix.index(1, 1, 0)] > 5.0);
        for &(j, _) in sw.p.row(ix.index(1, 1, 0)) {
            assert_eq!(ix.coords(j).2, 1);
        }
    }
}
