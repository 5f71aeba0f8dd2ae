//! Policy iteration and asynchronous value iteration over a state-action graph.
//!
//! Every model is lowered to a [`ValueGraph`]: one [`QNode`] per feasible
//! (state, action) pair, grouped contiguously by state. A node's Bellman value is
//! `cost + discount * sum_j p_j J(j)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::TripleIndex;
use crate::lattice::csv_err;
use crate::sparse::solve_triplets;
use crate::state::Action;

/// Relative tolerance under which two Q-values count as tied.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct QNode {
    pub state: usize,
    /// `None` for the single continuation node of a non-decision state.
    pub action: Option<Action>,
    pub cost: f64,
    pub discount: f64,
    pub next: Vec<(usize, f64)>,
}

impl QNode {
    #[inline]
    pub fn q(&self, j: &[f64]) -> f64 {
        self.cost + self.discount * self.next.iter().map(|&(k, p)| p * j[k]).sum::<f64>()
    }

    /// Total discounted mass `discount * sum p`.
    pub fn mass(&self) -> f64 {
        self.discount * self.next.iter().map(|e| e.1).sum::<f64>()
    }

    fn undiscounted(&self) -> bool {
        self.mass() >= 1.0 - 1e-12
    }
}

#[derive(Clone, Debug)]
pub struct ValueGraph {
    pub nodes: Vec<QNode>,
    /// Nodes of state `s` are `nodes[offsets[s]..offsets[s + 1]]`.
    pub offsets: Vec<usize>,
    /// Whether each state is a decision state.
    pub decision: Vec<bool>,
}

impl ValueGraph {
    pub fn new(nodes: Vec<QNode>, offsets: Vec<usize>, decision: Vec<bool>) -> Self {
        assert_eq!(offsets.len(), decision.len() + 1);
        assert_eq!(*offsets.last().unwrap(), nodes.len());
        for s in 0..decision.len() {
            assert!(offsets[s] < offsets[s + 1], "state {s} has no nodes");
            assert!(nodes[offsets[s]..offsets[s + 1]].iter().all(|n| n.state == s));
        }
        ValueGraph { nodes, offsets, decision }
    }

    pub fn num_states(&self) -> usize {
        self.decision.len()
    }

    pub fn nodes_of(&self, s: usize) -> &[QNode] {
        &self.nodes[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn max_cost(&self) -> f64 {
        self.nodes.iter().map(|n| n.cost.abs()).fold(0.0, f64::max)
    }

    /// Largest discounted row mass over all nodes.
    pub fn max_mass(&self) -> f64 {
        self.nodes.iter().map(QNode::mass).fold(0.0, f64::max)
    }

    /// Node index of action `a` at state `s`.
    pub fn node_for(&self, s: usize, a: Option<Action>) -> Result<usize> {
        (self.offsets[s]..self.offsets[s + 1])
            .find(|&i| self.nodes[i].action == a)
            .ok_or(Error::InfeasibleAction { state: s, action: a.unwrap_or(Action::Idle) })
    }

    /// First node of every state, i.e. the lowest action in tie order.
    pub fn first_choice(&self) -> Vec<usize> {
        self.offsets[..self.num_states()].to_vec()
    }

    /// Node choice from an action per decision state.
    pub fn choice_from<F: Fn(usize) -> Action>(&self, f: F) -> Result<Vec<usize>> {
        (0..self.num_states())
            .map(|s| if self.decision[s] { self.node_for(s, Some(f(s))) } else { Ok(self.offsets[s]) })
            .collect()
    }

    /// Synchronous Bellman optimality operator.
    pub fn bellman(&self, j: &[f64]) -> Vec<f64> {
        (0..self.num_states()).map(|s| self.nodes_of(s).iter().map(|n| n.q(j)).fold(f64::INFINITY, f64::min)).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Policy {
    /// Chosen node per state.
    pub choice: Vec<usize>,
    /// Action per state; `None` at non-decision states.
    pub actions: Vec<Option<Action>>,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Value vector after each evaluation (policy iteration only).
    pub snapshots: Vec<Vec<f64>>,
}

impl Policy {
    fn new(graph: &ValueGraph, choice: Vec<usize>, values: Vec<f64>, iterations: usize, converged: bool, snapshots: Vec<Vec<f64>>) -> Self {
        let actions = choice.iter().map(|&i| graph.nodes[i].action).collect();
        Policy { choice, actions, values, iterations, converged, snapshots }
    }
}

/// Rejects a policy whose undiscounted nodes form a cycle (singular evaluation system).
pub fn check_linking_cycles(graph: &ValueGraph, choice: &[usize]) -> Result<()> {
    // 0 unvisited, 1 on stack, 2 done
    let n = graph.num_states();
    let mut mark = vec![0u8; n];
    for start in 0..n {
        let mut s = start;
        let mut path = Vec::new();
        loop {
            if mark[s] == 2 {
                break;
            }
            if mark[s] == 1 {
                return Err(Error::LinkingCycle(s));
            }
            let node = &graph.nodes[choice[s]];
            if !node.undiscounted() || node.next.len() != 1 {
                mark[s] = 2;
                break;
            }
            mark[s] = 1;
            path.push(s);
            s = node.next[0].0;
        }
        for p in path {
            mark[p] = 2;
        }
    }
    Ok(())
}

fn residual(graph: &ValueGraph, choice: &[usize], j: &[f64]) -> Vec<f64> {
    choice.iter().enumerate().map(|(s, &i)| graph.nodes[i].q(j) - j[s]).collect()
}

/// Solves `(I - diag(discount) P_pi) J = C_pi` exactly by sparse LU.
pub fn policy_evaluate(graph: &ValueGraph, choice: &[usize]) -> Result<Vec<f64>> {
    check_linking_cycles(graph, choice)?;
    let n = graph.num_states();
    let mut trip = Vec::with_capacity(n * 4);
    let mut c = Vec::with_capacity(n);
    for (s, &i) in choice.iter().enumerate() {
        let node = &graph.nodes[i];
        if node.state != s {
            return Err(Error::InvalidConfig(format!("node {i} does not belong to state {s}")));
        }
        trip.push((s, s, 1.0));
        for &(k, p) in &node.next {
            trip.push((s, k, -node.discount * p));
        }
        c.push(node.cost);
    }
    let mut j = solve_triplets(n, &trip, &c)?;
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-8 * scale;
    let mut res = residual(graph, choice, &j);
    let mut worst = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if worst > tol {
        // one step of iterative refinement
        let d = solve_triplets(n, &trip, &res)?;
        j.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        res = residual(graph, choice, &j);
        worst = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > tol {
            return Err(Error::Residual { residual: worst, tolerance: tol });
        }
    }
    Ok(j)
}

/// Index of the first node (in tie order) whose Q-value is within tolerance of the minimum.
fn greedy_node(graph: &ValueGraph, s: usize, j: &[f64]) -> (usize, f64) {
    let lo = graph.offsets[s];
    let qs: Vec<f64> = graph.nodes_of(s).iter().map(|n| n.q(j)).collect();
    let best = qs.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * best.abs().max(1.0);
    let k = qs.iter().position(|&q| q <= best + tol).unwrap();
    (lo + k, best)
}

/// Greedy one-step look-ahead policy; `changed` compares with `current`.
pub fn policy_improve(graph: &ValueGraph, j: &[f64], current: &[usize]) -> (Vec<usize>, bool) {
    let next: Vec<usize> = (0..graph.num_states()).map(|s| greedy_node(graph, s, j).0).collect();
    let changed = next.iter().zip(current).any(|(a, b)| a != b);
    (next, changed)
}

#[derive(Clone, Copy, Debug)]
pub struct IterationOptions {
    pub maxiter: usize,
    pub keep_snapshots: bool,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions { maxiter: 100, keep_snapshots: false }
    }
}

pub fn policy_iteration(graph: &ValueGraph, pi0: Option<Vec<usize>>, opts: IterationOptions) -> Result<Policy> {
    assert!(opts.maxiter >= 1, "maxiter must be >= 1");
    let mut choice = pi0.unwrap_or_else(|| graph.first_choice());
    let mut snapshots = Vec::new();
    for it in 1..=opts.maxiter {
        let j = policy_evaluate(graph, &choice)?;
        if opts.keep_snapshots {
            snapshots.push(j.clone());
        }
        let (next, changed) = policy_improve(graph, &j, &choice);
        if !changed {
            return Ok(Policy::new(graph, choice, j, it, true, snapshots));
        }
        choice = next;
    }
    let j = policy_evaluate(graph, &choice)?;
    Ok(Policy::new(graph, choice, j, opts.maxiter, false, snapshots))
}

/// Default stopping threshold `1e-8 * max cost`.
pub fn default_eps(graph: &ValueGraph) -> f64 {
    (1e-8 * graph.max_cost()).max(f64::MIN_POSITIVE)
}

/// Gauss-Seidel value iteration from `J = 0` over the contiguous node list.
pub fn value_iterate(graph: &ValueGraph, eps: f64, maxiter: usize) -> Result<Policy> {
    assert!(eps > 0.0, "eps must be positive");
    let n = graph.num_states();
    let mut j = vec![0.0; n];
    let mut delta = f64::INFINITY;
    for sweep in 1..=maxiter {
        delta = 0.0;
        for s in 0..n {
            let v = graph.nodes_of(s).iter().map(|node| node.q(&j)).fold(f64::INFINITY, f64::min);
            delta = f64::max(delta, (v - j[s]).abs());
            j[s] = v;
        }
        if delta <= eps {
            let choice = (0..n).map(|s| greedy_node(graph, s, &j).0).collect();
            return Ok(Policy::new(graph, choice, j, sweep, true, Vec::new()));
        }
    }
    Err(Error::NoConvergence { iterations: maxiter, last_change: delta })
}

/// Action per `(n1, n2, l1)` decision state, looked up with queue lengths clamped to capacity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub x1: usize,
    pub x2: usize,
    pub actions: Vec<Action>,
}

impl PolicyTable {
    pub fn new(x1: usize, x2: usize, actions: Vec<Action>) -> Self {
        assert_eq!(actions.len(), TripleIndex::new(x1, x2).size());
        PolicyTable { x1, x2, actions }
    }

    pub fn from_fn<F: Fn(usize, usize, usize) -> Action>(x1: usize, x2: usize, f: F) -> Self {
        let ix = TripleIndex::new(x1, x2);
        PolicyTable::new(x1, x2, (0..ix.size()).map(|s| {
            let (a, b, l) = ix.coords(s);
            f(a, b, l)
        }).collect())
    }

    pub fn index(&self) -> TripleIndex {
        TripleIndex::new(self.x1, self.x2)
    }

    #[inline]
    pub fn action(&self, n1: usize, n2: usize, l1: usize) -> Action {
        self.actions[self.index().index(n1.min(self.x1), n2.min(self.x2), l1)]
    }

    /// States where two tables disagree, as `(n1, n2, l1)`.
    pub fn differences(&self, other: &PolicyTable) -> Vec<(usize, usize, usize)> {
        assert_eq!((self.x1, self.x2), (other.x1, other.x2));
        let ix = self.index();
        (0..ix.size()).filter(|&s| self.actions[s] != other.actions[s]).map(|s| ix.coords(s)).collect()
    }

    /// CSV rows `n1, n2, l1, action`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n1", "n2", "l1", "action"]).map_err(csv_err)?;
        let ix = self.index();
        for (s, a) in self.actions.iter().enumerate() {
            let (n1, n2, l1) = ix.coords(s);
            out.write_record([n1.to_string(), n2.to_string(), l1.to_string(), a.name().to_string()]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Text grid for one server location: rows `n1`, columns `n2`, letters `i`/`s`/`w`.
    pub fn render(&self, l1: usize) -> String {
        let mut s = String::new();
        for n1 in 0..=self.x1 {
            for n2 in 0..=self.x2 {
                s.push(match self.action(n1, n2, l1) {
                    Action::Idle => 'i',
                    Action::Serve => 's',
                    Action::Switch => 'w',
                });
            }
            s.push('\n');
        }
        s
    }
}
