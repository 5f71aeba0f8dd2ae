//! End-to-end experiment: screen, solve, simulate, test, report.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{analyze_limit_cycle, exhaustive_table, truncation_bounds, HeuristicParams, LimitCycle};
use crate::ctmdp::build_nonpreemptive;
use crate::error::{Error, Result};
use crate::lattice::csv_err;
use crate::scenario::{validate_scenario, ScenarioConfig, StabilityReport};
use crate::simulator::{
    action_time_fractions, embedded_stationary, limit_cycle_occupancy, rollout, sample_performance, ActionFractions,
    FrequencyTable, InitialDist, SampleOptions, SimPolicy,
};
use crate::smdp::SmdpModel;
use crate::solver::{default_eps, policy_evaluate, policy_iteration, value_iterate, IterationOptions, Policy, PolicyTable, ValueGraph};
use crate::stats::{self, Alternative, Summary, TestResult};

/// Fluid-cycle multiple used for recommended capacities.
pub const SCREEN_MARGIN: f64 = 2.0;
pub const VALUE_ITERATION_MAXITER: usize = 1_000_000;
/// Grid points per limit-cycle segment for occupancy.
pub const CYCLE_GRID: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Smdp,
    Ctmdp,
    Exhaustive,
    Heuristic,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Smdp, PolicyKind::Ctmdp, PolicyKind::Exhaustive, PolicyKind::Heuristic];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Smdp => "smdp",
            PolicyKind::Ctmdp => "ctmdp",
            PolicyKind::Exhaustive => "exhaustive",
            PolicyKind::Heuristic => "heuristic",
        }
    }

    /// Distinct per-policy shuffle seed derived from the base seed.
    pub fn shuffle_seed(self, seed: u64) -> u64 {
        seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(self as u64 + 1)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveAlgo {
    #[default]
    PolicyIteration,
    ValueIteration,
}

impl FromStr for SolveAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy-iteration" | "pi" => Ok(SolveAlgo::PolicyIteration),
            "value-iteration" | "vi" => Ok(SolveAlgo::ValueIteration),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm '{s}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub scenario: ScenarioConfig,
    pub policies: Vec<PolicyKind>,
    pub rollouts: usize,
    pub horizon: f64,
    pub seed: u64,
    pub zeta: f64,
    pub workers: Option<usize>,
    pub algo: SolveAlgo,
    /// Trajectories used for the stationary and occupancy estimates.
    pub occupancy_traces: usize,
    /// Fraction of each trace discarded before counting.
    pub burn_in: f64,
}

impl ExperimentPlan {
    /// Defaults: 10 000 rollouts of horizon 200, significance 0.05, every applicable policy.
    pub fn new(scenario: ScenarioConfig) -> Self {
        let policies = PolicyKind::ALL.into_iter().filter(|k| *k != PolicyKind::Heuristic || HeuristicParams::from_config(&scenario).is_ok()).collect();
        ExperimentPlan {
            scenario,
            policies,
            rollouts: 10_000,
            horizon: 200.0,
            seed: 0,
            zeta: stats::DEFAULT_ZETA,
            workers: None,
            algo: SolveAlgo::PolicyIteration,
            occupancy_traces: 2_000,
            burn_in: 0.1,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::InvalidConfig("no policies selected".into()));
        }
        if self.policies.contains(&PolicyKind::Heuristic) {
            HeuristicParams::from_config(&self.scenario)?;
        }
        if self.rollouts < 2 || !(self.horizon > 0.0) || !(0.0..1.0).contains(&self.zeta) || !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidConfig("rollouts >= 2, horizon > 0, zeta and burn-in in [0, 1) required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScreenReport {
    pub stability: StabilityReport,
    pub cycle: LimitCycle,
    /// Suggested capacities covering the fluid cycle with margin.
    pub recommended_capacity: (usize, usize),
}

pub fn screen(cfg: &ScenarioConfig) -> Result<ScreenReport> {
    let stability = validate_scenario(cfg)?;
    let cycle = analyze_limit_cycle(cfg)?;
    let recommended_capacity = truncation_bounds(&cycle, SCREEN_MARGIN);
    Ok(ScreenReport { stability, cycle, recommended_capacity })
}

#[derive(Clone, Debug)]
pub struct SolvedPolicy {
    pub kind: PolicyKind,
    pub table: PolicyTable,
    /// Value per `(n1, n2, l1)` under the model the policy was solved on.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn run_solver(graph: &ValueGraph, pi0: Vec<usize>, algo: SolveAlgo) -> Result<Policy> {
    match algo {
        SolveAlgo::PolicyIteration => policy_iteration(graph, Some(pi0), IterationOptions::default()),
        SolveAlgo::ValueIteration => value_iterate(graph, default_eps(graph), VALUE_ITERATION_MAXITER),
    }
}

fn exhaustive_choice(model: &SmdpModel, graph: &ValueGraph) -> Result<Vec<usize>> {
    graph.choice_from(|s| {
        let (n1, n2, l1) = model.index.coords(s);
        crate::baseline::exhaustive_policy(n1, n2, l1)
    })
}

pub fn solve_smdp(cfg: &ScenarioConfig, algo: SolveAlgo) -> Result<(SmdpModel, SolvedPolicy)> {
    let model = SmdpModel::build(cfg)?;
    let graph = model.value_graph();
    let policy = run_solver(&graph, exhaustive_choice(&model, &graph)?, algo)?;
    let table = PolicyTable::new(cfg.x1, cfg.x2, policy.actions.iter().map(|a| a.expect("every state decides")).collect());
    let solved = SolvedPolicy { kind: PolicyKind::Smdp, table, values: policy.values, iterations: policy.iterations, converged: policy.converged };
    Ok((model, solved))
}

/// Solves the non-preemptive CTMDP on the exponential approximation of `cfg`.
pub fn solve_ctmdp(cfg: &ScenarioConfig, algo: SolveAlgo) -> Result<SolvedPolicy> {
    let model = build_nonpreemptive(&cfg.exponentialized())?;
    let pi0 = model.choice_from_table(&exhaustive_table(cfg.x1, cfg.x2))?;
    let policy = run_solver(&model.graph, pi0, algo)?;
    let table = model.policy_table(&policy);
    let values = (0..table.index().size())
        .map(|s| {
            let (n1, n2, l1) = table.index().coords(s);
            policy.values[model.index.index(n1, n2, l1, 0)]
        })
        .collect();
    Ok(SolvedPolicy { kind: PolicyKind::Ctmdp, table, values, iterations: policy.iterations, converged: policy.converged })
}

/// Value of a fixed policy table under the SMDP model.
pub fn evaluate_table(model: &SmdpModel, table: &PolicyTable) -> Result<Vec<f64>> {
    let graph = model.value_graph();
    let choice = graph.choice_from(|s| {
        let (n1, n2, l1) = model.index.coords(s);
        table.action(n1, n2, l1)
    })?;
    policy_evaluate(&graph, &choice)
}

pub fn sim_policy(kind: PolicyKind, cfg: &ScenarioConfig, solved: &[SolvedPolicy]) -> Result<SimPolicy> {
    Ok(match kind {
        PolicyKind::Exhaustive => SimPolicy::Exhaustive,
        PolicyKind::Heuristic => SimPolicy::Heuristic(HeuristicParams::from_config(cfg)?),
        _ => SimPolicy::Table(
            solved
                .iter()
                .find(|s| s.kind == kind)
                .ok_or_else(|| Error::InvalidConfig(format!("{kind} policy not solved")))?
                .table
                .clone(),
        ),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: PolicyKind,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub k2: f64,
    pub p: f64,
    pub normal: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestCell {
    pub row: PolicyKind,
    pub col: PolicyKind,
    pub statistic: f64,
    pub p: f64,
    pub reject: bool,
}

/// Pairwise one-sided tests; a rejection means the row policy has lower cost than the column policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestMatrix {
    pub test: String,
    pub policies: Vec<PolicyKind>,
    pub cells: Vec<TestCell>,
}

impl TestMatrix {
    pub fn cell(&self, row: PolicyKind, col: PolicyKind) -> Option<&TestCell> {
        self.cells.iter().find(|c| c.row == row && c.col == col)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.cells {
            out.serialize(c).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub type PairTest = fn(&[f64], &[f64]) -> Result<TestResult>;

pub fn test_matrix(name: &str, test: PairTest, samples: &[(PolicyKind, Vec<f64>)], zeta: f64) -> Result<TestMatrix> {
    let mut cells = Vec::new();
    for (a, x) in samples {
        for (b, y) in samples {
            if a == b {
                continue;
            }
            let r = test(x, y)?;
            cells.push(TestCell { row: *a, col: *b, statistic: r.statistic, p: r.p_less, reject: r.reject_at(zeta, Alternative::Less) });
        }
    }
    Ok(TestMatrix { test: name.to_string(), policies: samples.iter().map(|s| s.0).collect(), cells })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub policy: PolicyKind,
    /// Time fraction idling, serving, switching.
    pub fraction: [f64; 3],
    pub rho: f64,
    /// Embedded-chain mass on the fluid limit cycle.
    pub phi_star: f64,
    #[serde(skip)]
    pub frequencies: FrequencyTable,
}

/// Pooled action-time fractions and embedded frequencies over `count` trajectories.
pub fn estimate_occupancy(
    cfg: &ScenarioConfig,
    policy: &SimPolicy,
    initial: &InitialDist,
    seed: u64,
    count: usize,
    horizon: f64,
    burn_in: f64,
) -> Result<(ActionFractions, FrequencyTable)> {
    let parts = (0..count)
        .into_par_iter()
        .map(|k| {
            let tr = rollout(cfg, policy, initial, seed.wrapping_add(k as u64), horizon, true)?.trace.expect("recorded");
            let b = (tr.steps.len() as f64 * burn_in) as usize;
            Ok((action_time_fractions(&tr, b)?, embedded_stationary(&tr, b)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fractions = ActionFractions::default();
    let mut freq = FrequencyTable::default();
    for (a, f) in &parts {
        fractions.merge(a);
        freq.merge(f);
    }
    Ok((fractions, freq))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportBundle {
    pub screen: ScreenReport,
    #[serde(skip)]
    pub solved: Vec<SolvedPolicy>,
    #[serde(skip)]
    pub samples: Vec<(PolicyKind, Vec<f64>)>,
    pub summary: Vec<SummaryRow>,
    /// Pearson correlation between shuffled samples, in `policies` order.
    pub pearson: Vec<Vec<f64>>,
    pub tests: Vec<TestMatrix>,
    pub occupancy: Vec<OccupancyRow>,
}

impl ReportBundle {
    pub fn samples_of(&self, kind: PolicyKind) -> Option<&[f64]> {
        self.samples.iter().find(|s| s.0 == kind).map(|s| s.1.as_slice())
    }

    pub fn test(&self, name: &str) -> Option<&TestMatrix> {
        self.tests.iter().find(|t| t.test == name)
    }

    pub fn occupancy_of(&self, kind: PolicyKind) -> Option<&OccupancyRow> {
        self.occupancy.iter().find(|o| o.policy == kind)
    }

    /// Writes CSV outputs and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("screen.json"), serde_json::to_string_pretty(&self.screen)?)?;
        for s in &self.solved {
            s.table.write_csv(fs::File::create(dir.join(format!("policy_{}.csv", s.kind)))?)?;
        }
        for (kind, eta) in &self.samples {
            write_samples(fs::File::create(dir.join(format!("eta_{kind}.csv")))?, eta)?;
        }
        write_analysis(dir, &self.samples, &self.summary, &self.pearson, &self.tests)?;
        let mut out = csv::Writer::from_path(dir.join("occupancy.csv")).map_err(csv_err)?;
        out.write_record(["policy", "idle", "serve", "switch", "rho", "phi_star"]).map_err(csv_err)?;
        for o in &self.occupancy {
            let f = o.fraction;
            out.write_record([o.policy.to_string(), f[0].to_string(), f[1].to_string(), f[2].to_string(), o.rho.to_string(), o.phi_star.to_string()])
                .map_err(csv_err)?;
            o.frequencies.write_csv(fs::File::create(dir.join(format!("frequency_{}.csv", o.policy)))?)?;
        }
        out.flush()?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Writes `summary.csv`, `pearson.csv` and one `test_<name>.csv` per matrix.
pub fn write_analysis(dir: &Path, samples: &[(PolicyKind, Vec<f64>)], summary: &[SummaryRow], pearson: &[Vec<f64>], tests: &[TestMatrix]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut out = csv::Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
    for row in summary {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush()?;
    let mut out = csv::Writer::from_path(dir.join("pearson.csv")).map_err(csv_err)?;
    let names: Vec<String> = samples.iter().map(|s| s.0.to_string()).collect();
    out.write_record(std::iter::once("policy".to_string()).chain(names.iter().cloned())).map_err(csv_err)?;
    for (name, row) in names.iter().zip(pearson) {
        out.write_record(std::iter::once(name.clone()).chain(row.iter().map(f64::to_string))).map_err(csv_err)?;
    }
    out.flush()?;
    for t in tests {
        t.write_csv(fs::File::create(dir.join(format!("test_{}.csv", t.test)))?)?;
    }
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    rdr.records()
        .map(|r| {
            let r = r.map_err(csv_err)?;
            r.get(0)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidConfig(format!("{}: bad sample row {:?}", path.display(), r)))
        })
        .collect()
}

/// Single-column CSV with header `eta`.
pub fn write_samples<W: std::io::Write>(w: W, eta: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["eta"]).map_err(csv_err)?;
    for v in eta {
        out.write_record([v.to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn solve_policies(plan: &ExperimentPlan) -> Result<Vec<SolvedPolicy>> {
    let cfg = &plan.scenario;
    let mut solved = Vec::new();
    for kind in &plan.policies {
        match kind {
            PolicyKind::Smdp => solved.push(solve_smdp(cfg, plan.algo).map_err(Error::at("solve smdp"))?.1),
            PolicyKind::Ctmdp => solved.push(solve_ctmdp(cfg, plan.algo).map_err(Error::at("solve ctmdp"))?),
            _ => {}
        }
    }
    Ok(solved)
}

pub fn simulate_policies(plan: &ExperimentPlan, solved: &[SolvedPolicy]) -> Result<Vec<(PolicyKind, Vec<f64>)>> {
    let cfg = &plan.scenario;
    let initial = InitialDist::uniform(cfg);
    plan.policies
        .iter()
        .map(|&kind| {
            let policy = sim_policy(kind, cfg, solved)?;
            let opts = SampleOptions { rollouts: plan.rollouts, horizon: plan.horizon, seed: plan.seed, shuffle_seed: kind.shuffle_seed(plan.seed), workers: plan.workers };
            Ok((kind, sample_performance(cfg, &policy, &initial, &opts)?))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at("simulate"))
}

pub fn analyze_samples(samples: &[(PolicyKind, Vec<f64>)], zeta: f64) -> Result<(Vec<SummaryRow>, Vec<Vec<f64>>, Vec<TestMatrix>)> {
    let mut summary = Vec::new();
    for (kind, eta) in samples {
        let k2 = stats::dagostino_k2(eta)?;
        let Summary { n, mean, std, min, max, skewness, kurtosis } = stats::summarize(eta)?;
        summary.push(SummaryRow {
            policy: *kind,
            n,
            mean,
            std,
            min,
            max,
            skewness,
            kurtosis,
            k2: k2.statistic,
            p: k2.p_two_sided,
            normal: !k2.reject_at(zeta, Alternative::TwoSided),
        });
    }
    let pearson = samples
        .iter()
        .map(|(_, x)| samples.iter().map(|(_, y)| stats::pearson_r(x, y)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let tests = vec![
        test_matrix("welch", stats::welch_t_test, samples, zeta)?,
        test_matrix("mann-whitney", stats::mann_whitney_u, samples, zeta)?,
        test_matrix("student", stats::t_test_paired, samples, zeta)?,
    ];
    Ok((summary, pearson, tests))
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<ReportBundle> {
    plan.check().map_err(Error::at("plan"))?;
    let cfg = &plan.scenario;
    let screen = screen(cfg).map_err(Error::at("screen"))?;
    let solved = solve_policies(plan)?;
    let samples = simulate_policies(plan, &solved)?;
    let (summary, pearson, tests) = analyze_samples(&samples, plan.zeta).map_err(Error::at("test"))?;

    let initial = InitialDist::uniform(cfg);
    let mut occupancy = Vec::new();
    for &kind in &plan.policies {
        let policy = sim_policy(kind, cfg, &solved)?;
        let (fractions, frequencies) = estimate_occupancy(cfg, &policy, &initial, plan.seed, plan.occupancy_traces, plan.horizon, plan.burn_in)
            .map_err(Error::at("occupancy"))?;
        occupancy.push(OccupancyRow {
            policy: kind,
            fraction: fractions.fraction,
            rho: screen.stability.rho,
            phi_star: limit_cycle_occupancy(&frequencies, &screen.cycle, CYCLE_GRID),
            frequencies,
        });
    }
    Ok(ReportBundle { screen, solved, samples, summary, pearson, tests, occupancy })
}

/// Mean of a value vector over the uniform initial distribution.
pub fn uniform_average(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::presets;

    #[test]
    fn policy_kind_parsing() {
        assert_eq!("SMDP".parse::<PolicyKind>().unwrap(), PolicyKind::Smdp);
        assert!("greedy".parse::<PolicyKind>().is_err());
        let seeds: std::collections::BTreeSet<u64> = PolicyKind::ALL.iter().map(|k| k.shuffle_seed(7)).collect();
        assert_eq!(seeds.len(), 4);
    }

    #[test]
    fn heuristic_only_with_priority_queue() {
        assert!(!ExperimentPlan::new(presets::asymmetric_variance()).policies.contains(&PolicyKind::Heuristic));
        assert!(ExperimentPlan::new(presets::slow_mode()).policies.contains(&PolicyKind::Heuristic));
        let mut plan = ExperimentPlan::new(presets::asymmetric_variance());
        plan.policies.push(PolicyKind::Heuristic);
        assert!(plan.check().is_err());
    }

    #[test]
    fn unstable_scenario_aborts_at_screen() {
        let mut cfg = presets::slow_mode();
        cfg.lambda1 = 20.0;
        let mut plan = ExperimentPlan::new(cfg);
        plan.policies = vec![PolicyKind::Exhaustive];
        match run_experiment(&plan) {
            Err(Error::Stage { stage, source }) => {
                assert_eq!(stage, "screen");
                assert!(matches!(*source, Error::Unstable { .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_experiment_end_to_end() {
        let cfg = presets::slow_mode().with_capacity(8, 8).with_lattice(12, 12);
        let mut plan = ExperimentPlan::new(cfg);
        plan.rollouts = 40;
        plan.occupancy_traces = 10;
        plan.horizon = 50.0;
        plan.seed = 3;
        let report = run_experiment(&plan).unwrap();
        assert_eq!(report.samples.len(), 4);
        assert_eq!(report.tests.len(), 3);
        assert_eq!(report.test("welch").unwrap().cells.len(), 12);
        for (i, row) in report.pearson.iter().enumerate() {
            assert!((row[i] - 1.0).abs() < 1e-12);
        }
        for o in &report.occupancy {
            assert!((o.fraction.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let dir = std::env::temp_dir().join(format!("polling-exp-{}", std::process::id()));
        report.write(&dir).unwrap();
        let again = run_experiment(&plan).unwrap();
        let dir2 = dir.with_extension("again");
        again.write(&dir2).unwrap();
        for f in ["eta_smdp.csv", "policy_ctmdp.csv", "test_welch.csv", "summary.csv", "occupancy.csv", "summary.json"] {
            assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(dir2.join(f)).unwrap(), "{f}");
        }
        fs::remove_dir_all(&dir).ok();
        fs::remove_dir_all(&dir2).ok();
    }
}
