use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polling_core::experiment::{
    self, analyze_samples, read_samples, run_experiment, screen, simulate_policies, solve_ctmdp, solve_smdp,
    write_analysis, write_samples, ExperimentPlan, PolicyKind, ReportBundle, SolveAlgo, TestMatrix,
};
use polling_core::{ScenarioConfig, TruncationMode};

#[derive(Parser)]
#[command(name = "polling", version, about = "Optimal control experiments for a two-queue polling system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Truncation {
    Absorbing,
    Unassigned,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Smdp,
    Ctmdp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    PolicyIteration,
    ValueIteration,
}

impl From<Algo> for SolveAlgo {
    fn from(a: Algo) -> Self {
        match a {
            Algo::PolicyIteration => SolveAlgo::PolicyIteration,
            Algo::ValueIteration => SolveAlgo::ValueIteration,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,
    /// Overrides the scenario's lattice truncation mode.
    #[arg(long, value_enum)]
    truncation: Option<Truncation>,
}

impl ScenarioArgs {
    fn load(&self) -> polling_core::Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(&self.scenario)?;
        if let Some(t) = self.truncation {
            cfg.truncation_mode = match t {
                Truncation::Absorbing => TruncationMode::Absorbing,
                Truncation::Unassigned => TruncationMode::UnassignedOutflow,
            };
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimArgs {
    /// Comma-separated subset of smdp, ctmdp, exhaustive, heuristic.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    policies: Option<Vec<PolicyKind>>,
    #[arg(long, default_value_t = 10_000)]
    rollouts: usize,
    #[arg(long, default_value_t = 200.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulation threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "policy-iteration")]
    algo: Algo,
}

#[derive(Subcommand)]
enum Command {
    /// Stability and fluid limit-cycle screening.
    Screen {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Build and solve one model, writing its policy table.
    Solve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value = "smdp")]
        model: Model,
        #[arg(long, value_enum, default_value = "policy-iteration")]
        algo: Algo,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sample discounted performance of each policy.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Hypothesis tests over previously sampled `eta_<policy>.csv` files.
    Test {
        #[arg(long, default_value = "out")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
        policies: Option<Vec<PolicyKind>>,
        #[arg(long, default_value_t = 0.05)]
        zeta: f64,
        /// Output directory; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Screen, solve, simulate, test and report in one go.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 0.05)]
        zeta: f64,
        /// Trajectories for the stationary and occupancy estimates.
        #[arg(long, default_value_t = 2_000)]
        occupancy_traces: usize,
        #[arg(long, default_value_t = 0.1)]
        burn_in: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse().map_err(|e: polling_core::Error| e.to_string())
}

fn plan_from(cfg: ScenarioConfig, sim: &SimArgs) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(cfg);
    if let Some(p) = &sim.policies {
        plan.policies = p.clone();
    }
    plan.rollouts = sim.rollouts;
    plan.horizon = sim.horizon;
    plan.seed = sim.seed;
    plan.workers = sim.workers;
    plan.algo = sim.algo.into();
    plan
}

fn print_tests(tests: &[TestMatrix]) {
    for t in tests {
        println!("{} (reject = row cheaper than column):", t.test);
        for c in &t.cells {
            println!("  {:>10} < {:<10} p = {:.4}  {}", c.row.name(), c.col.name(), c.p, if c.reject { "reject" } else { "-" });
        }
    }
}

fn print_report(report: &ReportBundle) {
    println!("{:<10} {:>12} {:>10} {:>8} {:>8} {:>8}", "policy", "mean", "std", "skew", "kurt", "normal");
    for r in &report.summary {
        println!("{:<10} {:>12.3} {:>10.3} {:>8.3} {:>8.3} {:>8}", r.policy.name(), r.mean, r.std, r.skewness, r.kurtosis, r.normal);
    }
    print_tests(&report.tests);
    for o in &report.occupancy {
        println!(
            "{:<10} idle {:.3} serve {:.3} switch {:.3} (rho {:.3})  on-cycle {:.3}",
            o.policy.name(),
            o.fraction[0],
            o.fraction[1],
            o.fraction[2],
            o.rho,
            o.phi_star
        );
    }
}

fn samples_in(dir: &Path, only: Option<&[PolicyKind]>) -> polling_core::Result<Vec<(PolicyKind, Vec<f64>)>> {
    let mut out = Vec::new();
    for kind in PolicyKind::ALL {
        if only.is_some_and(|o| !o.contains(&kind)) {
            continue;
        }
        let path = dir.join(format!("eta_{kind}.csv"));
        if path.exists() {
            out.push((kind, read_samples(&path)?));
        }
    }
    if out.len() < 2 {
        return Err(polling_core::Error::InvalidConfig(format!("need at least two eta_<policy>.csv files in {}", dir.display())));
    }
    Ok(out)
}

fn run(cli: Cli) -> polling_core::Result<()> {
    match cli.command {
        Command::Screen { scenario, json } => {
            let r = screen(&scenario.load()?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                let s = &r.stability;
                println!("rho = {:.4} (rho1 = {:.4}, rho2 = {:.4})", s.rho, s.rho1, s.rho2);
                println!("priority queue: {}", s.priority_queue.map_or("none".to_string(), |q| (q + 1).to_string()));
                println!("limit cycle: {:?}, alpha1 = {:.6}, slow-mode value = {:.6}", r.cycle.kind, r.cycle.alpha1, r.cycle.slow_mode_value);
                for (i, c) in r.cycle.corners.iter().enumerate() {
                    println!("  corner {}: ({:.4}, {:.4})", i + 1, c.0, c.1);
                }
                println!("recommended capacity: X1 >= {}, X2 >= {}", r.recommended_capacity.0, r.recommended_capacity.1);
            }
        }
        Command::Solve { scenario, model, algo, out } => {
            let cfg = scenario.load()?;
            let solved = match model {
                Model::Smdp => solve_smdp(&cfg, algo.into())?.1,
                Model::Ctmdp => solve_ctmdp(&cfg, algo.into())?,
            };
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("policy_{}.csv", solved.kind));
            solved.table.write_csv(std::fs::File::create(&path)?)?;
            println!("{} iterations (converged: {}), wrote {}", solved.iterations, solved.converged, path.display());
        }
        Command::Simulate { scenario, sim, out } => {
            let plan = plan_from(scenario.load()?, &sim);
            plan.check()?;
            let solved = experiment::solve_policies(&plan)?;
            std::fs::create_dir_all(&out)?;
            for s in &solved {
                s.table.write_csv(std::fs::File::create(out.join(format!("policy_{}.csv", s.kind)))?)?;
            }
            for (kind, eta) in simulate_policies(&plan, &solved)? {
                let path = out.join(format!("eta_{kind}.csv"));
                write_samples(std::fs::File::create(&path)?, &eta)?;
                let mean = eta.iter().sum::<f64>() / eta.len() as f64;
                println!("{:<10} mean {:.3}  -> {}", kind.name(), mean, path.display());
            }
        }
        Command::Test { input, policies, zeta, out } => {
            let samples = samples_in(&input, policies.as_deref())?;
            let (summary, pearson, tests) = analyze_samples(&samples, zeta)?;
            write_analysis(out.as_deref().unwrap_or(&input), &samples, &summary, &pearson, &tests)?;
            print_tests(&tests);
        }
        Command::Run { scenario, sim, zeta, occupancy_traces, burn_in, out } => {
            let mut plan = plan_from(scenario.load()?, &sim);
            plan.zeta = zeta;
            plan.occupancy_traces = occupancy_traces;
            plan.burn_in = burn_in;
            let report = run_experiment(&plan)?;
            report.write(&out)?;
            print_report(&report);
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
