//! Optimal control of a non-preemptive two-queue polling system.
//!
//! Models are built as a discounted semi-Markov decision process over
//! `(n1, n2, l1)` and as uniformised continuous-time MDPs, solved by policy or
//! value iteration, and compared against baseline policies by simulation.

pub mod baseline;
pub mod ctmdp;
pub mod dist;
pub mod error;
pub mod index;
pub mod lattice;
pub mod quad;
pub mod scenario;
pub mod simulator;
pub mod smdp;
pub mod solver;
pub mod sparse;
pub mod state;
pub mod stats;
pub mod experiment;

pub use dist::DurationDist;
pub use error::{Error, Result};
pub use index::{QuadIndex, StateIndexer, TripleIndex};
pub use lattice::{ArrivalSummary, EventSummaries, GeneratorMatrix, TransientMesh};
pub use scenario::{validate_scenario, ScenarioConfig, StabilityReport, TruncationMode};
pub use state::{feasible_actions, Action, ActionSet, Activity, PollingState};
pub use baseline::{analyze_limit_cycle, exhaustive_policy, exhaustive_table, heuristic_policy, HeuristicParams, LimitCycle};
pub use ctmdp::{build_nonpreemptive, build_preemptive, NonPreemptiveModel, PreemptiveModel};
pub use simulator::{rollout, sample_performance, FrequencyTable, InitialDist, RolloutTrace, SampleOptions, SimPolicy};
pub use smdp::SmdpModel;
pub use solver::{policy_iteration, value_iterate, IterationOptions, Policy, PolicyTable, ValueGraph};
