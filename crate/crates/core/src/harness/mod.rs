//! Episode loop, baselines, exhaustive search, training and reporting.

mod episode;
pub mod oracle;
pub mod policy;
pub mod report;
mod train;

pub use episode::{run_episode, EpisodeLog, EpisodeMemory, Experience, EpisodeOptions, EpisodeSummary, StepRecord};
pub use oracle::{evaluate_sequence, oracle_search, OracleResult};
pub use policy::{can_serve, feasible_plans, AlwaysPolicy, DqnPolicy, GreedyPolicy, HorizonPolicy, NullPolicy, Policy, RandomPolicy, ScriptedPolicy};
pub use train::{check_shapes, evaluate, run_policy, train, EvalStats, Histogram, Summary};
