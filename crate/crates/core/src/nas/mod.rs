//! Search space, uniform config sampling, grid search and the
//! accuracy/latency frontier.

pub mod pareto;
pub mod search;
pub mod space;

pub use pareto::pareto_frontier;
pub use search::{grid_search, AccuracyEvaluator, FlopsProxy, LatencySource, ParetoPoint, ParetoReport};
pub use space::{enumerate_space, sample_config, SearchSpace};
