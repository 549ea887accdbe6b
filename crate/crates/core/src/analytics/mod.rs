//! Scientific summaries of fitted models: average predictive comparisons,
//! stationary distributions, posterior predictive checks and
//! serial-dependence comparisons.

mod apc;
mod ppc;
mod serial;
mod stationary;

pub use apc::{
    average_stationary_difference, average_transition_difference, posterior_mean_population_matrix,
    posterior_mean_transitions, stationary_difference, stationary_difference_draws, transition_difference_draws,
    transition_difference_matrix, ComparisonTarget, PredictiveComparisonRequest,
};
pub use ppc::{
    n_blocks, posterior_predictive_check, ppc_quantile, ppc_replicate, ppc_statistics, replicate_draw, select_draws,
    statistic_names, PpcResult, ReplicateMode, StatisticTally, BLOCK_DAYS, BLOCK_OFFSET,
};
pub use serial::{
    find_motifs, motif_table, relapse_segments, serial_dependence_table, Episode, Motif, MotifKind, MotifRow,
};
pub use stationary::{is_primitive, stationary_distribution, stationary_residual};
