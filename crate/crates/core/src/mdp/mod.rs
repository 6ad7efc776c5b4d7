//! Truncated, discretized average-cost MDP over the estimate mismatch.

pub mod grid;
pub mod kernel;
pub mod vi;

pub use grid::{max_abs_diff, span, Grid, ValueFunction};
pub use kernel::{regularized_xi, transition_density, Kernel, KernelOptions, OutOfBox, SparseRow};
pub use vi::{
    bellman_backup, hold_weight, stage_cost, value_iterate, value_iterate_from, CostVariant, IterationReport,
    StageCosts, ValueSolution, ViOptions,
};
