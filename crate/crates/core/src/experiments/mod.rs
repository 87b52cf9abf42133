//! Synthetic datasets, cross-validation and architecture sweeps.

pub mod crossval;
pub mod sweep;
pub mod synth;

pub use crossval::{cross_validate, fold_seed, CrossValData, CrossValReport, FoldReport, MeanMetrics};
pub use sweep::{
    holdout_split, parse_grid, rows_csv, run_sweep, sweep_points, validate_grid, SweepKind, SweepPoint, SweepRow,
    SweepShape,
};
