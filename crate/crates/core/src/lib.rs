//! Area angle monitoring for a DC power grid model.
//!
//! The area angle is a weighted combination of border bus angles. Offline, contingency
//! sweeps relate it to the maximum power that can enter the area and yield alarm and
//! emergency thresholds. Online, measured frames are classified against those thresholds.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod area;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod monitor;
pub mod outlier;
pub mod par;
pub mod thresholds;
pub mod transfer;

pub use area::{
    area_angle, compute_weights, kron_reduce, solution_area_angle, validate_area, Area, AreaSpec, ReducedNetwork, Side,
    WeightVector,
};
pub use error::{Error, Result};
pub use grid::{
    connectivity_check, line_flows, load_case, solve_dc, AngleSolution, Branch, BranchId, Bus, BusId, GridModel,
};
pub use monitor::{ingest_frame, simulate_outage_frames, Classification, MeasurementFrame, Monitor, State, StatusFeed};
pub use par::Execution;
pub use thresholds::{
    detect_exceptional, run_thresholds, single_outage_sweep, ExceptionalSet, SweepTable, ThresholdSet,
};
pub use transfer::{
    injection_pattern, line_margins, max_power_into_area, post_outage_area_angle, set_transfer_level, shift_factors,
    InjectionPattern, TransferResult,
};
