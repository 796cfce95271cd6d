use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::grid::{BranchId, BusId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: line {line}, column {column}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, column: usize, message: String },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u32 },
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("unknown branch {0}")]
    UnknownBranch(BranchId),
    #[error("invalid branch {id}: {reason}")]
    InvalidBranch { id: BranchId, reason: String },
    #[error("invalid bus {id}: {reason}")]
    InvalidBus { id: BusId, reason: String },
    #[error("network is disconnected into {} islands", .0.len())]
    DisconnectedNetwork(Vec<BTreeSet<BusId>>),
    #[error("outage islands the network into {} parts", .0.len())]
    IslandingDetected(Vec<BTreeSet<BusId>>),
    #[error("susceptance matrix is singular")]
    SingularMatrix,
    #[error("area border side {0} is empty")]
    EmptyBorderSide(&'static str),
    #[error("bus {0} appears in more than one area set")]
    OverlappingArea(BusId),
    #[error("border incomplete: branches {0:?} connect the interior to the exterior")]
    BorderIncomplete(Vec<BranchId>),
    #[error("interior susceptance block is singular")]
    SingularInterior,
    #[error("bulk susceptance {0} is not positive")]
    NonpositiveBulkSusceptance(f64),
    #[error("missing measurements for buses {0:?}")]
    MissingMeasurement(Vec<BusId>),
    #[error("no line responds to the transfer pattern")]
    Unbounded,
    #[error("base transfer into the area is zero; injection ratios are undefined")]
    ZeroBaseTransfer,
    #[error("angle evaluation level {0} pu must be positive")]
    InvalidLevel(f64),
    #[error("detection needs at least {need} rows, got {have}")]
    InsufficientRows { have: usize, need: usize },
    #[error("all rows share one maximum power value; no curve can be fitted")]
    DegenerateFit,
    #[error("every single outage is exceptional")]
    AllExceptional,
    #[error("alarm threshold {alarm} does not exceed emergency threshold {emergency} ({unit})")]
    ThresholdInversion { alarm: f64, emergency: f64, unit: &'static str },
    #[error("alarm power {p} pu lies outside the curve range [{lo}, {hi}]")]
    ExtrapolationRequired { p: f64, lo: f64, hi: f64 },
    #[error("cannot draw {requested} outage sets of order {order} from {available}")]
    SampleTooLarge { order: usize, requested: u64, available: u64 },
    #[error("frame {frame}: {message}")]
    StreamFormat { frame: usize, message: String },
    #[error("threshold file: {0}")]
    ThresholdFile(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
