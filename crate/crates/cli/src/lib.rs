//! Parameter sweeps over the gossip simulator, written out as CSV.

pub mod experiment;
pub mod spec;

pub use experiment::{reliability_curve, run_experiment, write_logs, write_rows, CurveRow, Row};
pub use spec::{ExperimentSpec, FanoutChoice, SpecError};
