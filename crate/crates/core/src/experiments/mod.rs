//! Configuration, sweep orchestration, rate fitting and file output.

pub mod config;
pub mod fit;
pub mod output;
pub mod sweep;
pub mod verify;

pub use config::{ExperimentKind, GradVarDomain, RawConfig, SweepConfig};
pub use fit::{fit_rate, GroupKey, RateFit};
pub use output::{emit_csv, read_csv, SweepResult, SweepRow, CSV_HEADER};
pub use sweep::{run_grad_var, run_sweep};
pub use verify::{run_verification, CheckOutcome};
