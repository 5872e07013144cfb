//! Turbo scheduling, metrics, baselines, complexity tables and Monte Carlo
//! driving.

mod config;
mod flops;
mod metrics;
mod mfb;
mod monte_carlo;
mod receiver;

pub use config::{SimConfig, Variant};
pub use flops::{flop_estimate, Algorithm, FlopBreakdown, FlopParams};
pub use metrics::{ber, bit_errors, nmse, MetricRecord, CSV_HEADER};
pub use mfb::mfb_pcsi;
pub use monte_carlo::{monte_carlo, run_trial, write_csv, Execution, TrialOutcome};
pub use receiver::{run_turbo_receiver, IterationSnapshot, ReceiverConfig};
