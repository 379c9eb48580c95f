//! Command-line front end: scenario files, simulation and sweep runs, and the
//! self-check suites behind `dmpc verify`.

// NaN-rejecting `!(a > b)` checks and index loops over matrices are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod verify;

pub use commands::{load_config, parse_k_list, simulate, sweep, Overrides, DEFAULT_K_LIST};
pub use config::{parse_config, ConfigError, OutputFormats, ScenarioConfig};
pub use verify::{run_verify, SuiteResult, VerifyLevel};
