//! Command line, configuration, CSV metrics, self-checks and Monte-Carlo
//! verification.

pub mod bounds;
pub mod check;
pub mod cli;
pub mod compare;
pub mod config;
pub mod metrics;
pub mod montecarlo;

pub use check::{finite_difference_check, CheckOptions, CheckReport};
pub use cli::run_cli;
pub use config::{LambdaArg, TrainArgs};
pub use metrics::{write_csv, MetricsRow, CSV_HEADER};
pub use montecarlo::{markov_suite_on, montecarlo_markov_suite, MarkovReport};
