//! Configuration, experiment drivers and output writers behind the `dtta`
//! binary. Everything here is also usable as a library.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;
pub mod plots;
pub mod scenario;

pub use config::RunConfig;
pub use scenario::{Scenario, SeedPlan};
