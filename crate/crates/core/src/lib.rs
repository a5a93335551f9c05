pub mod baselines;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod motion;
pub mod objectives;
pub mod optimizer;
pub mod prior;
pub mod rig;
pub mod scenario;
pub mod schedule;
pub mod sds;
pub mod world;

pub use error::{CoinError, Result};
