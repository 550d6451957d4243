pub mod baselines;
pub mod diff;
pub mod env;
pub mod error;
pub mod expert;
pub mod market;
pub mod metrics;
pub mod miro;
pub mod pipeline;
pub mod policy;
pub mod seed;
pub mod train;
pub mod world;

pub use error::{Error, Result};
