pub mod analysis;
pub mod baselines;
pub mod clients;
pub mod error;
pub mod grouping;
pub mod harness;
mod linalg;
pub mod model;
pub mod protocol;
pub mod tasks;
