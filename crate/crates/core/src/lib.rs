//! Language modelling with an auxiliary next-tag decoder whose predictions
//! feed the LM as a predictive representation.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod model;
pub mod trace;
pub mod trainer;

pub use error::{CheckpointError, Error, Result};
