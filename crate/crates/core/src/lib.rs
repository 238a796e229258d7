pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod feature_store;
pub mod learner_recommender;
pub mod metrics;
pub mod sampling;
pub mod session;
pub mod shot_recommender;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
