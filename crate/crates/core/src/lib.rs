pub mod error;
pub mod gc_dist;
pub mod harness;
pub mod inference;
pub mod likelihood;
pub mod model_eval;
pub mod numeric;
pub mod priors;
pub mod sparse;
pub mod specfun;
pub mod star_predictor;

pub use error::{Error, Result};
