pub mod error;
pub mod signal;
pub mod augment;
pub mod dataset;
pub mod nn;
pub mod train;
pub mod eval;
pub mod pipeline;
