pub mod metrics;
pub mod model;
pub mod nn;
pub mod signal;
pub mod train;
