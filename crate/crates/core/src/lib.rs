pub mod cli;
pub mod cwt;
pub mod data;
pub mod metrics;
pub mod model;
pub mod mrf;
pub mod nn;
pub mod splits;
pub mod synth;
pub mod train;
