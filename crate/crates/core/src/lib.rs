pub mod dataset;
pub mod nn;
pub mod rng;
pub mod mf;
pub mod ttnn;
pub mod synthetic;
pub mod eval;
pub mod embedding_file;
pub mod config;
pub mod pipeline;
