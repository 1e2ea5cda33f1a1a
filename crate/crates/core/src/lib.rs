pub mod algorithms;
pub mod analyzer;
pub mod datagen;
pub mod em;
pub mod experiment;
pub mod lp;
pub mod mpc;
pub mod plan;
pub mod query;
pub mod rational;
pub mod rng;
