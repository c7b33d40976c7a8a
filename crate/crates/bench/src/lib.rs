//! Problem generators, experiment harness, rate fitting and plotting for the
//! `iapda` solvers.

pub mod experiment;
pub mod export;
pub mod generate;
pub mod rates;
pub mod rng;
pub mod svg;
