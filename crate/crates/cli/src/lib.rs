//! Command-line front end for sketched lidar: simulation, sketching, fitting
//! and the experiment runners behind each figure-style study.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;
