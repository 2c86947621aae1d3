pub mod anchors;
pub mod cli;
pub mod config;
pub mod frontier;
pub mod geometry;
pub mod metrics;
pub mod occupancy;
pub mod prompting;
pub mod roadmap;
pub mod simulator;
