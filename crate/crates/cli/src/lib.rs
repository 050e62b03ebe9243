//! Pipeline around the `warpmatch` library: synthetic pair generation, grid
//! fitting, matching, evaluation, track propagation and reconstruction.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod output;
pub mod pipeline;
pub mod toy;
