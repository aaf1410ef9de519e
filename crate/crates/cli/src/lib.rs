//! Dataset generation, fitting, evaluation and export commands.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod toy;
