//! VectorAdam over vertex positions, scalar Adam over vertex colors, and the
//! fitting loop.

mod adam;
mod config;
mod fit;

pub use crate::mesh::shift_initialization;
pub use adam::{AdamParams, OptimState, ScalarAdamState};
pub use config::{FitConfig, LrSchedule, ViewSampling};
pub use fit::{
    checkpoint_paths, fit, fit_with_observer, load_optimizer_state, save_optimizer_state, write_checkpoint,
    write_history_csv, FitResult, HistoryRecord,
};
