//! Grid-image supervision for robot manipulation episodes.
//!
//! Nine uniformly sampled frames are tiled into a 3×3 serpentine grid; masked copies of
//! that grid (optionally with an end-effector path drawn on the first tile) become
//! conditioning inputs. The crate also carries the low-rank adapter algebra used to
//! finetune a generator on such grids and the metrics used to score generated grids.

pub mod config;
pub mod episode;
pub mod error;
pub mod frame;
pub mod grid;
pub mod lora;
pub mod metrics;
pub mod overlay;
pub mod pipeline;
pub mod supervision;

pub use error::{Error, Result};
pub use frame::{Frame, Rgb};
pub use grid::{apply_mask, assemble_grid, disassemble_grid, serpentine_cell, GridImage, GridLayout, GridMask};
