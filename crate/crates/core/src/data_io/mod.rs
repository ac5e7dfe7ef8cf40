//! File formats and dataset construction.

pub mod checkpoint;
pub mod idx;
pub mod pgm;
pub mod report;
pub mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use idx::{load_idx, load_mnist_dir};
pub use pgm::{export_decoding_grid, read_pgm, write_pgm, GrayImage};
pub use report::Report;
pub use synthetic::{make_biased_synthetic, make_biased_synthetic_with, make_biased_synthetic_with_cues, SyntheticConfig};
