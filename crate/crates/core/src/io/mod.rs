//! On-disk formats: HRT1 tensors, HRM1 model containers, binary PGM images.

pub mod container;
pub mod hrt;
pub mod pgm;

pub use container::{read_model, write_model, ModelFile};
pub use hrt::{read_tensor, read_tensor_file, write_tensor, write_tensor_file};
pub use pgm::{read_pgm, write_pgm, GrayImage};
