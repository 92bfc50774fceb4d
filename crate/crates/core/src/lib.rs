//! Water-body segmentation on multi-resolution satellite rasters.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), a
//! configurable U-Net ([`nn`]), segmentation losses and metrics ([`loss`]),
//! the dual-U-Net knowledge-transfer model ([`combined`]), raster I/O and a
//! synthetic two-resolution scene generator ([`data`]), and the training and
//! evaluation loops ([`trainer`]).

pub mod error;
pub mod tensor;
pub mod nn;
pub mod loss;
pub mod combined;
pub mod data;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Graph, PrngState, Shape4, Tensor4, Var};
