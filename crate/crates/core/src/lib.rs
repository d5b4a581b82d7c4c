//! Two-stage multi-organ segmentation engine.
//!
//! A coarse localization U-Net finds the region of interest on a low-resolution
//! grid, then a SpatialConfiguration-Net segments the organs inside that region
//! on a fine grid. The crate carries everything the pipeline needs on a CPU:
//! MetaImage IO and grid preprocessing, a small dense tensor engine with exact
//! backward kernels, graph builders with parameter/FLOP/activation-memory
//! accounting, losses, training (Adam + EMA, augmentation, synthetic phantoms)
//! and DSC/NSD evaluation.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.
//! Both paths compute every output element with the same reduction order, so
//! results are bit-identical either way.

pub mod arch;
pub mod config;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
