//! LRNet: localization-then-refinement change detection for bi-temporal
//! remote sensing images.
//!
//! The crate is organised the way a change map is produced:
//!
//! * [`raster`]: tiles, masks, probability maps, difference images and
//!   1-pixel boundaries.
//! * [`encoder`]: the three-branch encoder (two shared-weight image branches
//!   and a difference branch with learnable pooling).
//! * [`alignment`]: change alignment attention and its hierarchical
//!   propagation across encoder levels.
//! * [`refinement`]: the attention decoder and the deep supervision head.
//! * [`loss`] and [`metrics`]: area/edge losses and the evaluation suite.
//! * [`data`]: tiling, splitting, loading and a synthetic dataset generator.
//! * [`train`]: training, evaluation, inference and ablation.
//!
//! ```
//! use lrnet::raster::{binarize, boundary_extract, ProbabilityMap};
//!
//! let prob = ProbabilityMap::new(3, 3, vec![0.9; 9]).unwrap();
//! let mask = binarize(&prob, 0.5).unwrap();
//! assert_eq!(boundary_extract(&mask).count_ones(), 0);
//! ```

pub mod alignment;
pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod refinement;
pub mod train;

pub use config::{LossMode, ModelConfig, NormalizeMode, TrainConfig};
pub use error::{Error, Result};
pub use model::LrNet;
