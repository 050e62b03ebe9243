//! Thin-plate-spline warp priors for matching keypoints across object
//! instances, plus the evaluation, propagation and reconstruction stages that
//! consume those matches.
pub mod descriptors;
pub mod eval;
pub mod exemplar;
pub mod matcher;
pub mod posegraph;
pub mod propagate;
pub mod raster;
pub mod reconstruct;
pub mod synthetic;
pub mod tps;
pub use tps::{Point2, TpsWarp};
