//! Depth-guided, cross-view consistent inpainting of 3D Gaussian scenes.
//!
//! The crate covers the full pipeline: rendering and differentiating a
//! Gaussian scene, inferring minimal inpainting masks from cross-view
//! visibility, 2D inpainting backends, the optimization losses, scene fitting
//! and inpainting-guided refinement, and a synthetic scene harness with
//! ground-truth oracles.

pub mod error;
pub mod geometry;
pub mod inpaint;
pub mod losses;
pub mod masks;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod stages;
pub mod synth;

pub use error::{Error, Result};
pub use render::{render, render_labels, render_with, render_with_gradients, RenderedView};
pub use scene::{BinaryMask, CameraPose, ColoredPointCloud, Dataset, DepthMap, Gaussian, ImageRgb};
