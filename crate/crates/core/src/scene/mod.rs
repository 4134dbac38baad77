//! Scene model: Gaussians, cameras, rasters, point clouds and datasets.

mod camera;
mod dataset;
mod gaussian;
mod grid;
pub mod io;
mod pointcloud;

pub use camera::{CameraPose, PoseRecord};
pub use dataset::{per_view_path, Dataset, View, POSES_FILE};
pub use gaussian::{
    matrix_to_quat, normalize_quat, quat_to_matrix, Gaussian, IDENTITY_DIM, PARAMS_PER_GAUSSIAN,
};
pub(crate) use gaussian::argmax;
pub use grid::{
    BinaryMask, DepthMap, Grid, ImageRgb, LabelMap, ScalarImage, BACKGROUND_LABEL, NO_DEPTH,
};
pub use pointcloud::{ColoredPoint, ColoredPointCloud};
