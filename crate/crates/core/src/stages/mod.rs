//! Optimization stages: fitting a scene to a dataset, removing an object and
//! refining the replacement Gaussians against inpainted supervision.

mod fit;
mod refine;
mod removal;

pub use fit::{fit, random_init, FitConfig, FitOutcome};
pub use refine::{refine, MetricsRow, RefineConfig, RefineEvent, RefineOutcome, METRICS_HEADER};
pub use removal::{
    build_supervision, infer_object_label, init_new_gaussians, remove_object, select_reference_view,
    split_by_label, RemovalResult, Supervision, NEIGHBORS,
};
