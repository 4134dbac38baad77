use std::path::Path;

use serde::{Deserialize, Serialize};

use super::camera::{CameraPose, PoseRecord};
use super::grid::{BinaryMask, DepthMap, ImageRgb, LabelMap};
use super::io;
use crate::error::{Error, Result};

/// One training view and its optional auxiliary rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: ImageRgb,
    pub pose: CameraPose,
    /// Object mask `M`.
    pub mask: BinaryMask,
    /// Identity labels used to supervise fitting.
    pub labels: Option<LabelMap>,
    /// Ground-truth image with the object removed (synthetic scenes only).
    pub gt_removed: Option<ImageRgb>,
    /// Ground-truth depth with the object removed (synthetic scenes only).
    pub gt_removed_depth: Option<DepthMap>,
}

impl View {
    pub fn validate(&self, index: usize) -> Result<()> {
        let dims = self.pose.dims();
        let check = |what: &str, actual: (usize, usize)| {
            if actual != dims {
                Err(Error::Validation(format!(
                    "view {index}: {what} is {}x{}, pose expects {}x{}",
                    actual.0, actual.1, dims.0, dims.1
                )))
            } else {
                Ok(())
            }
        };
        check("image", self.image.dims())?;
        check("mask", self.mask.dims())?;
        if let Some(l) = &self.labels {
            check("label map", l.dims())?;
        }
        if let Some(g) = &self.gt_removed {
            check("ground-truth image", g.dims())?;
        }
        if let Some(d) = &self.gt_removed_depth {
            check("ground-truth depth", d.dims())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
}

#[derive(Serialize, Deserialize)]
struct PosesFile {
    views: Vec<PoseRecord>,
}

pub const POSES_FILE: &str = "poses.json";

fn view_file(dir: &str, index: usize, ext: &str) -> String {
    format!("{dir}/view_{index:03}.{ext}")
}

impl Dataset {
    pub fn new(views: Vec<View>) -> Result<Self> {
        let ds = Dataset { views };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.views.iter().map(|v| v.pose.clone()).collect()
    }

    pub fn masks(&self) -> Vec<BinaryMask> {
        self.views.iter().map(|v| v.mask.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Validation("dataset has no views".into()));
        }
        for (i, v) in self.views.iter().enumerate() {
            v.pose.validate()?;
            v.validate(i)?;
        }
        Ok(())
    }

    /// Loads a dataset directory (`poses.json`, `images/`, `masks/`, and the
    /// optional `labels/`, `gt_removed/`, `gt_removed_depth/`).
    pub fn load(dir: &Path) -> Result<Self> {
        let poses_path = dir.join(POSES_FILE);
        let text = std::fs::read_to_string(&poses_path).map_err(|e| Error::io(&poses_path, e))?;
        let poses: PosesFile =
            serde_json::from_str(&text).map_err(|e| Error::decode(&poses_path, e.to_string()))?;

        let mut views = Vec::with_capacity(poses.views.len());
        for (i, record) in poses.views.iter().enumerate() {
            let pose = CameraPose::try_from(record)
                .map_err(|e| Error::Validation(format!("view {i}: {e}")))?;
            let image = io::read_png_rgb(&dir.join(view_file("images", i, "png")))?;
            let mask = io::read_png_mask(&dir.join(view_file("masks", i, "png")))?;
            let optional = |sub: &str, ext: &str| {
                let p = dir.join(view_file(sub, i, ext));
                p.exists().then_some(p)
            };
            let labels = optional("labels", "png")
                .map(|p| io::read_png_labels(&p))
                .transpose()?;
            let gt_removed = optional("gt_removed", "png")
                .map(|p| io::read_png_rgb(&p))
                .transpose()?;
            let gt_removed_depth = optional("gt_removed_depth", "pfm")
                .map(|p| io::read_pfm_depth(&p))
                .transpose()?;
            views.push(View {
                image,
                pose,
                mask,
                labels,
                gt_removed,
                gt_removed_depth,
            });
        }
        Dataset::new(views)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let poses = PosesFile {
            views: self.views.iter().map(|v| PoseRecord::from(&v.pose)).collect(),
        };
        let poses_path = dir.join(POSES_FILE);
        io::ensure_dir(dir)?;
        let text = serde_json::to_string_pretty(&poses).expect("poses serialize");
        std::fs::write(&poses_path, text).map_err(|e| Error::io(&poses_path, e))?;
        for (i, v) in self.views.iter().enumerate() {
            io::write_png_rgb(&dir.join(view_file("images", i, "png")), &v.image)?;
            io::write_png_mask(&dir.join(view_file("masks", i, "png")), &v.mask)?;
            if let Some(l) = &v.labels {
                io::write_png_labels(&dir.join(view_file("labels", i, "png")), l)?;
            }
            if let Some(g) = &v.gt_removed {
                io::write_png_rgb(&dir.join(view_file("gt_removed", i, "png")), g)?;
            }
            if let Some(d) = &v.gt_removed_depth {
                io::write_pfm_depth(&dir.join(view_file("gt_removed_depth", i, "pfm")), d)?;
            }
        }
        Ok(())
    }
}

/// Path of a per-view raster inside `dir/sub/`.
pub fn per_view_path(dir: &Path, sub: &str, index: usize, ext: &str) -> std::path::PathBuf {
    dir.join(view_file(sub, index, ext))
}
