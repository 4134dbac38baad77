//! Lifting masked pixels to colored 3D points and splatting colored points
//! back into a view with z-buffered occlusion.

use nalgebra::Vector3;

use crate::error::Result;
use crate::scene::{
    BinaryMask, CameraPose, ColoredPoint, ColoredPointCloud, DepthMap, Grid, ImageRgb,
};

/// One pixel hit by a projected point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPixel {
    pub x: usize,
    pub y: usize,
    pub color: [f64; 3],
    /// Camera depth of the winning point in the target view.
    pub depth: f64,
}

/// Sparse result of splatting a point cloud into a view: at most one entry
/// per pixel, in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPixels {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<ProjectedPixel>,
}

impl ProjectedPixels {
    pub fn empty(width: usize, height: usize) -> Self {
        ProjectedPixels {
            width,
            height,
            pixels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn coverage_mask(&self) -> BinaryMask {
        let mut m = Grid::filled(self.width, self.height, false);
        for p in &self.pixels {
            m.set(p.x, p.y, true);
        }
        m
    }

    /// Keeps only pixels inside `mask`.
    pub fn restrict_to(mut self, mask: &BinaryMask) -> Self {
        self.pixels.retain(|p| *mask.get(p.x, p.y));
        self
    }
}

/// World-space point seen at pixel `(u, v)` with camera depth `depth`.
pub fn backproject_pixel(u: f64, v: f64, depth: f64, pose: &CameraPose) -> Result<Vector3<f64>> {
    pose.backproject(u, v, depth)
}

/// Lifts every selected pixel with a valid depth to a colored world point.
///
/// Returns the cloud and the number of selected pixels skipped for lack of
/// depth.
pub fn proj3d(
    image: &ImageRgb,
    select: &BinaryMask,
    depth: &DepthMap,
    pose: &CameraPose,
) -> (ColoredPointCloud, usize) {
    let (w, h) = image.dims();
    debug_assert_eq!(select.dims(), (w, h));
    debug_assert_eq!(depth.dims(), (w, h));
    let mut skipped = 0;
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !*select.get(x, y) {
                continue;
            }
            let d = *depth.get(x, y);
            match pose.backproject(x as f64, y as f64, d) {
                Ok(position) if position.iter().all(|c| c.is_finite()) => {
                    points.push(ColoredPoint {
                        position,
                        color: *image.get(x, y),
                        source_depth: d,
                    })
                }
                _ => skipped += 1,
            }
        }
    }
    (ColoredPointCloud { points }, skipped)
}

/// Nearest pixel of a projected point, if it lands inside the image.
#[inline]
pub fn landing_pixel(pose: &CameraPose, world: &Vector3<f64>) -> Option<(usize, usize, f64)> {
    let (u, v, z) = pose.project(world)?;
    let (x, y) = (u.round(), v.round());
    if x >= 0.0 && y >= 0.0 && x < pose.width as f64 && y < pose.height as f64 {
        Some((x as usize, y as usize, z))
    } else {
        None
    }
}

/// Per-pixel z-buffer: `(depth, point index)` of the nearest point.
pub(crate) fn zbuffer(cloud: &ColoredPointCloud, pose: &CameraPose) -> Grid<Option<(f64, usize)>> {
    let mut zbuf: Grid<Option<(f64, usize)>> = Grid::filled(pose.width, pose.height, None);
    for (i, p) in cloud.points.iter().enumerate() {
        let Some((x, y, z)) = landing_pixel(pose, &p.position) else {
            continue;
        };
        let slot = zbuf.get_mut(x, y);
        let closer = match *slot {
            None => true,
            Some((zd, j)) => z < zd || (z == zd && i < j),
        };
        if closer {
            *slot = Some((z, i));
        }
    }
    zbuf
}

/// Splats a cloud into `pose`; the nearest point wins each pixel.
pub fn proj2d(cloud: &ColoredPointCloud, pose: &CameraPose) -> ProjectedPixels {
    let zbuf = zbuffer(cloud, pose);
    let mut pixels = Vec::new();
    for y in 0..pose.height {
        for x in 0..pose.width {
            if let Some((depth, i)) = *zbuf.get(x, y) {
                pixels.push(ProjectedPixel {
                    x,
                    y,
                    color: cloud.points[i].color,
                    depth,
                });
            }
        }
    }
    ProjectedPixels {
        width: pose.width,
        height: pose.height,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn pose() -> CameraPose {
        CameraPose::new(
            Matrix3::identity(),
            Vector3::zeros(),
            [30.0, 30.0, 8.0, 8.0],
            16,
            16,
        )
        .unwrap()
    }

    fn point(x: f64, y: f64, z: f64, color: [f64; 3]) -> ColoredPoint {
        ColoredPoint {
            position: Vector3::new(x, y, z),
            color,
            source_depth: z,
        }
    }

    #[test]
    fn optical_axis_pixel_lifts_onto_axis() {
        let pose = pose();
        let img = Grid::filled(16, 16, [0.3, 0.2, 0.1]);
        let mut sel = Grid::filled(16, 16, false);
        sel.set(8, 8, true);
        let depth = Grid::filled(16, 16, 2.0);
        let (cloud, skipped) = proj3d(&img, &sel, &depth, &pose);
        assert_eq!(skipped, 0);
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.points[0].position, Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(cloud.points[0].color, [0.3, 0.2, 0.1]);
    }

    #[test]
    fn empty_selection_gives_empty_cloud() {
        let pose = pose();
        let (cloud, _) = proj3d(
            &Grid::filled(16, 16, [0.0; 3]),
            &Grid::filled(16, 16, false),
            &Grid::filled(16, 16, 1.0),
            &pose,
        );
        assert!(cloud.is_empty());
    }

    #[test]
    fn invalid_depth_is_skipped() {
        let pose = pose();
        let mut depth = Grid::filled(16, 16, 1.0);
        depth.set(2, 3, crate::scene::NO_DEPTH);
        let (cloud, skipped) = proj3d(
            &Grid::filled(16, 16, [0.0; 3]),
            &Grid::filled(16, 16, true),
            &depth,
            &pose,
        );
        assert_eq!(skipped, 1);
        assert_eq!(cloud.len(), 255);
    }

    #[test]
    fn point_behind_camera_is_dropped() {
        let cloud = ColoredPointCloud {
            points: vec![point(0.0, 0.0, -1.0, [1.0; 3])],
        };
        assert!(proj2d(&cloud, &pose()).is_empty());
    }

    #[test]
    fn nearest_point_wins() {
        let far = point(0.0, 0.0, 2.0, [0.0, 0.0, 1.0]);
        let near = point(0.0, 0.0, 1.0, [1.0, 0.0, 0.0]);
        for cloud in [
            ColoredPointCloud {
                points: vec![far.clone(), near.clone()],
            },
            ColoredPointCloud {
                points: vec![near, far],
            },
        ] {
            let out = proj2d(&cloud, &pose());
            assert_eq!(out.len(), 1);
            assert_eq!(out.pixels[0].color, [1.0, 0.0, 0.0]);
            assert_eq!(out.pixels[0].depth, 1.0);
        }
    }

    #[test]
    fn round_trip_through_same_view_is_identity() {
        let pose = pose();
        let img = Grid::from_fn(16, 16, |x, y| [x as f64 / 16.0, y as f64 / 16.0, 0.5]);
        let sel = Grid::from_fn(16, 16, |x, y| (x + y) % 3 == 0);
        let depth = Grid::from_fn(16, 16, |x, y| 1.0 + 0.05 * x as f64 + 0.02 * y as f64);
        let (cloud, _) = proj3d(&img, &sel, &depth, &pose);
        let out = proj2d(&cloud, &pose);
        assert_eq!(out.len(), sel.count());
        for p in &out.pixels {
            assert!(*sel.get(p.x, p.y));
            assert_eq!(p.color, *img.get(p.x, p.y));
            assert!((p.depth - depth.get(p.x, p.y)).abs() < 1e-6);
        }
    }
}
