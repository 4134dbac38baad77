//! Depth-guided inpainting masks: shrink each object mask to the pixels whose
//! background no other view observes, then open the result.

use rayon::prelude::*;

use crate::geometry::{proj2d, proj3d, ProjectedPixels};
use crate::scene::{BinaryMask, ColoredPointCloud, Dataset, DepthMap, Grid, ImageRgb};

pub const DEFAULT_OPENING_RADIUS: usize = 2;

fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Applies `f` over the in-bounds disc neighborhood of every pixel.
fn disc_filter(mask: &BinaryMask, radius: usize, erode: bool) -> BinaryMask {
    let offsets = disc_offsets(radius);
    let (w, h) = mask.dims();
    Grid::from_fn(w, h, |x, y| {
        let mut hits = offsets.iter().filter_map(|&(dx, dy)| {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
                .then(|| *mask.get(nx as usize, ny as usize))
        });
        if erode {
            hits.all(|v| v)
        } else {
            hits.any(|v| v)
        }
    })
}

/// Erosion with a disc; pixels outside the image are ignored.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    disc_filter(mask, radius, true)
}

/// Dilation with a disc; pixels outside the image are ignored.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    disc_filter(mask, radius, false)
}

/// Morphological opening (erosion then dilation) with a disc of `radius`.
pub fn open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    dilate(&erode(mask, radius), radius)
}

/// Background pixels of a view lifted to 3D: `I_k` outside `M_k`, through
/// `D_k`.
pub fn background_cloud(dataset: &Dataset, depths: &[DepthMap], source: usize) -> ColoredPointCloud {
    let view = &dataset.views[source];
    let select = view.mask.map(|&m| !m);
    proj3d(&view.image, &select, &depths[source], &view.pose).0
}

/// Pixels inside the target's object mask onto which the source view's
/// visible background projects.
pub fn visible_background(
    target: usize,
    source: usize,
    dataset: &Dataset,
    depths: &[DepthMap],
) -> ProjectedPixels {
    let cloud = background_cloud(dataset, depths, source);
    visible_from_cloud(target, &cloud, dataset)
}

fn visible_from_cloud(target: usize, cloud: &ColoredPointCloud, dataset: &Dataset) -> ProjectedPixels {
    let view = &dataset.views[target];
    proj2d(cloud, &view.pose).restrict_to(&view.mask)
}

/// Refined mask for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedMask {
    /// `M_i` minus every pixel seen as background from another view.
    pub unopened: BinaryMask,
    /// `M'_i`: the opened form of `unopened`.
    pub refined: BinaryMask,
    /// `I'^B_i`: the image outside `M_i` plus the recovered background.
    pub background: ImageRgb,
}

fn closer(a: &(f64, [f64; 3]), b: &(f64, [f64; 3])) -> bool {
    // Color breaks exact depth ties so the winner does not depend on view order.
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            let ka = a.1.map(f64::to_bits);
            let kb = b.1.map(f64::to_bits);
            ka < kb
        }
    }
}

fn refine_from_clouds(
    target: usize,
    dataset: &Dataset,
    clouds: &[ColoredPointCloud],
    radius: usize,
) -> RefinedMask {
    let view = &dataset.views[target];
    let (w, h) = view.mask.dims();
    let mut best: Grid<Option<(f64, [f64; 3])>> = Grid::filled(w, h, None);
    for (k, cloud) in clouds.iter().enumerate() {
        if k == target {
            continue;
        }
        for p in visible_from_cloud(target, cloud, dataset).pixels {
            let cand = (p.depth, p.color);
            let slot = best.get_mut(p.x, p.y);
            if slot.as_ref().is_none_or(|cur| closer(&cand, cur)) {
                *slot = Some(cand);
            }
        }
    }
    let seen = best.map(Option::is_some);
    let unopened = view.mask.and_not(&seen);
    let refined = open(&unopened, radius);
    let background = Grid::from_fn(w, h, |x, y| {
        if !*view.mask.get(x, y) {
            *view.image.get(x, y)
        } else {
            best.get(x, y).map_or([0.0; 3], |(_, c)| c)
        }
    });
    RefinedMask {
        unopened,
        refined,
        background,
    }
}

/// Refines the object mask of view `target` against all other views.
pub fn refine_mask(target: usize, dataset: &Dataset, depths: &[DepthMap], radius: usize) -> RefinedMask {
    let clouds: Vec<_> = (0..dataset.len())
        .map(|k| {
            if k == target {
                ColoredPointCloud::default()
            } else {
                background_cloud(dataset, depths, k)
            }
        })
        .collect();
    refine_from_clouds(target, dataset, &clouds, radius)
}

/// Original and refined masks for every view.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub original: Vec<BinaryMask>,
    pub unopened: Vec<BinaryMask>,
    pub refined: Vec<BinaryMask>,
    pub backgrounds: Vec<ImageRgb>,
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn refined_areas(&self) -> Vec<usize> {
        self.refined.iter().map(BinaryMask::count).collect()
    }
}

/// Runs [`refine_mask`] for every view.
pub fn refine_all(dataset: &Dataset, depths: &[DepthMap], radius: usize) -> MaskSet {
    assert_eq!(depths.len(), dataset.len(), "one depth map per view");
    let clouds: Vec<_> = (0..dataset.len())
        .into_par_iter()
        .map(|k| background_cloud(dataset, depths, k))
        .collect();
    let per_view: Vec<_> = (0..dataset.len())
        .into_par_iter()
        .map(|i| refine_from_clouds(i, dataset, &clouds, radius))
        .collect();
    let mut set = MaskSet {
        original: dataset.masks(),
        unopened: Vec::new(),
        refined: Vec::new(),
        backgrounds: Vec::new(),
    };
    for r in per_view {
        set.unopened.push(r.unopened);
        set.refined.push(r.refined);
        set.backgrounds.push(r.background);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{CameraPose, View};
    use nalgebra::{Matrix3, Vector3};

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        Grid::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn radius_zero_is_identity() {
        let m = mask_from(&["#..", ".#.", "..#"]);
        assert_eq!(open(&m, 0), m);
    }

    #[test]
    fn isolated_pixel_is_removed() {
        let m = mask_from(&[".....", ".....", "..#..", ".....", "....."]);
        assert_eq!(open(&m, 1).count(), 0);
    }

    #[test]
    fn opening_keeps_large_blob_and_drops_speck() {
        let m = mask_from(&[
            "#.........",
            "..........",
            "....####..",
            "...######.",
            "...######.",
            "...######.",
            "....####..",
            "..........",
        ]);
        let o = open(&m, 1);
        assert!(!*o.get(0, 0));
        assert!(*o.get(5, 4));
        assert!(o.is_subset_of(&m));
    }

    #[test]
    fn opening_is_idempotent() {
        let m = Grid::from_fn(20, 17, |x, y| (x * 7 + y * 13) % 5 != 0 || (x / 4 + y / 3) % 2 == 0);
        for r in 0..4 {
            let once = open(&m, r);
            assert_eq!(open(&once, r), once, "radius {r}");
        }
    }

    fn tiny_dataset(k: usize, mask: BinaryMask) -> Dataset {
        let pose = CameraPose::new(
            Matrix3::identity(),
            Vector3::zeros(),
            [20.0, 20.0, 7.5, 7.5],
            16,
            16,
        )
        .unwrap();
        let view = View {
            image: Grid::from_fn(16, 16, |x, y| [x as f64 / 15.0, y as f64 / 15.0, 0.5]),
            pose,
            mask,
            labels: None,
            gt_removed: None,
            gt_removed_depth: None,
        };
        Dataset::new(vec![view; k]).unwrap()
    }

    #[test]
    fn single_view_only_opens() {
        let mask = Grid::from_fn(16, 16, |x, y| (4..12).contains(&x) && (3..10).contains(&y) || (x, y) == (0, 15));
        let ds = tiny_dataset(1, mask.clone());
        let depths = vec![Grid::filled(16, 16, 2.0)];
        let r = refine_mask(0, &ds, &depths, 2);
        assert_eq!(r.unopened, mask);
        assert_eq!(r.refined, open(&mask, 2));
        assert_eq!(r.background, ds.views[0].image.masked_out(&mask));
    }

    #[test]
    fn empty_object_mask_keeps_image() {
        let ds = tiny_dataset(2, Grid::filled(16, 16, false));
        let depths = vec![Grid::filled(16, 16, 2.0); 2];
        let r = refine_mask(0, &ds, &depths, 2);
        assert_eq!(r.refined.count(), 0);
        assert_eq!(r.background, ds.views[0].image);
    }

    #[test]
    fn identical_views_see_nothing_inside_mask() {
        let mask = Grid::from_fn(16, 16, |x, y| (5..11).contains(&x) && (5..11).contains(&y));
        let ds = tiny_dataset(2, mask.clone());
        let depths = vec![Grid::filled(16, 16, 2.0); 2];
        assert!(visible_background(0, 1, &ds, &depths).is_empty());
        let set = refine_all(&ds, &depths, 1);
        for k in 0..2 {
            assert_eq!(set.refined[k], open(&mask, 1));
        }
    }

    #[test]
    fn fully_masked_source_contributes_nothing() {
        let ds = tiny_dataset(2, Grid::filled(16, 16, true));
        let depths = vec![Grid::filled(16, 16, 2.0); 2];
        assert!(visible_background(0, 1, &ds, &depths).is_empty());
    }
}
