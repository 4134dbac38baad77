//! Cross-view mask refinement on synthetic scenes.

mod common;

use common::{fixture_spec, removed_depths, rng};
use gsinpaint_core::geometry::landing_pixel;
use gsinpaint_core::masks::{open, refine_all, refine_mask, visible_background, DEFAULT_OPENING_RADIUS};
use gsinpaint_core::scene::{Dataset, Grid};
use gsinpaint_core::synth::{generate, SceneSpec};
use gsinpaint_core::DepthMap;
use rand::seq::SliceRandom;

fn ring() -> (Dataset, Vec<DepthMap>) {
    let scene = generate(&SceneSpec::default()).unwrap();
    let depths = removed_depths(&scene.dataset);
    (scene.dataset, depths)
}

/// Pixels of `M_target` whose background point, cast along the pixel ray,
/// is seen unoccluded by `source` outside its mask.
fn ray_cast_visible(target: usize, source: usize, ds: &Dataset, depths: &[DepthMap], eps: f64) -> Grid<bool> {
    let t = &ds.views[target];
    let s = &ds.views[source];
    Grid::from_fn(t.mask.width(), t.mask.height(), |x, y| {
        if !*t.mask.get(x, y) || !depths[target].is_valid_at(x, y) {
            return false;
        }
        let p = t.pose.backproject(x as f64, y as f64, *depths[target].get(x, y)).unwrap();
        match landing_pixel(&s.pose, &p) {
            Some((u, v, z)) => {
                !*s.mask.get(u, v) && depths[source].is_valid_at(u, v) && (z - depths[source].get(u, v)).abs() <= eps
            }
            None => false,
        }
    })
}

#[test]
fn two_camera_visibility_matches_ray_casting() {
    let spec = fixture_spec("two_camera.json");
    let scene = generate(&spec).unwrap();
    let ds = &scene.dataset;
    let depths = removed_depths(ds);
    let eps = 0.01 * spec.scene_diameter();
    for (target, source) in [(0, 1), (1, 0)] {
        let got = visible_background(target, source, ds, &depths).coverage_mask();
        let want = ray_cast_visible(target, source, ds, &depths, eps);
        let agree = got.as_slice().iter().zip(want.as_slice()).filter(|(a, b)| a == b).count();
        let frac = agree as f64 / got.len() as f64;
        assert!(frac >= 0.99, "{target} from {source}: agreement {frac}");
        assert!(got.count() > 0 && got.is_subset_of(&ds.views[target].mask));
    }
}

#[test]
fn ring_refinement_shrinks_every_mask() {
    let (ds, depths) = ring();
    let set = refine_all(&ds, &depths, DEFAULT_OPENING_RADIUS);
    for (i, (m, r)) in set.original.iter().zip(&set.refined).enumerate() {
        assert!(r.count() < m.count(), "view {i}: {} vs {}", r.count(), m.count());
        assert!(r.is_subset_of(m));
        assert!(set.unopened[i].is_subset_of(m));
    }
}

#[test]
fn refine_all_equals_per_view_refinement() {
    let (ds, depths) = ring();
    let set = refine_all(&ds, &depths, DEFAULT_OPENING_RADIUS);
    for i in 0..ds.len() {
        let one = refine_mask(i, &ds, &depths, DEFAULT_OPENING_RADIUS);
        assert_eq!(one.refined, set.refined[i], "view {i}");
        assert_eq!(one.unopened, set.unopened[i], "view {i}");
        assert_eq!(one.background, set.backgrounds[i], "view {i}");
    }
}

#[test]
fn view_order_does_not_matter() {
    let (ds, depths) = ring();
    let set = refine_all(&ds, &depths, DEFAULT_OPENING_RADIUS);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng(4));
    let permuted = Dataset::new(order.iter().map(|&i| ds.views[i].clone()).collect()).unwrap();
    let pdepths: Vec<_> = order.iter().map(|&i| depths[i].clone()).collect();
    let pset = refine_all(&permuted, &pdepths, DEFAULT_OPENING_RADIUS);
    for (j, &i) in order.iter().enumerate() {
        assert_eq!(pset.refined[j], set.refined[i], "view {i}");
        assert_eq!(pset.backgrounds[j], set.backgrounds[i], "view {i}");
    }
}

#[test]
fn duplicated_pose_only_opens_the_mask() {
    let (ds, depths) = ring();
    let twin = Dataset::new(vec![ds.views[3].clone(), ds.views[3].clone()]).unwrap();
    let set = refine_all(&twin, &[depths[3].clone(), depths[3].clone()], DEFAULT_OPENING_RADIUS);
    let opened = open(&ds.views[3].mask, DEFAULT_OPENING_RADIUS);
    assert!(opened.count() > 0);
    assert_eq!(set.refined, vec![opened.clone(), opened]);
}
