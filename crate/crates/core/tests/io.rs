//! Dataset directories, scene files and raster round trips.

mod common;

use std::path::Path;

use common::{random_gaussians, rng};
use gsinpaint_core::scene::io::{
    decode_gaussians, encode_gaussians, load_gaussians, read_pfm_depth, save_gaussians, write_pfm_depth,
};
use gsinpaint_core::scene::{CameraPose, Dataset, Grid, View, NO_DEPTH};
use gsinpaint_core::synth::{generate, SceneSpec};
use gsinpaint_core::Error;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;

fn small_spec() -> SceneSpec {
    let mut spec = SceneSpec {
        floor_gaussians: 400,
        wall_gaussians: 100,
        width: 24,
        height: 20,
        ..SceneSpec::default()
    };
    spec.object.gaussians = 100;
    spec.rig.views = 3;
    spec
}

#[test]
fn two_view_directory_loads() {
    let dir = tempfile::tempdir().unwrap();
    let views = (0..2)
        .map(|i| {
            let pose = CameraPose::look_at(
                Vector3::new(2.0, i as f64, 1.0),
                Vector3::zeros(),
                Vector3::z(),
                60.0,
                64,
                64,
            )
            .unwrap();
            View {
                image: Grid::from_fn(64, 64, |x, y| [x as f64 / 255.0, y as f64 / 255.0, i as f64]),
                pose,
                mask: Grid::from_fn(64, 64, |x, _| x < 10),
                labels: None,
                gt_removed: None,
                gt_removed_depth: None,
            }
        })
        .collect();
    Dataset::new(views).unwrap().save(dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.views[1].image.dims(), (64, 64));
    assert_eq!(ds.views[0].mask.count(), 640);
}

#[test]
fn missing_poses_file_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let err = Dataset::load(dir.path()).unwrap_err();
    assert!(matches!(err, Error::NotFound(_)), "{err:?}");
    assert!(err.to_string().contains("poses.json not found"), "{err}");
}

#[test]
fn synthetic_dataset_round_trips_exactly() {
    let scene = generate(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    scene.dataset.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back, scene.dataset);
    assert!(back.views.iter().all(|v| v.labels.is_some() && v.gt_removed_depth.is_some()));
}

#[test]
fn ten_thousand_random_gaussians_round_trip() {
    let mut r = rng(77);
    let mut gs = random_gaussians(&mut r, 10_000, 5.0, (1e-3, 2.0));
    for g in &mut gs {
        g.round_to_f32();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.gsip");
    save_gaussians(&gs, &path).unwrap();
    assert_eq!(load_gaussians(&path).unwrap(), gs);
}

#[test]
fn every_truncation_is_rejected() {
    let mut r = rng(3);
    let gs = random_gaussians(&mut r, 3, 1.0, (0.1, 0.2));
    let bytes = encode_gaussians(&gs);
    for len in 0..bytes.len() {
        assert!(decode_gaussians(&bytes[..len], Path::new("t.gsip")).is_err(), "length {len}");
    }
    assert_eq!(decode_gaussians(&bytes, Path::new("t.gsip")).unwrap().len(), 3);
}

#[test]
fn pfm_round_trip_of_random_depths() {
    let mut r = rng(9);
    let depth = Grid::from_fn(37, 23, |_, _| {
        if r.random_bool(0.2) {
            NO_DEPTH
        } else {
            r.random_range(0.01f32..100.0) as f64
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    write_pfm_depth(&path, &depth).unwrap();
    assert_eq!(read_pfm_depth(&path).unwrap(), depth);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn encoded_scenes_decode_to_the_same_values(seed in any::<u64>(), n in 0usize..50) {
        let mut r = rng(seed);
        let mut gs = random_gaussians(&mut r, n, 10.0, (1e-4, 3.0));
        for g in &mut gs {
            g.round_to_f32();
        }
        let back = decode_gaussians(&encode_gaussians(&gs), Path::new("p.gsip")).unwrap();
        prop_assert_eq!(back, gs);
    }
}
