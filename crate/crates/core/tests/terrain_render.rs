use std::path::PathBuf;

use mbl_core::geom::{nadir_pose, OrthoIntrinsics, PerspectiveIntrinsics, Vec3};
use mbl_core::io;
use mbl_core::lighting::{visibility, PixelStream, SunConfig};
use mbl_core::render::{primary_ray, render_ortho, CameraModel, render_perspective, RenderSettings, MAP_ALTITUDE_M};
use mbl_core::terrain::{generate_synthetic_terrain, height_histogram, BruteForce, SynthParams, TerrainAccel, TerrainModel};
use proptest::prelude::*;
use serde::{Deserialize, Serialize};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

/// Regenerates frozen fixtures instead of comparing against them.
fn bless() -> bool {
    std::env::var_os("MBL_BLESS").is_some()
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct HeightHistogram {
    min: f64,
    max: f64,
    counts: Vec<u64>,
}

fn histogram(t: &TerrainModel, bins: usize) -> HeightHistogram {
    let (min, max) = t.height_range().unwrap();
    HeightHistogram {
        min,
        max,
        counts: height_histogram(t, min, max, bins),
    }
}

#[test]
fn seed_42_height_histogram_matches_golden() {
    let t = generate_synthetic_terrain(&SynthParams::default());
    assert_eq!(t.extent(), (2000.0, 2000.0));
    let hist = histogram(&t, 64);
    assert_eq!(hist.counts.iter().sum::<u64>(), 2001 * 2001);
    let path = fixture("seed42_height_histogram.json");
    if bless() {
        io::write_json(&path, &hist).unwrap();
    }
    let golden: HeightHistogram = io::read_json(&path).unwrap();
    assert_eq!(hist, golden);
}

fn golden_scene() -> (TerrainModel, OrthoIntrinsics, SunConfig, RenderSettings) {
    let t = generate_synthetic_terrain(&SynthParams {
        size_m: 64.0,
        ..SynthParams::default()
    });
    let oi = OrthoIntrinsics::with_resolution(128, 128, 0.5);
    let sun = SunConfig::new(150.0, 25.0);
    let settings = RenderSettings {
        shadow_samples: 4,
        seed: 42,
        ..RenderSettings::default()
    };
    (t, oi, sun, settings)
}

#[test]
fn ortho_128_matches_golden_brute_force_render() {
    let (t, oi, sun, settings) = golden_scene();
    let pose = nadir_pose(0.0, 0.0, MAP_ALTITUDE_M);
    let gray_path = fixture("seed42_ortho_128.pgm");
    let depth_path = fixture("seed42_ortho_128.pfm");
    if bless() {
        let slow = render_ortho(&BruteForce(&t), &oi, &pose, &sun, &settings).unwrap();
        io::write_pgm(&gray_path, &slow.gray).unwrap();
        io::write_pfm(&depth_path, &slow.depth.map(|d| d as f32)).unwrap();
    }
    let accel = TerrainAccel::build(&t).unwrap();
    let fast = render_ortho(&accel, &oi, &pose, &sun, &settings).unwrap();
    assert_eq!(fast.gray, io::read_pgm(&gray_path).unwrap());
    assert_eq!(fast.depth.map(|d| d as f32), io::read_pfm(&depth_path).unwrap());
}

/// Flat ground with a 20 m wall along x = 10.
fn wall_terrain() -> TerrainModel {
    TerrainModel::from_fn(81, 81, 1.0, 0.5, |x, _| if x > 10.0 { 20.0 } else { 0.0 })
}

#[test]
fn shadowed_fraction_non_increasing_in_elevation() {
    let t = wall_terrain();
    let accel = TerrainAccel::build(&t).unwrap();
    let oi = OrthoIntrinsics::with_resolution(64, 64, 0.5);
    let pose = nadir_pose(-8.0, 0.0, MAP_ALTITUDE_M);
    let settings = RenderSettings {
        shadow_samples: 1,
        ..RenderSettings::default()
    };
    let mut last = f64::INFINITY;
    for el in [2.0, 5.0, 10.0, 40.0, 60.0, 90.0] {
        let sun = SunConfig::new(0.0, el).with_diameter(0.0);
        let img = render_ortho(&accel, &oi, &pose, &sun, &settings).unwrap();
        let dark = img.gray.data().iter().filter(|g| **g == 0).count() as f64 / img.gray.data().len() as f64;
        assert!(dark <= last, "EL {el}: shadow fraction {dark} > {last}");
        last = dark;
    }
    assert_eq!(last, 0.0);
}

#[test]
fn flat_gray_non_decreasing_in_elevation() {
    let t = TerrainModel::flat(41, 41, 1.0, 0.0, 0.4);
    let accel = TerrainAccel::build(&t).unwrap();
    let oi = OrthoIntrinsics::with_resolution(16, 16, 1.0);
    let pose = nadir_pose(0.0, 0.0, MAP_ALTITUDE_M);
    let settings = RenderSettings {
        shadow_samples: 1,
        ..RenderSettings::default()
    };
    let mut last = 0u8;
    for el in (1..=90).map(f64::from) {
        let img = render_ortho(&accel, &oi, &pose, &SunConfig::new(77.0, el).with_diameter(0.0), &settings).unwrap();
        let g = img.gray.get(3, 5);
        assert!(img.gray.data().iter().all(|v| *v == g));
        assert!(g >= last, "EL {el}: {g} < {last}");
        last = g;
    }
}

#[test]
fn nadir_depth_plus_height_is_camera_z() {
    let t = generate_synthetic_terrain(&SynthParams {
        size_m: 300.0,
        seed: 5,
        ..SynthParams::default()
    });
    let accel = TerrainAccel::build(&t).unwrap();
    let pose = nadir_pose(12.0, -30.0, 60.0);
    let optics = PerspectiveIntrinsics {
        width: 80,
        height: 60,
        ..PerspectiveIntrinsics::reference_query()
    };
    let img = render_perspective(&accel, &optics, &pose, &SunConfig::new(0.0, 45.0), &RenderSettings::default()).unwrap();
    let camera = CameraModel::Perspective(optics);
    for v in 0..60 {
        for u in 0..80 {
            let (o, dir) = primary_ray(&camera, &pose, u as f64, v as f64).unwrap();
            let hit = t.ray_intersect_brute(&o, &dir).unwrap();
            let d = img.depth.get(u, v);
            assert!((d + hit.point.z - pose.t_wc.z).abs() < 1e-6, "pixel ({u}, {v})");
        }
    }
}

#[test]
fn rendering_is_identical_across_thread_counts() {
    let (t, oi, sun, settings) = golden_scene();
    let accel = TerrainAccel::build(&t).unwrap();
    let pose = nadir_pose(0.0, 0.0, MAP_ALTITUDE_M);
    let run = |n: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| render_ortho(&accel, &oi, &pose, &sun, &settings).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
}

#[test]
fn extent_follows_post_count() {
    for (rows, cols, spacing) in [(2, 2, 1.0), (17, 33, 0.5), (101, 41, 2.0)] {
        let t = TerrainModel::flat(rows, cols, spacing, 0.0, 0.5);
        assert_eq!(t.extent(), ((cols - 1) as f64 * spacing, (rows - 1) as f64 * spacing));
    }
}

fn small_terrain(seed: u64) -> TerrainModel {
    generate_synthetic_terrain(&SynthParams {
        size_m: 40.0,
        seed,
        ..SynthParams::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accel_intersection_equals_brute_force(
        seed in 0u64..4,
        ox in -30.0f64..30.0, oy in -30.0f64..30.0, oz in 5.0f64..80.0,
        dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -1.0f64..-0.05,
    ) {
        let t = small_terrain(seed);
        let accel = TerrainAccel::build(&t).unwrap();
        let o = Vec3::new(ox, oy, oz);
        let d = Vec3::new(dx, dy, dz).normalize();
        let a = accel.ray_intersect(&o, &d);
        let b = t.ray_intersect_brute(&o, &d);
        prop_assert_eq!(a, b);
        prop_assert_eq!(accel.occluded(&o, &d), b.is_some());
    }

    #[test]
    fn height_continuous_across_cell_edges(seed in 0u64..4, c in 1usize..40, f in 0.0f64..1.0) {
        let t = small_terrain(seed);
        let (x, _) = t.post_xy(0, c);
        let y = -20.0 + 40.0 * f;
        let left = t.height_at(x - 1e-13, y).unwrap();
        let right = t.height_at(x + 1e-13, y).unwrap();
        prop_assert!((left - right).abs() < 1e-12);
    }

    #[test]
    fn hard_visibility_is_binary(
        x in -30.0f64..30.0, y in -30.0f64..30.0, az in 0.0f64..360.0, el in 0.5f64..90.0, pixel in 0u64..1000,
    ) {
        let t = wall_terrain();
        let accel = TerrainAccel::build(&t).unwrap();
        let sun = SunConfig::new(az, el).with_diameter(0.0);
        let v = visibility(&accel, &Vec3::new(x, y, 1e-3), &sun, PixelStream { seed: 1, pixel });
        prop_assert!(v == 0.0 || v == 1.0);
    }
}
