//! Acceptance criteria 1–10. Runs as a plain binary so every criterion prints
//! one PASS/FAIL line; exits non-zero if any fails. Pass criterion numbers as
//! arguments to run a subset.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mbl_core::geo_attention::{
    attention_weights, cross_attention, linear_attention_rowwise, merge_features, AttentionMode, FeatureGrid, MergeParams,
};
use mbl_core::geom::{
    backproject_ortho, nadir_pose, project_ortho, rotation_from_axis_angle, OrthoIntrinsics, PerspectiveIntrinsics, Pose,
    Vec3,
};
use mbl_core::harness::{accuracy_at, median, run_experiment, ExperimentConfig, TerrainSource};
use mbl_core::lighting::SunConfig;
use mbl_core::localize::{ransac_pnp, tile_windows, LocalizeParams, PnpStatus, RansacParams};
use mbl_core::matchers::{filter_matches, Match, MatchSet};
use mbl_core::raster::PixelRect;
use mbl_core::render::{render, CameraModel, RenderSettings, MAP_ALTITUDE_M};
use mbl_core::terrain::{generate_synthetic_terrain, BruteForce, CraterParams, SynthParams, TerrainAccel, TerrainModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_optics() -> Outcome {
    let optics = PerspectiveIntrinsics::reference_query();
    let (lo, hi) = (optics.ground_sample_distance(64.0), optics.ground_sample_distance(200.0));
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    outcome(
        round2(lo) == 0.25 && round2(hi) == 0.78,
        format!("GSD(64) = {lo} m/px, GSD(200) = {hi} m/px"),
    )
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
    let r = rotation_from_axis_angle(&(axis * rng.gen_range(0.0..std::f64::consts::PI)));
    let t = Vec3::new(rng.gen_range(-2000.0..2000.0), rng.gen_range(-2000.0..2000.0), rng.gen_range(1000.0..5000.0));
    Pose::new(r, t).unwrap()
}

fn c2_backprojection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut pose = random_pose(&mut rng);
    let mut oi = OrthoIntrinsics::with_resolution(4000, 4000, 0.25);
    for i in 0..100_000 {
        if i % 100 == 0 {
            pose = random_pose(&mut rng);
            let w = rng.gen_range(64..8000);
            let h = rng.gen_range(64..8000);
            oi = OrthoIntrinsics::with_resolution(w, h, rng.gen_range(0.1..2.0));
        }
        let u = rng.gen_range(0.0..(oi.width - 1) as f64);
        let v = rng.gen_range(0.0..(oi.height - 1) as f64);
        let d = rng.gen_range(1.0..8000.0);
        let x = backproject_ortho(&oi, &pose, u, v, d).unwrap();
        let p = project_ortho(&oi, &pose, &x);
        worst = worst.max((p.u - u).abs()).max((p.v - v).abs()).max((p.depth - d).abs());
    }
    outcome(worst < 1e-9, format!("max round-trip error {worst:e} over 1e5 samples"))
}

fn c3_renderer_equivalence() -> Outcome {
    let t = generate_synthetic_terrain(&SynthParams {
        size_m: 64.0,
        ..SynthParams::default()
    });
    let accel = TerrainAccel::build(&t).unwrap();
    let settings = RenderSettings {
        shadow_samples: 4,
        seed: 42,
        ..RenderSettings::default()
    };
    let cameras = [
        (
            CameraModel::Ortho(OrthoIntrinsics::with_resolution(64, 64, 1.0)),
            nadir_pose(0.0, 0.0, MAP_ALTITUDE_M),
        ),
        (
            CameraModel::Perspective(PerspectiveIntrinsics {
                width: 64,
                height: 64,
                ..PerspectiveIntrinsics::reference_query()
            }),
            nadir_pose(3.0, -2.0, 40.0),
        ),
    ];
    let suns = [SunConfig::new(0.0, 60.0), SunConfig::new(135.0, 20.0), SunConfig::new(250.0, 5.0)];
    let mut worst_depth = 0.0f64;
    let mut gray_diffs = 0usize;
    for (camera, pose) in &cameras {
        for sun in &suns {
            let fast = render(&accel, camera, pose, sun, &settings).unwrap();
            let slow = render(&BruteForce(&t), camera, pose, sun, &settings).unwrap();
            gray_diffs += fast.gray.data().iter().zip(slow.gray.data()).filter(|(a, b)| a != b).count();
            for (a, b) in fast.depth.data().iter().zip(slow.depth.data()) {
                worst_depth = worst_depth.max((a - b).abs());
            }
        }
    }
    outcome(
        gray_diffs == 0 && worst_depth <= 1e-9,
        format!("2 projections × 3 suns: {gray_diffs} gray differences, max depth difference {worst_depth:e}"),
    )
}

fn c4_depth_semantics() -> Outcome {
    let t = TerrainModel::flat(201, 201, 1.0, 0.0, 0.5);
    let accel = TerrainAccel::build(&t).unwrap();
    let altitude = 50.0;
    let img = render(
        &accel,
        &CameraModel::Perspective(PerspectiveIntrinsics::reference_query()),
        &nadir_pose(0.0, 0.0, altitude),
        &SunConfig::new(180.0, 40.0),
        &RenderSettings::default(),
    )
    .unwrap();
    let worst = img.depth.data().iter().map(|d| (d - altitude).abs()).fold(0.0, f64::max);
    outcome(worst < 1e-6, format!("max |depth − altitude| = {worst:e} over 640×480 pixels"))
}

fn c5_pnp() -> Outcome {
    let k = common::pnp_camera();
    let (mut worst_t, mut worst_r) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let pose = common::pnp_pose(&mut rng);
        let corrs = common::noisy_correspondences(&k, &pose, 100, 0, 0.0, &mut rng);
        let est = ransac_pnp(&corrs, &k, &RansacParams { seed, ..RansacParams::default() });
        match (est.status, est.pose) {
            (PnpStatus::Ok, Some(p)) => {
                worst_t = worst_t.max((p.t_wc - pose.t_wc).norm());
                worst_r = worst_r.max(p.rotation_angle_to(&pose));
            }
            _ => {
                worst_t = f64::INFINITY;
                worst_r = f64::INFINITY;
            }
        }
    }
    let errors: Vec<f64> = (0..100).map(|s| common::ransac_trial(s).error_m).collect();
    let med = common::median(&errors);
    let over = errors.iter().filter(|e| **e > 1.0).count();
    outcome(
        worst_t < 1e-6 && worst_r < 1e-6 && med < 0.05 && over == 0,
        format!(
            "noise-free max error {worst_t:e} m / {worst_r:e} rad; noisy median {med:.4} m (< 0.05 required), {over} trials > 1 m"
        ),
    )
}

fn c6_self_consistency() -> Outcome {
    let config = ExperimentConfig {
        terrain: TerrainSource::Synthetic(SynthParams::default()),
        map_pixel_m: 0.25,
        map_azimuths: vec![180.0],
        map_elevations: vec![40.0],
        sun_diameter_deg: 0.0,
        shadow_samples: 1,
        query_count: 100,
        matcher: "ncc".into(),
        seed: 42,
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&config).unwrap();
    let errors: Vec<f64> = out.report.rows.iter().map(|r| r.err_m).collect();
    let at1 = accuracy_at(&errors, 1.0).unwrap();
    let med = median(&errors).unwrap();
    outcome(
        errors.len() == 100 && at1 >= 0.9 && med < 0.5,
        format!("{} queries: @1m = {at1:.3}, median = {med:.4} m", errors.len()),
    )
}

fn c7_lighting_trend() -> Outcome {
    let elevations = [2.0, 5.0, 10.0, 40.0, 60.0, 90.0];
    let config = ExperimentConfig {
        terrain: TerrainSource::Synthetic(SynthParams {
            size_m: 1000.0,
            ..SynthParams::default()
        }),
        map_pixel_m: 0.25,
        map_azimuths: vec![180.0],
        map_elevations: elevations.to_vec(),
        sun_diameter_deg: 0.0,
        shadow_samples: 1,
        query_count: 20,
        localize: LocalizeParams {
            search_side_m: 500.0,
            ..LocalizeParams::default()
        },
        matcher: "ncc".into(),
        seed: 42,
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&config).unwrap();
    let at = |el: f64| {
        let errors: Vec<f64> = out.report.rows.iter().filter(|r| r.map_el_deg == el).map(|r| r.err_m).collect();
        accuracy_at(&errors, 1.0).unwrap()
    };
    let table: Vec<String> = elevations.iter().map(|el| format!("EL {el}: {:.2}", at(*el))).collect();
    outcome(at(2.0) <= at(40.0), format!("@1m by map EL: {}", table.join(", ")))
}

fn c8_geo_attention() -> Outcome {
    let grad = (0..20).map(common::merge_gradient_max_rel_error).fold(0.0, f64::max);
    let mut reassoc = 0.0f64;
    let mut rowsum = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fq = FeatureGrid::random(3, 3, 4, 1.0, &mut rng);
        let fkv = FeatureGrid::random(3, 3, 4, 1.0, &mut rng);
        let lin = MergeParams::random(4, seed, AttentionMode::Linear).gray_from_depth;
        let fast = cross_attention(&fq, &fkv, &lin, AttentionMode::Linear).unwrap();
        let slow = linear_attention_rowwise(&fq, &fkv, &lin).unwrap();
        reassoc = reassoc.max((fast.tokens() - slow.tokens()).abs().max() / slow.tokens().abs().max());
        let soft = MergeParams::random(4, seed, AttentionMode::Softmax).gray_from_depth;
        let a = attention_weights(&fq, &fkv, &soft).unwrap();
        for row in a.row_iter() {
            rowsum = rowsum.max((row.sum() - 1.0).abs());
        }
    }
    let (fb, fc) = common::hand_merge_grids();
    let expected = common::hand_merge_expected();
    let mut hand = 0.0f64;
    for mode in [AttentionMode::Softmax, AttentionMode::Linear] {
        let out = merge_features(&fb, &fc, &MergeParams { mode, ..common::hand_merge_params() }).unwrap();
        for (c, e) in expected.iter().enumerate() {
            hand = hand.max((out.tokens()[(0, c)] - e).abs());
        }
    }
    outcome(
        grad < 1e-4 && reassoc < 1e-10 && rowsum < 1e-12 && hand < 1e-12,
        format!("gradient rel. error {grad:e}, reassociation {reassoc:e}, row sum {rowsum:e}, hand merge {hand:e}"),
    )
}

fn c9_tiling_filtering() -> Outcome {
    let area = PixelRect::new(0, 0, 4000, 4000);
    let (ww, wh) = (1024, 768);
    let tiles = tile_windows(&area, (ww, wh), 0.10);
    let mut covered = vec![false; 4000 * 4000];
    let mut inside = true;
    for t in &tiles {
        inside &= area.contains(t);
        for y in t.y..t.bottom() {
            covered[y * 4000 + t.x..y * 4000 + t.right()].fill(true);
        }
    }
    let union_ok = inside && covered.iter().all(|c| *c);
    let (min_x, min_y) = ((0.1 * ww as f64).ceil() as usize, (0.1 * wh as f64).ceil() as usize);
    let mut overlap_ok = true;
    for a in &tiles {
        let right = tiles.iter().filter(|b| b.y == a.y && b.x > a.x).min_by_key(|b| b.x);
        let below = tiles.iter().filter(|b| b.x == a.x && b.y > a.y).min_by_key(|b| b.y);
        if let Some(b) = right {
            overlap_ok &= a.right() >= b.x + min_x;
        }
        if let Some(b) = below {
            overlap_ok &= a.bottom() >= b.y + min_y;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sets: Vec<MatchSet> = (0..8).map(|id| MatchSet::empty(id, "ncc")).collect();
    for _ in 0..10_000 {
        let id = rng.gen_range(0..8);
        sets[id].matches.push(Match {
            query_u: rng.gen_range(0..640) as f64,
            query_v: rng.gen_range(0..480) as f64,
            window_u: rng.gen_range(0.0..1024.0),
            window_v: rng.gen_range(0.0..768.0),
            confidence: 0.9 + rng.gen_range(0..1000) as f64 / 10_000.0,
        });
    }
    let got = filter_matches(&sets, 500, 0.95);
    let mut oracle = Vec::new();
    for set in &sets {
        let mut ms = set.matches.clone();
        ms.sort_by(|a, b| {
            let key = |m: &Match| [-m.confidence, m.query_u, m.query_v, m.window_u, m.window_v];
            key(a).partial_cmp(&key(b)).unwrap()
        });
        ms.truncate(500);
        oracle.extend(ms.into_iter().filter(|m| m.confidence >= 0.95).map(|m| (set.window_id, m)));
    }
    let filter_ok = got.len() == oracle.len()
        && got.iter().zip(&oracle).all(|(g, (id, m))| g.window_id == *id && g.matched == *m);
    outcome(
        union_ok && overlap_ok && filter_ok,
        format!(
            "{} tiles, union exact: {union_ok}, neighbor overlap ≥ 10%: {overlap_ok}; filter kept {} matches, oracle agrees: {filter_ok}",
            tiles.len(),
            got.len()
        ),
    )
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        terrain: TerrainSource::Synthetic(SynthParams {
            size_m: 500.0,
            craters: CraterParams {
                count: 10,
                ..SynthParams::default().craters
            },
            ..SynthParams::default()
        }),
        map_pixel_m: 0.5,
        map_elevations: vec![40.0, 10.0],
        shadow_samples: 4,
        query_count: 3,
        altitude_bins: vec![[64.0, 90.0], [90.0, 120.0]],
        localize: LocalizeParams {
            search_side_m: 300.0,
            ..LocalizeParams::default()
        },
        ..ExperimentConfig::default()
    };
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let stages = [
        "gen-terrain",
        "render-map",
        "sample-queries",
        "render-queries",
        "make-dataset",
        "localize",
        "evaluate",
    ];
    let mut trees = Vec::new();
    let mut failures = Vec::new();
    for threads in ["1", "2"] {
        let staged = tmp.path().join(format!("staged_{threads}"));
        let single = tmp.path().join(format!("run_{threads}"));
        let mut cmds: Vec<(&str, &Path)> = stages.iter().map(|s| (*s, staged.as_path())).collect();
        cmds.push(("run", single.as_path()));
        for (cmd, out) in cmds {
            let status = Command::new(env!("CARGO_BIN_EXE_mbl"))
                .arg("--config")
                .arg(&cfg_path)
                .args(["--seed", "42", "--threads", threads, "--out"])
                .arg(out)
                .arg(cmd)
                .output()
                .unwrap();
            if !status.status.success() {
                failures.push(format!("{cmd} ({threads} threads): {}", String::from_utf8_lossy(&status.stderr)));
            }
        }
        trees.push((tree_bytes(&staged), tree_bytes(&single)));
    }
    let files = trees[0].0.len() + trees[0].1.len();
    let identical = trees[0] == trees[1];
    outcome(
        failures.is_empty() && identical && files > 0,
        if failures.is_empty() {
            format!("{files} output files from 8 commands, byte-identical at 1 and 2 threads: {identical}")
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, c1_optics),
        (2, c2_backprojection),
        (3, c3_renderer_equivalence),
        (4, c4_depth_semantics),
        (5, c5_pnp),
        (6, c6_self_consistency),
        (7, c7_lighting_trend),
        (8, c8_geo_attention),
        (9, c9_tiling_filtering),
        (10, c10_determinism),
    ];
    let mut failed = Vec::new();
    for (n, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2}: {verdict} ({:.1} s) {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
