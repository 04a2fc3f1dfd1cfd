//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use mbl_core::geo_attention::{
    merge_features, merge_grad, AttentionMode, AttentionParams, FeatureGrid, MergeGrads, MergeParams, LAYER_NORM_EPS,
};
use mbl_core::geom::{nadir_pose, rotation_from_axis_angle, CameraMatrix, PerspectiveIntrinsics, Pose, Vec3};
use mbl_core::localize::Correspondence;
use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

fn flatten_params(p: &MergeParams) -> Vec<f64> {
    let mut v = Vec::new();
    for a in [&p.gray_from_depth, &p.depth_from_gray] {
        for m in [&a.wq, &a.wk, &a.wv] {
            v.extend(m.iter());
        }
    }
    v.extend(p.w1.iter());
    v.extend(p.b1.iter());
    v.extend(p.w2.iter());
    v.extend(p.b2.iter());
    v.extend(p.gamma.iter());
    v.extend(p.beta.iter());
    v
}

fn flatten_grads(g: &MergeGrads) -> Vec<f64> {
    let mut v = Vec::new();
    for a in [&g.gray_from_depth, &g.depth_from_gray] {
        for m in [&a.wq, &a.wk, &a.wv] {
            v.extend(m.iter());
        }
    }
    v.extend(g.w1.iter());
    v.extend(g.b1.iter());
    v.extend(g.w2.iter());
    v.extend(g.b2.iter());
    v.extend(g.gamma.iter());
    v.extend(g.beta.iter());
    v
}

fn unflatten_params(template: &MergeParams, v: &[f64]) -> MergeParams {
    let mut p = template.clone();
    let mut it = v.iter().copied();
    let mut fill = |xs: &mut dyn Iterator<Item = &mut f64>| xs.for_each(|x| *x = it.next().unwrap());
    for a in [&mut p.gray_from_depth, &mut p.depth_from_gray] {
        fill(&mut a.wq.iter_mut());
        fill(&mut a.wk.iter_mut());
        fill(&mut a.wv.iter_mut());
    }
    fill(&mut p.w1.iter_mut());
    fill(&mut p.b1.iter_mut());
    fill(&mut p.w2.iter_mut());
    fill(&mut p.b2.iter_mut());
    fill(&mut p.gamma.iter_mut());
    fill(&mut p.beta.iter_mut());
    p
}

fn loss(fb: &FeatureGrid, fc: &FeatureGrid, p: &MergeParams, upstream: &DMatrix<f64>) -> f64 {
    merge_features(fb, fc, p).unwrap().tokens().component_mul(upstream).sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn perturbed(g: &FeatureGrid, i: usize, delta: f64) -> FeatureGrid {
    let mut t = g.tokens().clone();
    t[i] += delta;
    FeatureGrid::new(g.height(), g.width(), t).unwrap()
}

/// Largest relative error between `merge_grad` and central differences over
/// every input and parameter, on random 3×3×4 grids.
pub fn merge_gradient_max_rel_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, d) = (3, 3, 4);
    let fb = FeatureGrid::random(h, w, d, 1.0, &mut rng);
    let fc = FeatureGrid::random(h, w, d, 1.0, &mut rng);
    let mut p = MergeParams::random(d, seed + 1000, AttentionMode::Softmax);
    p.gamma = RowDVector::from_fn(d, |_, _| rng.gen_range(0.5..1.5));
    p.beta = RowDVector::from_fn(d, |_, _| rng.gen_range(-0.5..0.5));
    let upstream = DMatrix::from_fn(h * w, d, |_, _| rng.gen_range(-1.0..1.0));
    let g = merge_grad(&fb, &fc, &p, &upstream).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..h * w * d {
        let num = (loss(&perturbed(&fb, i, FD_STEP), &fc, &p, &upstream)
            - loss(&perturbed(&fb, i, -FD_STEP), &fc, &p, &upstream))
            / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g.fb[i], num));
        let num = (loss(&fb, &perturbed(&fc, i, FD_STEP), &p, &upstream)
            - loss(&fb, &perturbed(&fc, i, -FD_STEP), &p, &upstream))
            / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g.fc[i], num));
    }
    let theta = flatten_params(&p);
    let analytic = flatten_grads(&g);
    assert_eq!(theta.len(), analytic.len());
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += FD_STEP;
        let mut minus = theta.clone();
        minus[i] -= FD_STEP;
        let num = (loss(&fb, &fc, &unflatten_params(&p, &plus), &upstream)
            - loss(&fb, &fc, &unflatten_params(&p, &minus), &upstream))
            / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], num));
    }
    worst
}

/// Camera of the 100 m pose-recovery fixture.
pub fn pnp_camera() -> CameraMatrix {
    PerspectiveIntrinsics::reference_query().camera_matrix().unwrap()
}

/// Nadir-ish pose 100 m above a rough ground patch, tilted by up to 5°.
pub fn pnp_pose(rng: &mut impl Rng) -> Pose {
    let base = nadir_pose(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), 100.0);
    let tilt = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        .normalize()
        * rng.gen_range(0.0..5f64.to_radians());
    Pose::new(rotation_from_axis_angle(&tilt) * base.r_wc, base.t_wc).unwrap()
}

/// Ground point seen at pixel `(u, v)`, on terrain of up to ±10 m relief.
pub fn ground_point(k: &CameraMatrix, pose: &Pose, u: f64, v: f64, rng: &mut impl Rng) -> Vec3 {
    let z = rng.gen_range(-10.0..10.0);
    let dir = pose.r_wc * k.unproject(u, v);
    let s = (z - pose.t_wc.z) / dir.z;
    pose.t_wc + dir * s
}

/// Correspondences with `inliers` noisy true matches followed by `outliers`
/// uniform image positions paired with unrelated ground points.
pub fn noisy_correspondences(
    k: &CameraMatrix,
    pose: &Pose,
    inliers: usize,
    outliers: usize,
    sigma_px: f64,
    rng: &mut impl Rng,
) -> Vec<Correspondence> {
    let (w, h) = (640.0, 480.0);
    let mut out = Vec::with_capacity(inliers + outliers);
    for _ in 0..inliers {
        let (u, v) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
        let world = ground_point(k, pose, u, v, rng);
        let nu: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_px;
        let nv: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_px;
        out.push(Correspondence {
            query_u: u + nu,
            query_v: v + nv,
            world: world.into(),
            confidence: 1.0,
        });
    }
    for _ in 0..outliers {
        let world = ground_point(k, pose, rng.gen_range(0.0..w), rng.gen_range(0.0..h), rng);
        out.push(Correspondence {
            query_u: rng.gen_range(0.0..w),
            query_v: rng.gen_range(0.0..h),
            world: world.into(),
            confidence: 1.0,
        });
    }
    out
}

/// Smooth random texture: a sum of random sinusoids around gray 100.
pub fn texture(w: usize, h: usize, seed: u64) -> mbl_core::raster::FloatImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..40)
        .map(|_| {
            let k = rng.gen_range(0.05..0.6);
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            (k * th.cos(), k * th.sin(), rng.gen_range(0.0..6.3), rng.gen_range(0.2..1.0) / (1.0 + 4.0 * k))
        })
        .collect();
    mbl_core::raster::Raster::from_fn(w, h, |x, y| {
        100.0 + 30.0 * waves.iter().map(|(a, b, p, m)| m * (a * x as f64 + b * y as f64 + p).sin()).sum::<f64>()
    })
}

/// White noise in `[0, 1)`.
pub fn noise(w: usize, h: usize, rng: &mut impl Rng) -> mbl_core::raster::FloatImage {
    mbl_core::raster::Raster::from_fn(w, h, |_, _| rng.gen::<f64>())
}

pub struct TrialOutcome {
    pub error_m: f64,
    pub inliers_recovered: bool,
    /// Consensus is exactly the true inlier set.
    pub exact_consensus: bool,
    /// Error of the least-squares optimum over the true inliers, reached by
    /// refining from the true pose.
    pub oracle_error_m: f64,
    pub estimate: Option<Pose>,
    pub oracle: Pose,
}

/// One seeded pose-recovery trial: 70 noisy inliers and 30 outliers at 100 m
/// with the reference query camera.
pub fn ransac_trial(seed: u64) -> TrialOutcome {
    use mbl_core::localize::{ransac_pnp, refine_pose, PnpStatus, RansacParams};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = pnp_camera();
    let pose = pnp_pose(&mut rng);
    let corrs = noisy_correspondences(&k, &pose, 70, 30, 0.5, &mut rng);
    let est = ransac_pnp(&corrs, &k, &RansacParams { seed, ..RansacParams::default() });
    let oracle = refine_pose(&corrs[..70], &k, &pose);
    let oracle_error_m = (oracle.t_wc - pose.t_wc).norm();
    let ok = est.status == PnpStatus::Ok;
    TrialOutcome {
        error_m: est.pose.filter(|_| ok).map_or(f64::INFINITY, |p| (p.t_wc - pose.t_wc).norm()),
        inliers_recovered: ok && (0..70).all(|i| est.inliers.binary_search(&i).is_ok()),
        exact_consensus: ok && est.inliers == (0..70).collect::<Vec<_>>(),
        oracle_error_m,
        estimate: est.pose,
        oracle,
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

pub fn identity_attention(d: usize) -> AttentionParams {
    AttentionParams {
        wq: DMatrix::identity(d, d),
        wk: DMatrix::identity(d, d),
        wv: DMatrix::identity(d, d),
    }
}

/// d = 2, one token per grid, identity projections.
pub fn hand_merge_params() -> MergeParams {
    MergeParams {
        gray_from_depth: identity_attention(2),
        depth_from_gray: identity_attention(2),
        w1: DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
        b1: RowDVector::from_row_slice(&[0.0, -3.0]),
        w2: DMatrix::identity(2, 2),
        b2: RowDVector::from_row_slice(&[0.5, -0.5]),
        gamma: RowDVector::from_row_slice(&[1.0, 2.0]),
        beta: RowDVector::from_row_slice(&[0.1, 0.2]),
        eps: LAYER_NORM_EPS,
        mode: AttentionMode::Softmax,
    }
}

/// Single-token inputs of the hand-computed merge.
pub fn hand_merge_grids() -> (FeatureGrid, FeatureGrid) {
    (
        FeatureGrid::from_fn(1, 1, 2, |_, c| [1.0, 2.0][c]).unwrap(),
        FeatureGrid::from_fn(1, 1, 2, |_, c| [3.0, -1.0][c]).unwrap(),
    )
}

/// Each grid attends to the other's only token: x = [fc | fb] = [3, -1, 1, 2].
/// h1 = (3 + 1, -1 + 2 - 3) = (4, -2), ReLU gives (4, 0), h2 = (4.5, -0.5).
/// Mean 2, deviations ±2.5, variance 6.25.
pub fn hand_merge_expected() -> [f64; 2] {
    let s = (6.25f64 + LAYER_NORM_EPS).sqrt();
    [2.5 / s + 0.1, -2.5 / s * 2.0 + 0.2]
}
