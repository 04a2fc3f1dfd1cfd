//! Perspective-n-point: Kneip P3P inside RANSAC, EPnP fallback and
//! Levenberg-Marquardt refinement of the reprojection error.

use nalgebra::{Matrix3, Matrix4, Matrix6, SMatrix, Schur, SymmetricEigen, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{is_rotation, rotation_from_axis_angle, skew, CameraMatrix, Mat3, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub query_u: f64,
    pub query_v: f64,
    pub world: [f64; 3],
    pub confidence: f64,
}

impl Correspondence {
    pub fn point(&self) -> Vec3 {
        Vec3::from(self.world)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PnpStatus {
    Ok,
    Degenerate,
    InsufficientMatches,
}

impl PnpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PnpStatus::Ok => "ok",
            PnpStatus::Degenerate => "degenerate",
            PnpStatus::InsufficientMatches => "insufficient-matches",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub threshold_px: f64,
    pub max_iters: usize,
    pub confidence: f64,
    /// Consensus size below which no pose is reported.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 3.0,
            max_iters: 2000,
            confidence: 0.999,
            min_inliers: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub status: PnpStatus,
    pub pose: Option<Pose>,
    /// Indices into the input, ascending.
    pub inliers: Vec<usize>,
    /// Mean reprojection error over the inliers, in pixels.
    pub reproj_px: f64,
    pub iterations: usize,
}

impl PoseEstimate {
    fn failed(status: PnpStatus, iterations: usize) -> Self {
        Self {
            status,
            pose: None,
            inliers: Vec::new(),
            reproj_px: f64::NAN,
            iterations,
        }
    }
}

/// World-to-camera transform `x_c = r·x_w + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Extrinsics {
    r: Mat3,
    t: Vec3,
}

impl Extrinsics {
    fn from_pose(p: &Pose) -> Self {
        let r = p.r_wc.transpose();
        Self { r, t: -(r * p.t_wc) }
    }

    fn to_pose(self) -> Pose {
        Pose {
            r_wc: self.r.transpose(),
            t_wc: -(self.r.transpose() * self.t),
        }
    }

    /// Pixel reprojection error; infinite behind the camera.
    fn error(&self, k: &CameraMatrix, c: &Correspondence) -> f64 {
        let x = self.r * c.point() + self.t;
        if !(x.z > 0.0) {
            return f64::INFINITY;
        }
        let u = k.fx * x.x / x.z + k.cx;
        let v = k.fy * x.y / x.z + k.cy;
        ((u - c.query_u).powi(2) + (v - c.query_v).powi(2)).sqrt()
    }
}

/// Reprojection error of `c` under `pose`, infinite behind the camera.
pub fn reprojection_error(k: &CameraMatrix, pose: &Pose, c: &Correspondence) -> f64 {
    Extrinsics::from_pose(pose).error(k, c)
}

/// Robust pose from 2D-3D correspondences.
pub fn ransac_pnp(corrs: &[Correspondence], k: &CameraMatrix, params: &RansacParams) -> PoseEstimate {
    let n = corrs.len();
    if n < 4 || n < params.min_inliers {
        return PoseEstimate::failed(PnpStatus::InsufficientMatches, 0);
    }
    let bearings: Vec<Vec3> = corrs.iter().map(|c| k.unproject(c.query_u, c.query_v).normalize()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Extrinsics, usize, f64)> = None;
    let mut needed = params.max_iters;
    let mut iters = 0;
    let mut solved_any = false;
    while iters < needed.min(params.max_iters) {
        iters += 1;
        let idx = rand::seq::index::sample(&mut rng, n, 4).into_vec();
        let pts = [corrs[idx[0]].point(), corrs[idx[1]].point(), corrs[idx[2]].point()];
        let fs = [bearings[idx[0]], bearings[idx[1]], bearings[idx[2]]];
        let Some(e) = p3p(&pts, &fs)
            .into_iter()
            .map(|e| (e.error(k, &corrs[idx[3]]), e))
            .filter(|(err, _)| err.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, e)| e)
        else {
            continue;
        };
        solved_any = true;
        let (count, score) = consensus(&e, k, corrs, params.threshold_px);
        let better = match &best {
            None => true,
            Some((_, c, s)) => count > *c || (count == *c && score < *s),
        };
        if better {
            best = Some((e, count, score));
            let w = count as f64 / n as f64;
            needed = adaptive_iterations(w, params.confidence, params.max_iters);
        }
    }
    let seed = match best {
        Some((e, count, _)) if count >= params.min_inliers => Some(e),
        _ => epnp(corrs, k).filter(|e| consensus(e, k, corrs, params.threshold_px).0 >= params.min_inliers),
    };
    let Some(mut e) = seed else {
        let status = if solved_any { PnpStatus::InsufficientMatches } else { PnpStatus::Degenerate };
        return PoseEstimate::failed(status, iters);
    };
    let mut inliers = inlier_set(&e, k, corrs, params.threshold_px);
    for _ in 0..3 {
        let subset: Vec<Correspondence> = inliers.iter().map(|&i| corrs[i]).collect();
        e = refine(&canonical(subset), k, e);
        let next = inlier_set(&e, k, corrs, params.threshold_px);
        if next == inliers {
            break;
        }
        inliers = next;
    }
    if inliers.len() < params.min_inliers.max(4) {
        return PoseEstimate::failed(PnpStatus::InsufficientMatches, iters);
    }
    let reproj = inliers.iter().map(|&i| e.error(k, &corrs[i])).sum::<f64>() / inliers.len() as f64;
    let pose = e.to_pose();
    if !is_rotation(&pose.r_wc) {
        return PoseEstimate::failed(PnpStatus::Degenerate, iters);
    }
    PoseEstimate {
        status: PnpStatus::Ok,
        pose: Some(pose),
        inliers,
        reproj_px: reproj,
        iterations: iters,
    }
}

fn adaptive_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let p = inlier_ratio.powi(4);
    if p >= 1.0 - 1e-12 {
        return 1;
    }
    if p <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

fn consensus(e: &Extrinsics, k: &CameraMatrix, corrs: &[Correspondence], thr: f64) -> (usize, f64) {
    let mut count = 0;
    let mut score = 0.0;
    for c in corrs {
        let err = e.error(k, c);
        if err < thr {
            count += 1;
            score += err;
        } else {
            score += thr;
        }
    }
    (count, score)
}

fn inlier_set(e: &Extrinsics, k: &CameraMatrix, corrs: &[Correspondence], thr: f64) -> Vec<usize> {
    (0..corrs.len()).filter(|&i| e.error(k, &corrs[i]) < thr).collect()
}

/// Sorted copy, so refinement does not depend on input order.
fn canonical(mut v: Vec<Correspondence>) -> Vec<Correspondence> {
    v.sort_by(|a, b| {
        a.query_u
            .total_cmp(&b.query_u)
            .then(a.query_v.total_cmp(&b.query_v))
            .then(a.world[0].total_cmp(&b.world[0]))
            .then(a.world[1].total_cmp(&b.world[1]))
            .then(a.world[2].total_cmp(&b.world[2]))
    });
    v
}

/// Pose minimizing the summed squared reprojection error of `corrs`,
/// starting from `pose`.
pub fn refine_pose(corrs: &[Correspondence], k: &CameraMatrix, pose: &Pose) -> Pose {
    refine(&canonical(corrs.to_vec()), k, Extrinsics::from_pose(pose)).to_pose()
}

fn residuals(e: &Extrinsics, k: &CameraMatrix, corrs: &[Correspondence]) -> f64 {
    corrs
        .iter()
        .map(|c| {
            let x = e.r * c.point() + e.t;
            if x.z <= 0.0 {
                return 1e12;
            }
            (k.fx * x.x / x.z + k.cx - c.query_u).powi(2) + (k.fy * x.y / x.z + k.cy - c.query_v).powi(2)
        })
        .sum()
}

fn refine(corrs: &[Correspondence], k: &CameraMatrix, mut e: Extrinsics) -> Extrinsics {
    if corrs.len() < 3 {
        return e;
    }
    let mut cost = residuals(&e, k, corrs);
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corrs {
            let x = e.r * c.point() + e.t;
            if x.z <= 0.0 {
                continue;
            }
            let iz = 1.0 / x.z;
            let ru = k.fx * x.x * iz + k.cx - c.query_u;
            let rv = k.fy * x.y * iz + k.cy - c.query_v;
            let du = Vector3::new(k.fx * iz, 0.0, -k.fx * x.x * iz * iz);
            let dv = Vector3::new(0.0, k.fy * iz, -k.fy * x.y * iz * iz);
            // d x / d omega = −[r·X]×, d x / d t = I
            let dx_dw = -skew(&(x - e.t));
            let ju = SMatrix::<f64, 1, 6>::from_iterator(
                (du.transpose() * dx_dw).iter().copied().chain(du.iter().copied()),
            );
            let jv = SMatrix::<f64, 1, 6>::from_iterator(
                (dv.transpose() * dx_dw).iter().copied().chain(dv.iter().copied()),
            );
            jtj += ju.transpose() * ju + jv.transpose() * jv;
            jtr += ju.transpose() * ru + jv.transpose() * rv;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * (jtj[(i, i)] + 1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-jtr));
            let w = Vector3::new(step[0], step[1], step[2]);
            let cand = Extrinsics {
                r: orthonormalize(&(rotation_from_axis_angle(&w) * e.r)),
                t: e.t + Vector3::new(step[3], step[4], step[5]),
            };
            let c = residuals(&cand, k, corrs);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                e = cand;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-15 && step.norm() > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    e
}

fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut m = u * vt;
    if m.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        m = u2 * vt;
    }
    m
}

/// Kneip's closed-form P3P. `fs` are unit bearings in the camera frame.
fn p3p(pts: &[Vec3; 3], fs: &[Vec3; 3]) -> Vec<Extrinsics> {
    let (mut p1, mut p2, p3) = (pts[0], pts[1], pts[2]);
    let (mut f1, mut f2, f3) = (fs[0], fs[1], fs[2]);
    let spread = (p2 - p1).norm().max((p3 - p1).norm());
    if (p2 - p1).cross(&(p3 - p1)).norm() <= 1e-9 * spread * spread || spread == 0.0 {
        return Vec::new();
    }
    let frame = |f1: &Vec3, f2: &Vec3| -> Option<Mat3> {
        let e3 = f1.cross(f2);
        let nrm = e3.norm();
        if nrm < 1e-12 {
            return None;
        }
        let e3 = e3 / nrm;
        let e2 = e3.cross(f1);
        Some(Matrix3::from_rows(&[f1.transpose(), e2.transpose(), e3.transpose()]))
    };
    let Some(mut t) = frame(&f1, &f2) else {
        return Vec::new();
    };
    let mut f3t = t * f3;
    if f3t.z > 0.0 {
        std::mem::swap(&mut p1, &mut p2);
        std::mem::swap(&mut f1, &mut f2);
        t = match frame(&f1, &f2) {
            Some(t) => t,
            None => return Vec::new(),
        };
        f3t = t * f3;
    }
    let n1 = (p2 - p1).normalize();
    let n3 = n1.cross(&(p3 - p1)).normalize();
    let n2 = n3.cross(&n1);
    let nm = Matrix3::from_rows(&[n1.transpose(), n2.transpose(), n3.transpose()]);
    let p3n = nm * (p3 - p1);
    let d12 = (p2 - p1).norm();
    let f1f2 = f1.dot(&f2);
    let denom = 1.0 - f1f2 * f1f2;
    if denom <= 1e-15 || f3t.z.abs() < 1e-15 {
        return Vec::new();
    }
    let mut b = (1.0 / denom - 1.0).sqrt();
    if f1f2 < 0.0 {
        b = -b;
    }
    let phi1 = f3t.x / f3t.z;
    let phi2 = f3t.y / f3t.z;
    let (p1x, p2y) = (p3n.x, p3n.y);
    if p2y.abs() < 1e-12 || phi2.abs() < 1e-15 {
        return Vec::new();
    }
    let (ph1s, ph2s) = (phi1 * phi1, phi2 * phi2);
    let (pa2, pb2) = (p1x * p1x, p2y * p2y);
    let (pb3, pb4) = (pb2 * p2y, pb2 * pb2);
    let (d2, b2) = (d12 * d12, b * b);
    let a4 = -ph2s * pb4 - ph1s * pb4 - pb4;
    let a3 = 2.0 * pb3 * d12 * b + 2.0 * ph2s * pb3 * d12 * b - 2.0 * phi1 * phi2 * pb3 * d12;
    let a2 = -ph2s * pa2 * pb2 - ph2s * pb2 * d2 * b2 - ph2s * pb2 * d2 + ph2s * pb4 + ph1s * pb4
        + 2.0 * p1x * pb2 * d12
        + 2.0 * phi1 * phi2 * p1x * pb2 * d12 * b
        - ph1s * pa2 * pb2
        + 2.0 * ph2s * p1x * pb2 * d12
        - pb2 * d2 * b2
        - 2.0 * pa2 * pb2;
    let a1 = 2.0 * pa2 * p2y * d12 * b + 2.0 * phi1 * phi2 * pb3 * d12 - 2.0 * ph2s * pb3 * d12 * b
        - 2.0 * p1x * p2y * d2 * b;
    let a0 = -2.0 * phi1 * phi2 * p1x * pb2 * d12 * b + ph2s * pb2 * d2 + 2.0 * pa2 * p1x * d12 - pa2 * d2
        + ph2s * pa2 * pb2
        - pa2 * pa2
        - 2.0 * ph2s * p1x * pb2 * d12
        + ph1s * pa2 * pb2
        + ph2s * pb2 * d2 * b2;
    let mut out = Vec::new();
    for ct in quartic_real_roots([a4, a3, a2, a1, a0]) {
        if ct.abs() > 1.0 {
            continue;
        }
        let den = phi1 / phi2 * ct * p2y - p1x + d12;
        if den.abs() < 1e-15 {
            continue;
        }
        let cota = (phi1 / phi2 * p1x + ct * p2y - d12 * b) / den;
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        let sa = (1.0 / (cota * cota + 1.0)).sqrt();
        let mut ca = (1.0 - sa * sa).max(0.0).sqrt();
        if cota < 0.0 {
            ca = -ca;
        }
        let k = sa * b + ca;
        let c = Vec3::new(d12 * ca * k, ct * d12 * sa * k, st * d12 * sa * k);
        let center = p1 + nm.transpose() * c;
        let rm = Matrix3::new(-ca, -sa * ct, -sa * st, sa, -ca * ct, -ca * st, 0.0, -st, ct);
        let r_wc = nm.transpose() * rm.transpose() * t;
        if !r_wc.iter().all(|v| v.is_finite()) || !center.iter().all(|v| v.is_finite()) {
            continue;
        }
        let r = orthonormalize(&r_wc).transpose();
        out.push(Extrinsics { r, t: -(r * center) });
    }
    out
}

/// Real roots of `c[0]·x⁴ + … + c[4]`, polished by Newton steps.
fn quartic_real_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || c[0].abs() < 1e-14 * scale {
        return Vec::new();
    }
    let a = [c[1] / c[0], c[2] / c[0], c[3] / c[0], c[4] / c[0]];
    let comp = Matrix4::new(
        -a[0], -a[1], -a[2], -a[3], //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let poly = |x: f64| (((x + a[0]) * x + a[1]) * x + a[2]) * x + a[3];
    let dpoly = |x: f64| ((4.0 * x + 3.0 * a[0]) * x + 2.0 * a[1]) * x + a[2];
    let Some(schur) = Schur::try_new(comp, 1e-15, 500) else {
        return Vec::new();
    };
    schur
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..3 {
                let d = dpoly(x);
                if d.abs() > 1e-300 {
                    let nx = x - poly(x) / d;
                    if nx.is_finite() {
                        x = nx;
                    }
                }
            }
            x
        })
        .collect()
}

/// EPnP with the one- and two-vector null-space solutions; returns the
/// candidate with the lower reprojection error.
fn epnp(corrs: &[Correspondence], k: &CameraMatrix) -> Option<Extrinsics> {
    let n = corrs.len();
    if n < 6 {
        return None;
    }
    let pts: Vec<Vec3> = corrs.iter().map(|c| c.point()).collect();
    let c0 = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - c0;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::try_new(cov / n as f64, 1e-15, 1000)?;
    let max_ev = eig.eigenvalues.max();
    if !(max_ev > 0.0) || eig.eigenvalues.min() <= 1e-10 * max_ev {
        return None;
    }
    let mut ctrl = [c0; 4];
    for i in 0..3 {
        ctrl[i + 1] = c0 + eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt();
    }
    let basis = Matrix3::from_columns(&[ctrl[1] - c0, ctrl[2] - c0, ctrl[3] - c0]);
    let inv = basis.try_inverse()?;
    let alphas: Vec<[f64; 4]> = pts
        .iter()
        .map(|p| {
            let a = inv * (p - c0);
            [1.0 - a.sum(), a.x, a.y, a.z]
        })
        .collect();
    let mut mtm = SMatrix::<f64, 12, 12>::zeros();
    for (c, al) in corrs.iter().zip(&alphas) {
        let mut r1 = SMatrix::<f64, 1, 12>::zeros();
        let mut r2 = SMatrix::<f64, 1, 12>::zeros();
        for j in 0..4 {
            r1[3 * j] = al[j] * k.fx;
            r1[3 * j + 2] = al[j] * (k.cx - c.query_u);
            r2[3 * j + 1] = al[j] * k.fy;
            r2[3 * j + 2] = al[j] * (k.cy - c.query_v);
        }
        mtm += r1.transpose() * r1 + r2.transpose() * r2;
    }
    if !mtm.iter().all(|v| v.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::try_new(mtm, 1e-15, 1000)?;
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let v: Vec<SMatrix<f64, 12, 1>> = order.iter().take(2).map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let ctrl_of = |x: &SMatrix<f64, 12, 1>, j: usize| Vec3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let dw: Vec<f64> = pairs.iter().map(|&(a, b)| (ctrl[a] - ctrl[b]).norm_squared()).collect();

    let mut candidates = Vec::new();
    // one null vector: scale from control-point distances
    {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &(a, b)) in pairs.iter().enumerate() {
            let dv = (ctrl_of(&v[0], a) - ctrl_of(&v[0], b)).norm();
            num += dv * dw[i].sqrt();
            den += dv * dv;
        }
        if den > 0.0 {
            candidates.push(v[0] * (num / den));
        }
    }
    // two null vectors: linearized in (β1², β1β2, β2²)
    {
        let mut l = SMatrix::<f64, 6, 3>::zeros();
        let mut rho = SMatrix::<f64, 6, 1>::zeros();
        for (i, &(a, b)) in pairs.iter().enumerate() {
            let s1 = ctrl_of(&v[0], a) - ctrl_of(&v[0], b);
            let s2 = ctrl_of(&v[1], a) - ctrl_of(&v[1], b);
            l[(i, 0)] = s1.dot(&s1);
            l[(i, 1)] = 2.0 * s1.dot(&s2);
            l[(i, 2)] = s2.dot(&s2);
            rho[i] = dw[i];
        }
        if let Ok(sol) = l.svd(true, true).solve(&rho, 1e-12) {
            if sol[0] > 0.0 && sol[2] > 0.0 {
                let b1 = sol[0].sqrt();
                let b2 = sol[2].sqrt() * sol[1].signum();
                candidates.push(v[0] * b1 + v[1] * b2);
            }
        }
    }
    candidates
        .into_iter()
        .filter_map(|x| {
            let mut cc: Vec<Vec3> = (0..4).map(|j| ctrl_of(&x, j)).collect();
            let pc: Vec<Vec3> = alphas
                .iter()
                .map(|al| (0..4).fold(Vec3::zeros(), |s, j| s + cc[j] * al[j]))
                .collect();
            if pc.iter().map(|p| p.z).sum::<f64>() < 0.0 {
                cc.iter_mut().for_each(|c| *c = -*c);
            }
            let pc: Vec<Vec3> = alphas
                .iter()
                .map(|al| (0..4).fold(Vec3::zeros(), |s, j| s + cc[j] * al[j]))
                .collect();
            let e = absolute_orientation(&pts, &pc)?;
            let err: f64 = corrs.iter().map(|c| e.error(k, c).min(1e6)).sum();
            Some((err, e))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, e)| e)
}

/// Rigid `(r, t)` with `r·a + t ≈ b` in the least-squares sense.
fn absolute_orientation(a: &[Vec3], b: &[Vec3]) -> Option<Extrinsics> {
    let n = a.len() as f64;
    let ca = a.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let cb = b.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (q - cb) * (p - ca).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    Some(Extrinsics { r, t: cb - r * ca })
}
