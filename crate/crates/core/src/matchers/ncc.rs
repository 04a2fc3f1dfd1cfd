//! Normalized cross-correlation over a scale pyramid.
//!
//! A coarse masked correlation finds scale and translation of the query
//! inside the window, allowing partial overlap. Patches on a regular query
//! grid are then re-correlated locally at full query resolution, an affine
//! map is refit to those matches and a second, tighter pass produces the
//! emitted correspondences.

use nalgebra::{Matrix3, Vector3};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{next_fast_len, Fft2};
use super::{parabola_offset, scale_pyramid, to_float, Affine, Match, MatchError, MatchSet, Matcher};
use crate::raster::{area_resample, FloatImage, GrayImage, IntegralImage, Raster};

#[inline]
fn bilinear(img: &FloatImage, x: f64, y: f64) -> f64 {
    crate::raster::bilinear(img, x, y).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NccParams {
    pub min_scale: f64,
    pub max_scale: f64,
    pub scale_steps: usize,
    /// Expected query-to-window GSD ratio; narrows the pyramid around it.
    pub scale_hint: Option<f64>,
    pub grid_step: usize,
    /// Minimum coarse overlap as a fraction of the smaller coarse image.
    pub min_overlap: f64,
    /// Coarse correlation needed before local refinement is attempted.
    pub refine_min: f64,
    pub patch_radius: usize,
    pub search_radius: usize,
    pub final_radius: usize,
    /// Affine refits, each followed by a local pass at `final_radius`.
    pub refits: usize,
    /// Target size of the shorter coarse query side, in pixels.
    pub coarse_side: usize,
    /// Patch variance floor relative to the image variance.
    pub min_rel_var: f64,
}

impl Default for NccParams {
    fn default() -> Self {
        Self {
            min_scale: 1.0,
            max_scale: 3.12,
            scale_steps: 7,
            scale_hint: None,
            grid_step: 16,
            min_overlap: 0.3,
            refine_min: 0.5,
            patch_radius: 8,
            search_radius: 12,
            final_radius: 4,
            refits: 2,
            coarse_side: 60,
            min_rel_var: 1e-3,
        }
    }
}

impl NccParams {
    pub fn scales(&self) -> Vec<f64> {
        match self.scale_hint {
            Some(h) if h > 0.0 => scale_pyramid(h / 1.1, h * 1.1, 3),
            _ => scale_pyramid(self.min_scale, self.max_scale, self.scale_steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NccOutcome {
    pub matches: Vec<Match>,
    /// Query-to-window scale of the final map.
    pub scale: f64,
    /// Window position of query pixel (0, 0).
    pub translation: (f64, f64),
    /// Coarse correlation peak.
    pub score: f64,
    pub refined: bool,
}

pub struct NccMatcher {
    pub params: NccParams,
}

impl NccMatcher {
    pub fn new(params: NccParams) -> Self {
        Self { params }
    }
}

impl Matcher for NccMatcher {
    fn name(&self) -> &str {
        "ncc"
    }

    fn default_threshold(&self) -> f64 {
        super::NCC_DEFAULT_THRESHOLD
    }

    fn match_window(&self, query: &GrayImage, window: &GrayImage, _depth: &Raster<f64>, window_id: usize) -> MatchSet {
        match ncc_match(&to_float(query), &to_float(window), &self.params) {
            Ok(o) => MatchSet::new(window_id, self.name(), Some(o.scale), o.matches),
            Err(_) => MatchSet::empty(window_id, self.name()),
        }
    }
}

/// Matches `query` against `window`; window pixel `≈ scale·query pixel + b`.
pub fn ncc_match(query: &FloatImage, window: &FloatImage, params: &NccParams) -> Result<NccOutcome, MatchError> {
    if query.is_empty() || window.is_empty() {
        return Err(MatchError::Empty);
    }
    let qint = IntegralImage::new(query);
    let wint = IntegralImage::new(window);
    let c = (query.width().min(query.height()) / params.coarse_side.max(1)).clamp(1, 8);
    let coarse = Coarse::new(&qint, c).ok_or(MatchError::ZeroVariance)?;

    let scales = params.scales();
    let mut best: Option<(f64, Peak)> = None;
    let consider = |s: f64, best: &mut Option<(f64, Peak)>| -> f64 {
        match coarse.correlate(&wint, s, params.min_overlap) {
            Some(p) => {
                if best.as_ref().map_or(true, |(_, b)| p.rho > b.rho) {
                    *best = Some((s, p));
                }
                p.rho
            }
            None => f64::NEG_INFINITY,
        }
    };
    for &s in &scales {
        consider(s, &mut best);
    }
    let (s0, p0) = best.ok_or(MatchError::NoOverlap)?;
    if p0.rho >= params.refine_min && scales.len() > 1 {
        let step = (scales[1] / scales[0]).ln();
        golden_max(s0.ln() - step, s0.ln() + step, 12, |ls| consider(ls.exp(), &mut best));
    }
    let (s, p) = best.expect("peak kept");
    let b = |d: f64| c as f64 * s * d + 0.5 * (s - 1.0);
    let global = Affine::similarity(s, b(p.dx), b(p.dy));

    let grid = grid_points(query.width(), query.height(), params.grid_step);
    if p.rho < params.refine_min {
        let conf = confidence(p.rho);
        let matches = grid
            .iter()
            .filter_map(|&(gx, gy)| emit(&global, gx as f64, gy as f64, conf, window))
            .collect();
        return Ok(outcome(matches, &global, p.rho, false));
    }

    let local = LocalMatcher::new(query, params);
    let pass1 = local.run(&wint, window, &global, &grid, params.search_radius);
    let (mut transform, mut hits) = (global, pass1);
    for _ in 0..params.refits {
        let Some(t) = fit_affine(&hits, &transform, s) else {
            break;
        };
        transform = t;
        hits = local.run(&wint, window, &t, &grid, params.final_radius);
    }
    let matches = hits
        .iter()
        .filter_map(|h| emit(&transform, h.qx + h.dx, h.qy + h.dy, confidence(h.rho), window).map(|m| Match {
            query_u: h.qx,
            query_v: h.qy,
            ..m
        }))
        .collect();
    Ok(outcome(matches, &transform, p.rho, true))
}

fn outcome(matches: Vec<Match>, t: &Affine, score: f64, refined: bool) -> NccOutcome {
    NccOutcome {
        matches,
        scale: t.mean_scale(),
        translation: (t.b[0], t.b[1]),
        score,
        refined,
    }
}

fn confidence(rho: f64) -> f64 {
    (0.5 * (1.0 + rho)).clamp(0.0, 1.0)
}

/// Match at query `(x, y)` through `t`, if it lands inside the window.
fn emit(t: &Affine, x: f64, y: f64, confidence: f64, window: &FloatImage) -> Option<Match> {
    let (u, v) = t.apply(x, y);
    let inside = u >= 0.0 && v >= 0.0 && u <= (window.width() - 1) as f64 && v <= (window.height() - 1) as f64;
    inside.then_some(Match {
        query_u: x,
        query_v: y,
        window_u: u,
        window_v: v,
        confidence,
    })
}

fn grid_points(w: usize, h: usize, step: usize) -> Vec<(usize, usize)> {
    let step = step.max(1);
    let mut out = Vec::new();
    let mut y = step / 2;
    while y < h {
        let mut x = step / 2;
        while x < w {
            out.push((x, y));
            x += step;
        }
        y += step;
    }
    out
}

/// Golden-section maximization of `f` on `[lo, hi]`.
fn golden_max(mut lo: f64, mut hi: f64, iters: usize, mut f: impl FnMut(f64) -> f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Peak {
    rho: f64,
    dx: f64,
    dy: f64,
}

/// Zero-mean, unit-variance copy.
fn standardize(img: &FloatImage) -> Option<FloatImage> {
    let n = img.data().len() as f64;
    let mean = img.data().iter().sum::<f64>() / n;
    let var = img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (var > 1e-12 * (1.0 + mean * mean)).then(|| {
        let inv = 1.0 / var.sqrt();
        img.map(|v| (v - mean) * inv)
    })
}

struct Coarse {
    c: usize,
    q: FloatImage,
    sat: IntegralImage,
    sat2: IntegralImage,
}

impl Coarse {
    fn new(qint: &IntegralImage, c: usize) -> Option<Self> {
        let o = 0.5 * (c as f64 - 1.0);
        let q = standardize(&area_resample(qint, c as f64, o, o)).filter(|q| q.width() >= 2 && q.height() >= 2)?;
        Some(Self {
            c,
            sat: IntegralImage::new(&q),
            sat2: IntegralImage::squared(&q),
            q,
        })
    }

    /// Best masked correlation over all offsets `d`, where coarse query
    /// pixel `j` sits on coarse window pixel `j + d`.
    fn correlate(&self, wint: &IntegralImage, s: f64, min_overlap: f64) -> Option<Peak> {
        let step = self.c as f64 * s;
        let o = 0.5 * (step - 1.0);
        let w = area_resample(wint, step, o, o);
        if w.width() < 2 || w.height() < 2 {
            return None;
        }
        let w = standardize(&w)?;
        let (qw, qh) = (self.q.width(), self.q.height());
        let (ww, wh) = (w.width(), w.height());
        let (pw, ph) = (next_fast_len(qw + ww - 1), next_fast_len(qh + wh - 1));
        let fft = Fft2::new(pw, ph);
        let mut a = vec![Complex64::default(); pw * ph];
        let mut b = vec![Complex64::default(); pw * ph];
        for y in 0..qh {
            for x in 0..qw {
                a[y * pw + x].re = self.q.get(x, y);
            }
        }
        for y in 0..wh {
            for x in 0..ww {
                b[y * pw + x].re = w.get(x, y);
            }
        }
        fft.forward(&mut a);
        fft.forward(&mut b);
        for (bi, ai) in b.iter_mut().zip(&a) {
            *bi *= ai.conj();
        }
        fft.inverse(&mut b);
        let norm = 1.0 / (pw * ph) as f64;

        let wsat = IntegralImage::new(&w);
        let wsat2 = IntegralImage::squared(&w);
        let min_n = (min_overlap * (qw * qh).min(ww * wh) as f64).max(16.0);
        let (nx, ny) = (qw + ww - 1, qh + wh - 1);
        let mut rho = vec![f64::NAN; nx * ny];
        let mut best: Option<(usize, usize)> = None;
        for iy in 0..ny {
            let dy = iy as isize - (qh as isize - 1);
            let y0 = 0.max(-dy) as usize;
            let y1 = (qh as isize).min(wh as isize - dy) as usize;
            for ix in 0..nx {
                let dx = ix as isize - (qw as isize - 1);
                let x0 = 0.max(-dx) as usize;
                let x1 = (qw as isize).min(ww as isize - dx) as usize;
                let n = ((x1 - x0) * (y1 - y0)) as f64;
                if n < min_n || x1 - x0 < 2 || y1 - y0 < 2 {
                    continue;
                }
                let (wx0, wy0) = ((x0 as isize + dx) as usize, (y0 as isize + dy) as usize);
                let (wx1, wy1) = (wx0 + x1 - x0, wy0 + y1 - y0);
                let sq = self.sat.block_sum(x0, y0, x1, y1);
                let sq2 = self.sat2.block_sum(x0, y0, x1, y1);
                let sw = wsat.block_sum(wx0, wy0, wx1, wy1);
                let sw2 = wsat2.block_sum(wx0, wy0, wx1, wy1);
                let vq = sq2 - sq * sq / n;
                let vw = sw2 - sw * sw / n;
                if vq <= 1e-6 * n || vw <= 1e-6 * n {
                    continue;
                }
                let cx = dx.rem_euclid(pw as isize) as usize;
                let cy = dy.rem_euclid(ph as isize) as usize;
                let cross = b[cy * pw + cx].re * norm;
                let r = (cross - sq * sw / n) / (vq * vw).sqrt();
                rho[iy * nx + ix] = r;
                if best.map_or(true, |(bx, by)| r > rho[by * nx + bx]) {
                    best = Some((ix, iy));
                }
            }
        }
        let (ix, iy) = best?;
        let at = |x: isize, y: isize| -> f64 {
            if x < 0 || y < 0 || x >= nx as isize || y >= ny as isize {
                f64::NAN
            } else {
                rho[y as usize * nx + x as usize]
            }
        };
        let r0 = rho[iy * nx + ix];
        let (xi, yi) = (ix as isize, iy as isize);
        let sub = |l: f64, r: f64| if l.is_finite() && r.is_finite() { parabola_offset(l, r0, r) } else { 0.0 };
        let ox = sub(at(xi - 1, yi), at(xi + 1, yi));
        let oy = sub(at(xi, yi - 1), at(xi, yi + 1));
        Some(Peak {
            rho: r0,
            dx: ix as f64 - (qw as f64 - 1.0) + ox,
            dy: iy as f64 - (qh as f64 - 1.0) + oy,
        })
    }
}

/// Window resampled through an affine map onto the query grid, extended by
/// `pad` pixels on every side.
struct Warped {
    pad: usize,
    img: FloatImage,
    sat: IntegralImage,
    sat2: IntegralImage,
    valid: IntegralImage,
    var: f64,
}

impl Warped {
    fn new(wint: &IntegralImage, window: &FloatImage, t: &Affine, qw: usize, qh: usize, pad: usize) -> Self {
        let half = 0.5 * t.mean_scale();
        let (xmax, ymax) = (window.width() as f64 - 0.5, window.height() as f64 - 0.5);
        let (w, h) = (qw + 2 * pad, qh + 2 * pad);
        let mut mask = Raster::filled(w, h, 0.0);
        let img = Raster::from_fn(w, h, |i, j| {
            let (x, y) = t.apply(i as f64 - pad as f64, j as f64 - pad as f64);
            let tol = 1e-9;
            if x - half < -0.5 - tol || y - half < -0.5 - tol || x + half > xmax + tol || y + half > ymax + tol {
                return 0.0;
            }
            match wint.box_mean(x - half, y - half, x + half, y + half) {
                Some(v) => {
                    mask.set(i, j, 1.0);
                    v
                }
                None => 0.0,
            }
        });
        let count: f64 = mask.data().iter().sum();
        let var = if count > 1.0 {
            let mean = img.data().iter().sum::<f64>() / count;
            img.data()
                .iter()
                .zip(mask.data())
                .filter(|(_, &m)| m > 0.0)
                .map(|(v, _)| (v - mean) * (v - mean))
                .sum::<f64>()
                / count
        } else {
            0.0
        };
        Self {
            pad,
            sat: IntegralImage::new(&img),
            sat2: IntegralImage::squared(&img),
            valid: IntegralImage::new(&mask),
            img,
            var,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LocalHit {
    qx: f64,
    qy: f64,
    dx: f64,
    dy: f64,
    rho: f64,
}

struct LocalMatcher<'a> {
    query: &'a FloatImage,
    qvar: f64,
    radius: usize,
    min_rel_var: f64,
}

impl<'a> LocalMatcher<'a> {
    fn new(query: &'a FloatImage, params: &NccParams) -> Self {
        let n = query.data().len() as f64;
        let mean = query.data().iter().sum::<f64>() / n;
        let qvar = query.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            query,
            qvar,
            radius: params.patch_radius,
            min_rel_var: params.min_rel_var,
        }
    }

    fn run(&self, wint: &IntegralImage, window: &FloatImage, t: &Affine, grid: &[(usize, usize)], search: usize) -> Vec<LocalHit> {
        let (qw, qh) = (self.query.width(), self.query.height());
        let warped = Warped::new(wint, window, t, qw, qh, search + self.radius + 4);
        if warped.var <= 0.0 {
            return Vec::new();
        }
        grid.iter()
            .filter_map(|&(gx, gy)| self.search(&warped, gx, gy, search))
            .collect()
    }

    fn search(&self, r: &Warped, gx: usize, gy: usize, search: usize) -> Option<LocalHit> {
        let pr = self.radius;
        let (qw, qh) = (self.query.width(), self.query.height());
        if gx < pr || gy < pr || gx + pr >= qw || gy + pr >= qh {
            return None;
        }
        let side = 2 * pr + 1;
        let n = (side * side) as f64;
        let mut tpl = Vec::with_capacity(side * side);
        for y in gy - pr..=gy + pr {
            tpl.extend_from_slice(&self.query.row(y)[gx - pr..=gx + pr]);
        }
        let mean = tpl.iter().sum::<f64>() / n;
        tpl.iter_mut().for_each(|v| *v -= mean);
        let tnorm = tpl.iter().map(|v| v * v).sum::<f64>();
        if tnorm <= self.min_rel_var * self.qvar * n {
            return None;
        }
        let sr = search as isize;
        let span = 2 * search + 1;
        let mut rho = vec![f64::NAN; span * span];
        let mut best: Option<usize> = None;
        let (rw, rh) = (r.img.width() as isize, r.img.height() as isize);
        let (ox, oy) = ((gx + r.pad) as isize, (gy + r.pad) as isize);
        for dy in -sr..=sr {
            for dx in -sr..=sr {
                let cx = ox + dx;
                let cy = oy + dy;
                if cx < pr as isize || cy < pr as isize || cx + pr as isize >= rw || cy + pr as isize >= rh {
                    continue;
                }
                let (x0, y0) = (cx as usize - pr, cy as usize - pr);
                let (x1, y1) = (x0 + side, y0 + side);
                if r.valid.block_sum(x0, y0, x1, y1) < n - 0.5 {
                    continue;
                }
                let s = r.sat.block_sum(x0, y0, x1, y1);
                let s2 = r.sat2.block_sum(x0, y0, x1, y1);
                let var = s2 - s * s / n;
                if var <= self.min_rel_var * r.var * n {
                    continue;
                }
                let mut cross = 0.0;
                for (k, y) in (y0..y1).enumerate() {
                    let row = &r.img.row(y)[x0..x1];
                    let t = &tpl[k * side..(k + 1) * side];
                    cross += row.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
                }
                let idx = (dy + sr) as usize * span + (dx + sr) as usize;
                rho[idx] = cross / (tnorm * var).sqrt();
                if best.map_or(true, |b| rho[idx] > rho[b]) {
                    best = Some(idx);
                }
            }
        }
        let b = best?;
        let (bx, by) = (b % span, b / span);
        if bx == 0 || by == 0 || bx == span - 1 || by == span - 1 {
            return None;
        }
        let (ix, iy) = (bx as f64 - search as f64, by as f64 - search as f64);
        let (cx, cy) = (ox as f64 + ix, oy as f64 + iy);
        if let Some((ox, oy, r)) = self.align(r, &tpl, cx, cy) {
            return Some(LocalHit {
                qx: gx as f64,
                qy: gy as f64,
                dx: ix + ox,
                dy: iy + oy,
                rho: r,
            });
        }
        let r0 = rho[b];
        let (l, rr, u, d) = (rho[b - 1], rho[b + 1], rho[b - span], rho[b + span]);
        let ox = if l.is_finite() && rr.is_finite() { parabola_offset(l, r0, rr) } else { 0.0 };
        let oy = if u.is_finite() && d.is_finite() { parabola_offset(u, r0, d) } else { 0.0 };
        Some(LocalHit {
            qx: gx as f64,
            qy: gy as f64,
            dx: ix + ox,
            dy: iy + oy,
            rho: r0,
        })
    }

    /// Gauss-Newton refinement of the patch offset around the integer peak
    /// `(cx, cy)`, fitting `tpl ≈ a·r(x + δ) + b` with bilinear sampling.
    /// Returns the sub-pixel offset and the correlation there.
    fn align(&self, r: &Warped, tpl: &[f64], cx: f64, cy: f64) -> Option<(f64, f64, f64)> {
        let pr = self.radius as isize;
        let margin = pr + 3;
        let (w, h) = (r.img.width() as isize, r.img.height() as isize);
        let (x0, y0) = (cx as isize - margin, cy as isize - margin);
        let (x1, y1) = (cx as isize + margin + 1, cy as isize + margin + 1);
        if x0 < 0 || y0 < 0 || x1 > w || y1 > h {
            return None;
        }
        let area = ((x1 - x0) * (y1 - y0)) as f64;
        if r.valid.block_sum(x0 as usize, y0 as usize, x1 as usize, y1 as usize) < area - 0.5 {
            return None;
        }
        let n = tpl.len();
        let sample = |dx: f64, dy: f64, out: &mut Vec<[f64; 3]>| {
            out.clear();
            for j in -pr..=pr {
                for i in -pr..=pr {
                    let (x, y) = (cx + i as f64 + dx, cy + j as f64 + dy);
                    let v = bilinear(&r.img, x, y);
                    let gx = 0.5 * (bilinear(&r.img, x + 1.0, y) - bilinear(&r.img, x - 1.0, y));
                    let gy = 0.5 * (bilinear(&r.img, x, y + 1.0) - bilinear(&r.img, x, y - 1.0));
                    out.push([v, gx, gy]);
                }
            }
        };
        let mut buf = Vec::with_capacity(n);
        let (mut dx, mut dy) = (0.0, 0.0);
        for _ in 0..5 {
            sample(dx, dy, &mut buf);
            let mut mean = [0.0; 3];
            for s in &buf {
                for k in 0..3 {
                    mean[k] += s[k] / n as f64;
                }
            }
            let mut ata = Matrix3::zeros();
            let mut atb = Vector3::zeros();
            for (s, t) in buf.iter().zip(tpl) {
                let a = Vector3::new(s[0] - mean[0], s[1] - mean[1], s[2] - mean[2]);
                ata += a * a.transpose();
                atb += a * *t;
            }
            let sol = ata.cholesky()?.solve(&atb);
            if !(sol[0] > 0.0) {
                return None;
            }
            let (sx, sy) = (sol[1] / sol[0], sol[2] / sol[0]);
            dx += sx.clamp(-0.5, 0.5);
            dy += sy.clamp(-0.5, 0.5);
            if dx.abs() > 1.0 || dy.abs() > 1.0 {
                return None;
            }
            if sx.abs() < 1e-4 && sy.abs() < 1e-4 {
                break;
            }
        }
        sample(dx, dy, &mut buf);
        let mean = buf.iter().map(|s| s[0]).sum::<f64>() / n as f64;
        let (mut cross, mut var, mut tn) = (0.0, 0.0, 0.0);
        for (s, t) in buf.iter().zip(tpl) {
            let v = s[0] - mean;
            cross += v * t;
            var += v * v;
            tn += t * t;
        }
        (var > 0.0).then(|| (dx, dy, cross / (var * tn).sqrt()))
    }
}

/// Least-squares affine map from query grid points to their matched window
/// positions, with iterative rejection of large residuals.
fn fit_affine(hits: &[LocalHit], t: &Affine, scale: f64) -> Option<Affine> {
    let pts: Vec<((f64, f64), (f64, f64))> = hits
        .iter()
        .filter(|h| h.rho >= 0.8)
        .map(|h| ((h.qx, h.qy), t.apply(h.qx + h.dx, h.qy + h.dy)))
        .collect();
    let mut keep: Vec<bool> = vec![true; pts.len()];
    let mut fit = None;
    for _ in 0..4 {
        let used: Vec<_> = pts.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
        if used.len() < 6 {
            return fit;
        }
        let mut n = Matrix3::zeros();
        let mut rx = Vector3::zeros();
        let mut ry = Vector3::zeros();
        for &((x, y), (u, v)) in &used {
            let a = Vector3::new(x, y, 1.0);
            n += a * a.transpose();
            rx += a * u;
            ry += a * v;
        }
        let chol = n.cholesky()?;
        let px = chol.solve(&rx);
        let py = chol.solve(&ry);
        let cand = Affine {
            a: [[px[0], px[1]], [py[0], py[1]]],
            b: [px[2], py[2]],
        };
        let ms = cand.mean_scale();
        if !(ms > 0.5 * scale && ms < 2.0 * scale) {
            return fit;
        }
        let res: Vec<f64> = pts
            .iter()
            .map(|&((x, y), (u, v))| {
                let (pu, pv) = cand.apply(x, y);
                ((pu - u).powi(2) + (pv - v).powi(2)).sqrt()
            })
            .collect();
        let mut sorted: Vec<f64> = res.iter().zip(&keep).filter(|(_, &k)| k).map(|(r, _)| *r).collect();
        sorted.sort_by(f64::total_cmp);
        let cut = (3.0 * sorted[sorted.len() / 2]).max(0.5 * scale);
        keep = res.iter().map(|&r| r <= cut).collect();
        fit = Some(cand);
    }
    fit
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth random texture: a sum of random sinusoids.
    fn texture(w: usize, h: usize, seed: u64) -> FloatImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..40)
            .map(|_| {
                let k = rng.gen_range(0.05..0.6);
                let th = rng.gen_range(0.0..std::f64::consts::TAU);
                (k * th.cos(), k * th.sin(), rng.gen_range(0.0..6.3), rng.gen_range(0.2..1.0) / (1.0 + 4.0 * k))
            })
            .collect();
        Raster::from_fn(w, h, |x, y| {
            100.0 + 30.0 * waves.iter().map(|(a, b, p, m)| m * (a * x as f64 + b * y as f64 + p).sin()).sum::<f64>()
        })
    }

    #[test]
    fn self_match_finds_copy() {
        let window = texture(200, 150, 1);
        let query = window.crop(37, 51, 96, 72).unwrap();
        let o = ncc_match(&query, &window, &NccParams::default()).unwrap();
        assert!(o.refined);
        assert!(!o.matches.is_empty());
        for m in &o.matches {
            assert!((m.window_u - (m.query_u + 37.0)).abs() < 0.1, "{m:?}");
            assert!((m.window_v - (m.query_v + 51.0)).abs() < 0.1, "{m:?}");
            assert!(m.confidence > 0.9999, "{m:?}");
        }
        assert!((o.scale - 1.0).abs() < 1e-3);
    }

    #[test]
    fn shifted_window_recovers_translation() {
        let base = texture(160, 140, 2);
        let window = base.crop(10, 10, 128, 112).unwrap();
        let query = base.crop(3, 7, 128, 112).unwrap();
        let o = ncc_match(&query, &window, &NccParams::default()).unwrap();
        assert!((o.translation.0 + 7.0).abs() < 0.25, "{:?}", o.translation);
        assert!((o.translation.1 + 3.0).abs() < 0.25, "{:?}", o.translation);
    }

    #[test]
    fn recovers_scale() {
        let window = texture(400, 300, 3);
        // query pixel (i, j) covers the 2×2 window block at (60 + 2i, 40 + 2j)
        let wint = IntegralImage::new(&window);
        let query = Raster::from_fn(120, 90, |i, j| {
            let (x, y) = (60.5 + 2.0 * i as f64, 40.5 + 2.0 * j as f64);
            wint.box_mean(x - 1.0, y - 1.0, x + 1.0, y + 1.0).unwrap()
        });
        let o = ncc_match(&query, &window, &NccParams::default()).unwrap();
        assert!((o.scale - 2.0).abs() < 0.01, "scale {}", o.scale);
        assert!(o.matches.len() > 10);
        for m in o.matches.iter().filter(|m| m.confidence > 0.95) {
            assert!((m.window_u - (60.5 + 2.0 * m.query_u)).abs() < 0.3, "{m:?}");
            assert!((m.window_v - (40.5 + 2.0 * m.query_v)).abs() < 0.3, "{m:?}");
        }
    }

    #[test]
    fn noise_pairs_stay_below_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let a = Raster::from_fn(64, 64, |_, _| rng.gen::<f64>());
            let b = Raster::from_fn(64, 64, |_, _| rng.gen::<f64>());
            if let Ok(o) = ncc_match(&a, &b, &NccParams::default()) {
                worst = o.matches.iter().map(|m| m.confidence).fold(worst, f64::max);
            }
        }
        assert!(worst < 0.75, "max noise confidence {worst}");
    }

    #[test]
    fn matches_lie_inside_images() {
        let window = texture(150, 120, 4);
        let query = texture(90, 70, 5);
        let o = ncc_match(&query, &window, &NccParams::default()).unwrap();
        for m in &o.matches {
            assert!(m.query_u >= 0.0 && m.query_u <= 89.0 && m.query_v >= 0.0 && m.query_v <= 69.0);
            assert!(m.window_u >= 0.0 && m.window_u <= 149.0 && m.window_v >= 0.0 && m.window_v <= 119.0);
            assert!(m.confidence.is_finite());
        }
    }

    #[test]
    fn empty_and_flat_inputs() {
        let e = Raster::filled(0, 0, 0.0);
        let w = texture(50, 50, 6);
        assert_eq!(ncc_match(&e, &w, &NccParams::default()).unwrap_err(), MatchError::Empty);
        let flat = Raster::filled(40, 40, 3.0);
        assert_eq!(ncc_match(&flat, &w, &NccParams::default()).unwrap_err(), MatchError::ZeroVariance);
    }

    #[test]
    fn golden_section_finds_maximum() {
        let mut seen = Vec::new();
        golden_max(-1.0, 2.0, 30, |x| {
            seen.push(x);
            -(x - 0.7) * (x - 0.7)
        });
        let best = seen.iter().cloned().min_by(|a, b| (a - 0.7).abs().total_cmp(&(b - 0.7).abs())).unwrap();
        assert!((best - 0.7).abs() < 1e-5);
    }
}
