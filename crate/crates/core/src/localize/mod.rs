//! Localization of a query image against an orthographic map: search area,
//! window tiling, matching, back-projection and RANSAC-PnP.

mod pnp;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::crop_window;
use crate::geom::{backproject_ortho, project_ortho, CameraMatrix, OrthoIntrinsics, Pose, Vec3};
use crate::matchers::{filter_matches, MatchSet, Matcher, WindowMatch, DEFAULT_TOP_K};
use crate::raster::{GrayImage, PixelRect};
use crate::render::RenderedImage;

pub use pnp::{ransac_pnp, refine_pose, reprojection_error, Correspondence, PnpStatus, PoseEstimate, RansacParams};

pub const DEFAULT_SEARCH_SIDE_M: f64 = 1000.0;
pub const DEFAULT_OVERLAP: f64 = 0.10;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum LocalizeError {
    #[error("map must be a nadir orthographic render")]
    NotOrtho,
    #[error("search area centered at ({0}, {1}) lies outside the map")]
    OutsideMap(f64, f64),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchArea {
    pub center: [f64; 2],
    pub side_m: f64,
    pub rect: PixelRect,
    /// Set when the square had to be cut to fit the map.
    pub clipped: bool,
}

impl SearchArea {
    /// Square of `side_m` meters around the ground point `center`.
    pub fn new(oi: &OrthoIntrinsics, map_pose: &Pose, center: [f64; 2], side_m: f64) -> Result<Self, LocalizeError> {
        if !(side_m > 0.0) {
            return Err(LocalizeError::Invalid(format!("search side {side_m}")));
        }
        let p = project_ortho(oi, map_pose, &Vec3::new(center[0], center[1], 0.0));
        let side_px = (side_m / oi.pixel_size()).round() as i64;
        let x0 = (p.u - side_px as f64 / 2.0).round() as i64;
        let y0 = (p.v - side_px as f64 / 2.0).round() as i64;
        let (x1, y1) = (x0 + side_px, y0 + side_px);
        let cx0 = x0.max(0);
        let cy0 = y0.max(0);
        let cx1 = x1.min(oi.width as i64);
        let cy1 = y1.min(oi.height as i64);
        if cx1 <= cx0 || cy1 <= cy0 {
            return Err(LocalizeError::OutsideMap(center[0], center[1]));
        }
        Ok(Self {
            center,
            side_m,
            rect: PixelRect::new(cx0 as usize, cy0 as usize, (cx1 - cx0) as usize, (cy1 - cy0) as usize),
            clipped: (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1),
        })
    }
}

/// Offsets of windows of length `size` covering `extent` with the given
/// overlap; the last one is shifted inward to end at `extent`.
fn tile_axis(extent: usize, size: usize, overlap: f64) -> Vec<(usize, usize)> {
    if extent <= size {
        return vec![(0, extent)];
    }
    let stride = ((size as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let n = (extent - size).div_ceil(stride) + 1;
    let mut out: Vec<(usize, usize)> = (0..n - 1).map(|k| (k * stride, size)).collect();
    out.push((extent - size, size));
    out
}

/// Overlapping windows over `area`, row-major; window ids are their indices.
pub fn tile_windows(area: &PixelRect, window: (usize, usize), overlap: f64) -> Vec<PixelRect> {
    let xs = tile_axis(area.width, window.0, overlap);
    let ys = tile_axis(area.height, window.1, overlap);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &(y, h) in &ys {
        for &(x, w) in &xs {
            out.push(PixelRect::new(area.x + x, area.y + y, w, h));
        }
    }
    out
}

/// Lifts window matches to world points through the map depth, using the
/// nearest pixel's depth. Returns the correspondences and the number of
/// matches dropped for missing depth.
pub fn backproject_matches(
    matches: &[WindowMatch],
    windows: &[PixelRect],
    map: &RenderedImage,
) -> Result<(Vec<Correspondence>, usize), LocalizeError> {
    let oi = map.ortho().ok_or(LocalizeError::NotOrtho)?;
    let mut out = Vec::with_capacity(matches.len());
    let mut dropped = 0;
    for wm in matches {
        let Some(rect) = windows.get(wm.window_id) else {
            dropped += 1;
            continue;
        };
        let u = rect.x as f64 + wm.matched.window_u;
        let v = rect.y as f64 + wm.matched.window_v;
        let (iu, iv) = (u.round(), v.round());
        if iu < 0.0 || iv < 0.0 || iu >= map.width() as f64 || iv >= map.height() as f64 {
            dropped += 1;
            continue;
        }
        let depth = map.depth.get(iu as usize, iv as usize);
        match backproject_ortho(oi, &map.pose, u, v, depth) {
            Ok(x) => out.push(Correspondence {
                query_u: wm.matched.query_u,
                query_v: wm.matched.query_v,
                world: [x.x, x.y, x.z],
                confidence: wm.matched.confidence,
            }),
            Err(_) => dropped += 1,
        }
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeParams {
    pub search_side_m: f64,
    pub window: (usize, usize),
    pub overlap: f64,
    pub top_k: usize,
    /// Overrides the matcher's own confidence threshold.
    pub threshold: Option<f64>,
    pub ransac: RansacParams,
    /// Records wall-clock stage timings; off keeps outputs reproducible.
    pub timing: bool,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self {
            search_side_m: DEFAULT_SEARCH_SIDE_M,
            window: crate::dataset::DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
            top_k: DEFAULT_TOP_K,
            threshold: None,
            ransac: RansacParams::default(),
            timing: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub tile_ms: f64,
    pub match_ms: f64,
    pub filter_ms: f64,
    pub backproject_ms: f64,
    pub pnp_ms: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.tile_ms + self.match_ms + self.filter_ms + self.backproject_ms + self.pnp_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub matcher: String,
    pub area: SearchArea,
    pub windows: usize,
    pub raw_matches: usize,
    pub filtered_matches: usize,
    pub correspondences: usize,
    pub dropped_nodata: usize,
    pub inliers: usize,
    pub status: PnpStatus,
    pub reproj_px: Option<f64>,
    pub residuals_px: Vec<f64>,
    pub iterations: usize,
    pub timing: StageTimes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub estimate: PoseEstimate,
    pub diagnostics: Diagnostics,
}

struct Clock(Option<Instant>);

impl Clock {
    fn start(enabled: bool) -> Self {
        Clock(enabled.then(Instant::now))
    }

    fn lap(&mut self) -> f64 {
        match self.0 {
            Some(t) => {
                let now = Instant::now();
                self.0 = Some(now);
                (now - t).as_secs_f64() * 1e3
            }
            None => 0.0,
        }
    }
}

/// Full pipeline for one query against one map.
pub fn localize(
    query: &GrayImage,
    k: &CameraMatrix,
    map: &RenderedImage,
    matcher: &dyn Matcher,
    prior: [f64; 2],
    params: &LocalizeParams,
) -> Result<Localization, LocalizeError> {
    let oi = map.ortho().ok_or(LocalizeError::NotOrtho)?;
    if !map.pose.is_nadir() {
        return Err(LocalizeError::NotOrtho);
    }
    let mut clock = Clock::start(params.timing);
    let mut timing = StageTimes::default();
    let area = SearchArea::new(oi, &map.pose, prior, params.search_side_m)?;
    let rects = tile_windows(&area.rect, params.window, params.overlap);
    timing.tile_ms = clock.lap();

    let sets: Vec<MatchSet> = rects
        .par_iter()
        .enumerate()
        .map(|(id, r)| match crop_window(map, *r, id) {
            Ok(w) => matcher.match_window(query, &w.gray, &w.depth_norm, id),
            Err(_) => MatchSet::empty(id, matcher.name()),
        })
        .collect();
    timing.match_ms = clock.lap();

    let raw: usize = sets.iter().map(|s| s.len()).sum();
    let threshold = params.threshold.unwrap_or_else(|| matcher.default_threshold());
    let filtered = filter_matches(&sets, params.top_k, threshold);
    timing.filter_ms = clock.lap();

    let (corrs, dropped) = backproject_matches(&filtered, &rects, map)?;
    timing.backproject_ms = clock.lap();

    let estimate = ransac_pnp(&corrs, k, &params.ransac);
    timing.pnp_ms = clock.lap();

    let residuals_px = match &estimate.pose {
        Some(p) => estimate.inliers.iter().map(|&i| reprojection_error(k, p, &corrs[i])).collect(),
        None => Vec::new(),
    };
    let diagnostics = Diagnostics {
        matcher: matcher.name().to_string(),
        area,
        windows: rects.len(),
        raw_matches: raw,
        filtered_matches: filtered.len(),
        correspondences: corrs.len(),
        dropped_nodata: dropped,
        inliers: estimate.inliers.len(),
        status: estimate.status,
        reproj_px: estimate.reproj_px.is_finite().then_some(estimate.reproj_px),
        residuals_px,
        iterations: estimate.iterations,
        timing,
    };
    Ok(Localization { estimate, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiling_reference_area() {
        let area = PixelRect::new(0, 0, 4000, 4000);
        let w = tile_windows(&area, (1024, 768), 0.1);
        assert_eq!(w.len(), 30);
        let xs: Vec<usize> = w.iter().take(5).map(|r| r.x).collect();
        assert_eq!(xs, vec![0, 921, 1842, 2763, 2976]);
        let ys: Vec<usize> = w.iter().step_by(5).map(|r| r.y).collect();
        assert_eq!(ys, vec![0, 691, 1382, 2073, 2764, 3232]);
    }

    #[test]
    fn tiling_small_areas() {
        let one = tile_windows(&PixelRect::new(5, 7, 1024, 768), (1024, 768), 0.1);
        assert_eq!(one, vec![PixelRect::new(5, 7, 1024, 768)]);
        let small = tile_windows(&PixelRect::new(0, 0, 500, 300), (1024, 768), 0.1);
        assert_eq!(small, vec![PixelRect::new(0, 0, 500, 300)]);
    }

    #[test]
    fn search_area_clipping() {
        let oi = OrthoIntrinsics::with_resolution(8000, 8000, 0.25);
        let pose = crate::geom::nadir_pose(0.0, 0.0, 4000.0);
        let a = SearchArea::new(&oi, &pose, [0.0, 0.0], 1000.0).unwrap();
        assert_eq!(a.rect, PixelRect::new(2000, 2000, 4000, 4000));
        assert!(!a.clipped);
        let b = SearchArea::new(&oi, &pose, [900.0, 0.0], 1000.0).unwrap();
        assert!(b.clipped);
        assert_eq!(b.rect.right(), 8000);
        assert!(SearchArea::new(&oi, &pose, [5000.0, 0.0], 1000.0).is_err());
    }
}
