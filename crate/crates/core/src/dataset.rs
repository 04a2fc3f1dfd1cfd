//! Query sampling, footprints and overlaps, map-window crops and triplet
//! manifests.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{PerspectiveIntrinsics, Pose, PoseRecord};
use crate::io::{self, IoError};
use crate::lighting::SunConfig;
use crate::raster::{DepthImage, GrayImage, PixelRect, Raster};
use crate::render::{RenderedImage, NODATA_DEPTH};
use crate::terrain::TerrainModel;

pub const DEFAULT_WINDOW: (usize, usize) = (1024, 768);
pub const MIN_TRAINING_OVERLAP: f64 = 0.25;

#[derive(thiserror::Error, Debug)]
pub enum DatasetError {
    #[error("terrain extent {extent:?} m is too small for a {margin:?} m footprint margin")]
    ExtentTooSmall { extent: (f64, f64), margin: (f64, f64) },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("footprints are only defined for nadir cameras")]
    NotNadir,
    #[error("window {rect:?} lies outside the {width}x{height} map")]
    WindowOutOfBounds { rect: PixelRect, width: usize, height: usize },
    #[error("window {0:?} contains no valid depth")]
    AllNoData(PixelRect),
    #[error("no rendered map for sun AZ {az}° EL {el}°")]
    MissingMap { az: f64, el: f64 },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunAngles {
    pub az: f64,
    pub el: f64,
}

impl SunAngles {
    pub fn of(sun: &SunConfig) -> Self {
        Self {
            az: sun.azimuth_deg,
            el: sun.elevation_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub altitude_agl: f64,
    pub sun: SunConfig,
    pub optics: PerspectiveIntrinsics,
}

/// Axis-aligned ground rectangle in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundRect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl GroundRect {
    pub fn centered(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x_min: x - width / 2.0,
            y_min: y - height / 2.0,
            x_max: x + width / 2.0,
            y_max: y + height / 2.0,
        }
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &GroundRect) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        w.max(0.0) * h.max(0.0)
    }
}

/// Queries uniform over the terrain shrunk by the largest half-footprint,
/// altitudes uniform in `alt_range`.
pub fn sample_queries(
    terrain: &TerrainModel,
    n: usize,
    alt_range: (f64, f64),
    seed: u64,
    optics: &PerspectiveIntrinsics,
    sun: &SunConfig,
) -> Result<Vec<QuerySpec>, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Invalid("query count must be at least 1".into()));
    }
    let (lo, hi) = alt_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(DatasetError::Invalid(format!("altitude range [{lo}, {hi}]")));
    }
    let (fw, fh) = optics.footprint(hi);
    let margin = (fw / 2.0, fh / 2.0);
    let (hx, hy) = terrain.half_extent();
    let (sx, sy) = (hx - margin.0, hy - margin.1);
    if !(sx > 0.0 && sy > 0.0) {
        return Err(DatasetError::ExtentTooSmall {
            extent: terrain.extent(),
            margin,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|id| {
            let x = rng.gen_range(-sx..=sx);
            let y = rng.gen_range(-sy..=sy);
            let altitude_agl = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            QuerySpec {
                id,
                x,
                y,
                altitude_agl,
                sun: *sun,
                optics: *optics,
            }
        })
        .collect())
}

/// Ground footprint of a nadir query: `h·s/f` wide, `h·(s·H/W)/f` tall.
pub fn footprint(q: &QuerySpec) -> GroundRect {
    let (w, h) = q.optics.footprint(q.altitude_agl);
    GroundRect::centered(q.x, q.y, w, h)
}

/// Footprint of a posed camera `altitude_agl` above flat ground.
pub fn pose_footprint(pose: &Pose, optics: &PerspectiveIntrinsics, altitude_agl: f64) -> Result<GroundRect, DatasetError> {
    if !pose.is_nadir() {
        return Err(DatasetError::NotNadir);
    }
    let (w, h) = optics.footprint(altitude_agl);
    Ok(GroundRect::centered(pose.t_wc.x, pose.t_wc.y, w, h))
}

/// `area(fp ∩ window) / area(fp)`, in `[0, 1]`.
pub fn overlap_fraction(fp: &GroundRect, window: &GroundRect) -> f64 {
    let a = fp.area();
    if a <= 0.0 {
        return 0.0;
    }
    (fp.intersection_area(window) / a).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapWindow {
    pub id: usize,
    pub rect: PixelRect,
    pub ground: GroundRect,
    pub gray: GrayImage,
    pub depth: DepthImage,
    pub depth_norm: Raster<f64>,
}

/// Ground rectangle covered by the pixels of `rect` in a nadir ortho map.
pub fn window_ground_rect(map: &RenderedImage, rect: &PixelRect) -> Option<GroundRect> {
    let oi = map.ortho()?;
    if !map.pose.is_nadir() {
        return None;
    }
    let p = oi.pixel_size();
    let t = map.pose.t_wc;
    Some(GroundRect {
        x_min: t.x + p * (rect.x as f64 - 0.5 - oi.cx),
        x_max: t.x + p * (rect.right() as f64 - 0.5 - oi.cx),
        y_min: t.y - p * (rect.bottom() as f64 - 0.5 - oi.cy),
        y_max: t.y - p * (rect.y as f64 - 0.5 - oi.cy),
    })
}

/// Depth divided by the crop's largest valid depth; nodata stays nodata.
pub fn normalize_depth(depth: &DepthImage) -> Option<Raster<f64>> {
    let max = depth.data().iter().copied().filter(|d| *d > 0.0).fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return None;
    }
    Some(depth.map(|d| if d > 0.0 { d / max } else { NODATA_DEPTH }))
}

pub fn crop_window(map: &RenderedImage, rect: PixelRect, id: usize) -> Result<MapWindow, DatasetError> {
    let out_of_bounds = || DatasetError::WindowOutOfBounds {
        rect,
        width: map.width(),
        height: map.height(),
    };
    if rect.width == 0 || rect.height == 0 {
        return Err(out_of_bounds());
    }
    let gray = map.gray.crop(rect.x, rect.y, rect.width, rect.height).ok_or_else(out_of_bounds)?;
    let depth = map.depth.crop(rect.x, rect.y, rect.width, rect.height).ok_or_else(out_of_bounds)?;
    let depth_norm = normalize_depth(&depth).ok_or(DatasetError::AllNoData(rect))?;
    let ground = window_ground_rect(map, &rect)
        .ok_or_else(|| DatasetError::Invalid("windows need a nadir orthographic map".into()))?;
    Ok(MapWindow {
        id,
        rect,
        ground,
        gray,
        depth,
        depth_norm,
    })
}

/// Crops several windows of one map concurrently, in input order.
pub fn crop_windows(map: &RenderedImage, rects: &[PixelRect]) -> Result<Vec<MapWindow>, DatasetError> {
    rects.par_iter().enumerate().map(|(id, r)| crop_window(map, *r, id)).collect()
}

/// Every `(AZ, EL)` pair; EL = 90° appears once since azimuth is moot there.
pub fn lighting_grid(azimuths: &[f64], elevations: &[f64]) -> Vec<SunAngles> {
    let mut out = Vec::new();
    for &el in elevations {
        if el == 90.0 {
            out.push(SunAngles { az: 0.0, el });
            continue;
        }
        for &az in azimuths {
            out.push(SunAngles { az, el });
        }
    }
    out
}

/// Reference lighting grid: AZ 0..315 step 45, EL {30, 60, 90}.
pub fn reference_lighting_grid() -> Vec<SunAngles> {
    let az: Vec<f64> = (0..8).map(|k| 45.0 * k as f64).collect();
    lighting_grid(&az, &[30.0, 60.0, 90.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub spec: QuerySpec,
    pub image: String,
    pub pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub id: usize,
    pub ground: GroundRect,
    pub gray: String,
    pub depth_norm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub sun: SunAngles,
    pub windows: Vec<WindowEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub triplet_id: usize,
    pub query_image: String,
    pub window_gray: String,
    pub window_depth_norm: String,
    pub overlap: f64,
    pub sun_query: SunAngles,
    pub sun_map: SunAngles,
    pub pose_gt: PoseRecord,
    pub altitude_agl: f64,
}

/// One record per (query, window, lighting) with overlap ≥ `min_overlap`,
/// ordered by query, then lighting, then window.
pub fn build_triplets(
    queries: &[QueryEntry],
    maps: &[MapEntry],
    combos: &[SunAngles],
    min_overlap: f64,
) -> Result<Vec<TripletRecord>, DatasetError> {
    let selected: Vec<&MapEntry> = combos
        .iter()
        .map(|c| {
            maps.iter()
                .find(|m| m.sun == *c)
                .ok_or(DatasetError::MissingMap { az: c.az, el: c.el })
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for q in queries {
        let fp = footprint(&q.spec);
        for map in &selected {
            for w in &map.windows {
                let overlap = overlap_fraction(&fp, &w.ground);
                if overlap >= min_overlap {
                    out.push(TripletRecord {
                        triplet_id: out.len(),
                        query_image: q.image.clone(),
                        window_gray: w.gray.clone(),
                        window_depth_norm: w.depth_norm.clone(),
                        overlap,
                        sun_query: SunAngles::of(&q.spec.sun),
                        sun_map: map.sun,
                        pose_gt: q.pose,
                        altitude_agl: q.spec.altitude_agl,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// JSONL manifest, one triplet per line.
pub fn write_manifest(path: &Path, records: &[TripletRecord]) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        buf.write_all(b"\n").expect("writing to memory");
    }
    Ok(io::write_bytes(path, &buf)?)
}

pub fn read_manifest(path: &Path) -> Result<Vec<TripletRecord>, DatasetError> {
    let text = io::read_bytes(path)?;
    text.split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_slice(l).map_err(|source| {
                DatasetError::Io(IoError::Json {
                    path: path.to_path_buf(),
                    source,
                })
            })
        })
        .collect()
}
