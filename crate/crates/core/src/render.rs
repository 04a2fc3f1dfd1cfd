//! Ray-traced gray and depth images from orthographic and pinhole cameras.
//!
//! Every pixel casts one primary ray. Depth is the camera-frame z of the hit
//! (the component along the viewing axis). Misses render gray 0 and depth
//! [`NODATA_DEPTH`]. Depth is held in `f64` and written to disk as `f32` PFM.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{self, GeomError, OrthoIntrinsics, PerspectiveIntrinsics, Pose, PoseRecord, Vec3};
use crate::io::{self, IoError};
use crate::lighting::{self, LightingError, PixelStream, SunConfig, DEFAULT_EXPOSURE};
use crate::raster::{DepthImage, GrayImage, Raster};
use crate::terrain::{RayCaster, TerrainError};

pub const NODATA_DEPTH: f64 = -1.0;

/// Altitude of the orthographic map camera above the world origin (m).
pub const MAP_ALTITUDE_M: f64 = 4000.0;

#[derive(thiserror::Error, Debug)]
pub enum RenderError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Lighting(#[from] LightingError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("no terrain below ({0}, {1})")]
    Placement(f64, f64),
    #[error("sidecar and rasters disagree: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CameraModel {
    Ortho(OrthoIntrinsics),
    Perspective(PerspectiveIntrinsics),
}

impl CameraModel {
    pub fn size(&self) -> (usize, usize) {
        match self {
            CameraModel::Ortho(o) => (o.width, o.height),
            CameraModel::Perspective(p) => (p.width, p.height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub exposure: f64,
    /// Shadow rays per shaded pixel; replaces the sun's own sample count.
    pub shadow_samples: usize,
    /// Key of the per-pixel shadow sampling streams.
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            exposure: DEFAULT_EXPOSURE,
            shadow_samples: lighting::DEFAULT_SHADOW_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub gray: GrayImage,
    pub depth: DepthImage,
    pub camera: CameraModel,
    pub pose: Pose,
    pub sun: SunConfig,
    pub settings: RenderSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RenderSidecar {
    gray: String,
    depth: String,
    width: usize,
    height: usize,
    camera: CameraModel,
    pose: PoseRecord,
    sun: SunConfig,
    settings: RenderSettings,
    nodata_depth: f64,
}

/// File names written by [`RenderedImage::save`] for a base path.
pub fn image_paths(base: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut name = base.file_name().unwrap_or_default().to_os_string();
        name.push(ext);
        base.with_file_name(name)
    };
    (with(".pgm"), with(".pfm"), with(".json"))
}

impl RenderedImage {
    pub fn width(&self) -> usize {
        self.gray.width()
    }

    pub fn height(&self) -> usize {
        self.gray.height()
    }

    pub fn ortho(&self) -> Option<&OrthoIntrinsics> {
        match &self.camera {
            CameraModel::Ortho(o) => Some(o),
            CameraModel::Perspective(_) => None,
        }
    }

    /// Writes `<base>.pgm`, `<base>.pfm` and the `<base>.json` sidecar.
    pub fn save(&self, base: &Path) -> Result<(), RenderError> {
        let (gray_path, depth_path, side_path) = image_paths(base);
        io::write_pgm(&gray_path, &self.gray)?;
        io::write_pfm(&depth_path, &self.depth.map(|d| d as f32))?;
        let name = |p: &Path| p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let sidecar = RenderSidecar {
            gray: name(&gray_path),
            depth: name(&depth_path),
            width: self.width(),
            height: self.height(),
            camera: self.camera,
            pose: self.pose.to_record(),
            sun: self.sun,
            settings: self.settings,
            nodata_depth: NODATA_DEPTH,
        };
        io::write_json(&side_path, &sidecar)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self, RenderError> {
        let (_, _, side_path) = image_paths(base);
        let side: RenderSidecar = io::read_json(&side_path)?;
        let dir = side_path.parent().unwrap_or(Path::new(""));
        let gray = io::read_pgm(&dir.join(&side.gray))?;
        let depth = io::read_pfm(&dir.join(&side.depth))?.map(|d| d as f64);
        if gray.width() != side.width
            || gray.height() != side.height
            || depth.width() != side.width
            || depth.height() != side.height
            || side.camera.size() != (side.width, side.height)
        {
            return Err(RenderError::Inconsistent(format!(
                "sidecar {}x{}, gray {}x{}, depth {}x{}",
                side.width,
                side.height,
                gray.width(),
                gray.height(),
                depth.width(),
                depth.height()
            )));
        }
        Ok(Self {
            gray,
            depth,
            camera: side.camera,
            pose: side.pose.to_pose()?,
            sun: side.sun,
            settings: side.settings,
        })
    }
}

/// Primary ray through pixel `(u, v)`: origin and unit direction in world.
pub fn primary_ray(camera: &CameraModel, pose: &Pose, u: f64, v: f64) -> Result<(Vec3, Vec3), GeomError> {
    match camera {
        CameraModel::Ortho(o) => {
            let p = o.pixel_size();
            let origin = pose.camera_to_world(&Vec3::new(p * (u - o.cx), p * (v - o.cy), 0.0));
            Ok((origin, pose.view_axis()))
        }
        CameraModel::Perspective(pi) => {
            let k = pi.camera_matrix()?;
            let dir = (pose.r_wc * k.unproject(u, v)).normalize();
            Ok((pose.t_wc, dir))
        }
    }
}

/// Renders through any ray caster; the accelerated and brute-force entry
/// points below differ only in the caster they pass.
pub fn render(
    caster: &impl RayCaster,
    camera: &CameraModel,
    pose: &Pose,
    sun: &SunConfig,
    settings: &RenderSettings,
) -> Result<RenderedImage, RenderError> {
    match camera {
        CameraModel::Ortho(o) => o.validate()?,
        CameraModel::Perspective(p) => {
            p.validate()?;
        }
    }
    let sun = SunConfig {
        samples: settings.shadow_samples.max(1),
        ..*sun
    };
    sun.validate()?;
    let sun_dir = sun.direction()?;
    let (width, height) = camera.size();
    let spacing = caster.terrain().spacing();
    // Validate once so per-pixel ray construction cannot fail.
    primary_ray(camera, pose, 0.0, 0.0)?;

    let mut gray = vec![0u8; width * height];
    let mut depth = vec![NODATA_DEPTH; width * height];
    gray.par_chunks_mut(width)
        .zip(depth.par_chunks_mut(width))
        .enumerate()
        .for_each(|(v, (grow, drow))| {
            for u in 0..width {
                let (origin, dir) = primary_ray(camera, pose, u as f64, v as f64).expect("validated camera");
                let Some(hit) = caster.ray_intersect(&origin, &dir) else {
                    continue;
                };
                drow[u] = pose.world_to_camera(&hit.point).z;
                if hit.normal.dot(&sun_dir) <= 0.0 {
                    continue;
                }
                let stream = PixelStream {
                    seed: settings.seed,
                    pixel: (v * width + u) as u64,
                };
                let vis = lighting::visibility(caster, &lighting::shadow_origin(&hit, spacing), &sun, stream);
                grow[u] = lighting::shade(hit.albedo, &hit.normal, &sun, vis, settings.exposure);
            }
        });
    Ok(RenderedImage {
        gray: Raster::from_vec(width, height, gray),
        depth: Raster::from_vec(width, height, depth),
        camera: *camera,
        pose: *pose,
        sun,
        settings: *settings,
    })
}

pub fn render_ortho(
    caster: &impl RayCaster,
    oi: &OrthoIntrinsics,
    pose: &Pose,
    sun: &SunConfig,
    settings: &RenderSettings,
) -> Result<RenderedImage, RenderError> {
    render(caster, &CameraModel::Ortho(*oi), pose, sun, settings)
}

pub fn render_perspective(
    caster: &impl RayCaster,
    intrinsics: &PerspectiveIntrinsics,
    pose: &Pose,
    sun: &SunConfig,
    settings: &RenderSettings,
) -> Result<RenderedImage, RenderError> {
    render(caster, &CameraModel::Perspective(*intrinsics), pose, sun, settings)
}

/// Nadir orthographic map camera covering the whole terrain at `pixel_m`,
/// placed [`MAP_ALTITUDE_M`] above the origin.
pub fn map_camera(terrain_extent: (f64, f64), pixel_m: f64) -> (OrthoIntrinsics, Pose) {
    let width = (terrain_extent.0 / pixel_m).round() as usize;
    let height = (terrain_extent.1 / pixel_m).round() as usize;
    (
        OrthoIntrinsics::with_resolution(width, height, pixel_m),
        geom::nadir_pose(0.0, 0.0, MAP_ALTITUDE_M),
    )
}

/// Nadir pose `altitude_agl` above the terrain surface at `(x, y)`.
pub fn place_camera(caster: &impl RayCaster, x: f64, y: f64, altitude_agl: f64) -> Result<Pose, RenderError> {
    let terrain = caster.terrain();
    let (hx, hy) = terrain.half_extent();
    if !(x.abs() <= hx && y.abs() <= hy) {
        return Err(TerrainError::OutOfBounds(x, y).into());
    }
    let top = terrain.height_range().map_or(0.0, |(_, hi)| hi) + 1000.0;
    let hit = caster
        .ray_intersect(&Vec3::new(x, y, top), &Vec3::new(0.0, 0.0, -1.0))
        .ok_or(RenderError::Placement(x, y))?;
    Ok(geom::nadir_pose(x, y, hit.point.z + altitude_agl))
}
