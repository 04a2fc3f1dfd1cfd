//! Sun model, shadow visibility and Lambertian shading.
//!
//! Azimuth is counter-clockwise from East, elevation above the horizon.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::terrain::{RayCaster, RayHit};

/// Exposure mapping albedo 0.5 on flat ground at EL = 40° (E = 590 W/m²)
/// to gray 128: `π·128 / (255·590·0.5·sin 40°)`.
pub const DEFAULT_EXPOSURE: f64 = 0.008316300030858714;
pub const DEFAULT_IRRADIANCE: f64 = 590.0;
pub const DEFAULT_DIAMETER_DEG: f64 = 0.35;
pub const DEFAULT_SHADOW_SAMPLES: usize = 16;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum LightingError {
    #[error("sun elevation {0}° outside [0, 90]")]
    Elevation(f64),
    #[error("invalid sun parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunConfig {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub irradiance: f64,
    pub diameter_deg: f64,
    pub samples: usize,
}

impl SunConfig {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self {
            azimuth_deg,
            elevation_deg,
            irradiance: DEFAULT_IRRADIANCE,
            diameter_deg: DEFAULT_DIAMETER_DEG,
            samples: DEFAULT_SHADOW_SAMPLES,
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_diameter(mut self, diameter_deg: f64) -> Self {
        self.diameter_deg = diameter_deg;
        self
    }

    pub fn validate(&self) -> Result<(), LightingError> {
        if !(0.0..=90.0).contains(&self.elevation_deg) {
            return Err(LightingError::Elevation(self.elevation_deg));
        }
        if !(self.irradiance > 0.0) || !self.irradiance.is_finite() {
            return Err(LightingError::Invalid(format!("irradiance {}", self.irradiance)));
        }
        if !(self.diameter_deg >= 0.0) || !self.diameter_deg.is_finite() {
            return Err(LightingError::Invalid(format!("diameter {}", self.diameter_deg)));
        }
        if self.samples == 0 {
            return Err(LightingError::Invalid("zero shadow samples".into()));
        }
        Ok(())
    }

    pub fn direction(&self) -> Result<Vec3, LightingError> {
        sun_direction(self.azimuth_deg, self.elevation_deg)
    }
}

/// Unit vector toward the sun.
pub fn sun_direction(azimuth_deg: f64, elevation_deg: f64) -> Result<Vec3, LightingError> {
    if !(0.0..=90.0).contains(&elevation_deg) {
        return Err(LightingError::Elevation(elevation_deg));
    }
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    Ok(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()))
}

/// Per-pixel random stream: `seed` selects the key, `pixel` the ChaCha
/// stream, so the samples of a pixel never depend on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelStream {
    pub seed: u64,
    pub pixel: u64,
}

impl PixelStream {
    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.pixel);
        rng
    }
}

/// Shadow-ray origin: the hit point nudged off the surface by `1e-3·spacing`.
pub fn shadow_origin(hit: &RayHit, spacing: f64) -> Vec3 {
    hit.point + hit.normal * (1e-3 * spacing)
}

/// Fraction of the sun disk visible from `point`. Samples are stratified
/// and uniform over the disk's solid angle; diameter 0 casts one hard ray.
pub fn visibility(accel: &impl RayCaster, point: &Vec3, sun: &SunConfig, stream: PixelStream) -> f64 {
    let Ok(center) = sun.direction() else {
        return 0.0;
    };
    if sun.diameter_deg == 0.0 {
        return if accel.occluded(point, &center) { 0.0 } else { 1.0 };
    }
    let n = sun.samples.max(1);
    let nx = (n as f64).sqrt().ceil() as usize;
    let ny = n.div_ceil(nx);
    let cos_max = (0.5 * sun.diameter_deg).to_radians().cos();
    let (t1, t2) = orthonormal_basis(&center);
    let mut rng = stream.rng();
    let mut visible = 0usize;
    for k in 0..n {
        let (sx, sy) = (k % nx, k / nx);
        let u1 = (sx as f64 + rng.gen::<f64>()) / nx as f64;
        let u2 = (sy as f64 + rng.gen::<f64>()) / ny as f64;
        let cos_t = 1.0 - u1 * (1.0 - cos_max);
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let phi = std::f64::consts::TAU * u2;
        let dir = center * cos_t + t1 * (sin_t * phi.cos()) + t2 * (sin_t * phi.sin());
        if !accel.occluded(point, &dir) {
            visible += 1;
        }
    }
    visible as f64 / n as f64
}

fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Radiance `E·albedo·max(0, n·s)·visibility/π`.
pub fn radiance(albedo: f64, normal: &Vec3, sun_dir: &Vec3, irradiance: f64, visibility: f64) -> f64 {
    irradiance * albedo * normal.dot(sun_dir).max(0.0) * visibility / std::f64::consts::PI
}

/// 8-bit gray value of a Lambertian surface.
pub fn shade(albedo: f64, normal: &Vec3, sun: &SunConfig, visibility: f64, exposure: f64) -> u8 {
    let Ok(s) = sun.direction() else {
        return 0;
    };
    let l = radiance(albedo, normal, &s, sun.irradiance, visibility);
    (255.0 * (exposure * l).min(1.0)).round().clamp(0.0, 255.0) as u8
}
