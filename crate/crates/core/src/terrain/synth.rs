//! Seeded synthetic terrain: fBm relief with parabolic crater bowls and an
//! albedo texture correlated with height.

use noise::{Fbm, MultiFractal, NoiseFn, Perlin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{albedo_to_u16, post_xy, Texture, TerrainModel, DEFAULT_NODATA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughnessParams {
    /// Peak fBm amplitude (m).
    pub amplitude_m: f64,
    /// Wavelength of the coarsest octave (m).
    pub wavelength_m: f64,
    pub octaves: usize,
    pub persistence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CraterParams {
    pub count: usize,
    pub min_radius_m: f64,
    pub max_radius_m: f64,
    /// Bowl depth as a fraction of the diameter.
    pub depth_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbedoParams {
    pub mean: f64,
    /// Albedo change per meter of height above the mean.
    pub height_gain_per_m: f64,
    pub noise_amplitude: f64,
    /// Wavelength of the coarsest albedo-noise octave (m).
    pub detail_wavelength_m: f64,
    pub detail_octaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    /// Side length of the square terrain (m).
    pub size_m: f64,
    pub post_spacing_m: f64,
    pub texture_pixel_m: f64,
    pub roughness: RoughnessParams,
    pub craters: CraterParams,
    pub albedo: AlbedoParams,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 42,
            size_m: 2000.0,
            post_spacing_m: 1.0,
            texture_pixel_m: 0.5,
            roughness: RoughnessParams {
                amplitude_m: 12.0,
                wavelength_m: 400.0,
                octaves: 8,
                persistence: 0.5,
            },
            craters: CraterParams {
                count: 60,
                min_radius_m: 5.0,
                max_radius_m: 80.0,
                depth_ratio: 0.1,
            },
            albedo: AlbedoParams {
                mean: 0.45,
                height_gain_per_m: 0.008,
                noise_amplitude: 0.2,
                detail_wavelength_m: 12.0,
                detail_octaves: 4,
            },
        }
    }
}

impl SynthParams {
    /// Flat relief with no craters.
    pub fn flat(size_m: f64) -> Self {
        let mut p = Self {
            size_m,
            ..Self::default()
        };
        p.roughness.amplitude_m = 0.0;
        p.craters.count = 0;
        p
    }
}

#[derive(Debug, Clone, Copy)]
struct Crater {
    x: f64,
    y: f64,
    radius: f64,
    depth: f64,
}

impl Crater {
    fn offset(&self, x: f64, y: f64) -> f64 {
        let d2 = ((x - self.x).powi(2) + (y - self.y).powi(2)) / (self.radius * self.radius);
        if d2 < 1.0 {
            self.depth * (d2 - 1.0)
        } else {
            0.0
        }
    }
}

fn fbm(seed: u32, wavelength: f64, octaves: usize, persistence: f64) -> Fbm<Perlin> {
    Fbm::<Perlin>::new(seed)
        .set_octaves(octaves.max(1))
        .set_frequency(1.0 / wavelength)
        .set_lacunarity(2.0)
        .set_persistence(persistence)
}

/// Deterministic for a fixed parameter set, independent of thread count.
pub fn generate_synthetic_terrain(params: &SynthParams) -> TerrainModel {
    assert!(params.size_m > 0.0 && params.post_spacing_m > 0.0, "size and spacing must be positive");
    let n = (params.size_m / params.post_spacing_m).round() as usize + 1;
    let spacing = params.post_spacing_m;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let relief_seed: u32 = rng.gen();
    let albedo_seed: u32 = rng.gen();
    // Shift noise coordinates off the integer lattice where Perlin is zero.
    let shift = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));

    let half = (n - 1) as f64 * spacing / 2.0;
    let cp = &params.craters;
    let craters: Vec<Crater> = (0..cp.count)
        .map(|_| {
            let u: f64 = rng.gen();
            let (a, b) = (cp.min_radius_m.powi(-2), cp.max_radius_m.powi(-2));
            let radius = (a - u * (a - b)).powf(-0.5);
            Crater {
                x: rng.gen_range(-half..half),
                y: rng.gen_range(-half..half),
                radius,
                depth: cp.depth_ratio * 2.0 * radius,
            }
        })
        .collect();

    let rp = &params.roughness;
    let relief = fbm(relief_seed, rp.wavelength_m, rp.octaves, rp.persistence);
    let mut heights = vec![0f32; n * n];
    heights.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        for (c, h) in row.iter_mut().enumerate() {
            let (x, y) = post_xy(n, n, spacing, r, c);
            let mut z = 0.0;
            if rp.amplitude_m != 0.0 {
                z += rp.amplitude_m * relief.get([x + shift.0, y + shift.1]);
            }
            for crater in &craters {
                z += crater.offset(x, y);
            }
            *h = z as f32;
        }
    });

    let ap = &params.albedo;
    let mean_h = heights.iter().map(|h| *h as f64).sum::<f64>() / heights.len() as f64;
    let tn = (params.size_m / params.texture_pixel_m).round() as usize + 1;
    let tp = (n - 1) as f64 * spacing / (tn - 1) as f64;
    let detail = fbm(albedo_seed, ap.detail_wavelength_m, ap.detail_octaves, 0.6);
    let placeholder = Texture::constant(2, 2, spacing, 0.0);
    let heights_only = TerrainModel {
        rows: n,
        cols: n,
        spacing,
        heights,
        nodata: DEFAULT_NODATA,
        texture: placeholder,
    };
    let mut data = vec![0u16; tn * tn];
    data.par_chunks_mut(tn).enumerate().for_each(|(r, row)| {
        for (c, a) in row.iter_mut().enumerate() {
            let (x, y) = post_xy(tn, tn, tp, r, c);
            let (x, y) = (x.clamp(-half, half), y.clamp(-half, half));
            let h = heights_only.height_at(x, y).unwrap_or(mean_h);
            let mut albedo = ap.mean + ap.height_gain_per_m * (h - mean_h);
            if ap.noise_amplitude != 0.0 {
                albedo += ap.noise_amplitude * detail.get([x + shift.1, y + shift.0]);
            }
            *a = albedo_to_u16(albedo.clamp(0.1, 0.9));
        }
    });
    let texture = Texture {
        rows: tn,
        cols: tn,
        pixel_m: tp,
        data,
    };
    TerrainModel::new(n, n, spacing, heights_only.heights, DEFAULT_NODATA, texture).expect("synthetic terrain is valid")
}

/// Height histogram with `bins` equal-width bins over `[lo, hi)`; values
/// outside are clamped into the end bins.
pub fn height_histogram(terrain: &TerrainModel, lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut out = vec![0u64; bins];
    for &h in terrain.heights() {
        if h == terrain.nodata() {
            continue;
        }
        let k = (((h as f64 - lo) / (hi - lo)) * bins as f64).floor();
        out[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    out
}
