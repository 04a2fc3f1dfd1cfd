//! Heightfield terrain with an albedo texture.
//!
//! Posts sit on a regular grid centered on the world origin. Row 0 is the
//! northern edge, so post `(r, c)` lies at
//! `x = (c − (cols−1)/2)·s`, `y = ((rows−1)/2 − r)·s`.
//! Heights are stored as `f32` (the on-disk precision) and all arithmetic is
//! done in `f64`. Height and normal queries use bilinear interpolation; ray
//! queries use two triangles per cell split along the SW–NE diagonal.

mod accel;
mod synth;

pub use accel::TerrainAccel;
pub use synth::{generate_synthetic_terrain, height_histogram, AlbedoParams, CraterParams, RoughnessParams, SynthParams};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::io::{self, IoError};
use crate::raster::Raster;

pub const DEFAULT_NODATA: f32 = -32768.0;

#[derive(thiserror::Error, Debug)]
pub enum TerrainError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("texture extent {texture_m:?} m does not match DTM extent {dtm_m:?} m")]
    ExtentMismatch { dtm_m: (f64, f64), texture_m: (f64, f64) },
    #[error("({0}, {1}) is outside the terrain extent")]
    OutOfBounds(f64, f64),
    #[error("({0}, {1}) touches a nodata post")]
    NoData(f64, f64),
    #[error("invalid terrain: {0}")]
    Invalid(String),
    #[error("terrain has no valid cells")]
    Empty,
}

/// DTM sidecar header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtmHeader {
    pub rows: usize,
    pub cols: usize,
    pub post_spacing_m: f64,
    pub nodata: f32,
    pub origin: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureFormat {
    Pgm,
    Raw16,
}

/// Texture sidecar header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureHeader {
    pub rows: usize,
    pub cols: usize,
    pub pixel_size_m: f64,
    pub format: TextureFormat,
    pub origin: String,
}

/// Albedo grid, 16-bit fixed point in `[0, 1]`, centered like the DTM.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub rows: usize,
    pub cols: usize,
    pub pixel_m: f64,
    pub data: Vec<u16>,
}

impl Texture {
    pub fn constant(rows: usize, cols: usize, pixel_m: f64, albedo: f64) -> Self {
        Self {
            rows,
            cols,
            pixel_m,
            data: vec![albedo_to_u16(albedo); rows * cols],
        }
    }

    pub fn extent(&self) -> (f64, f64) {
        (
            (self.cols - 1) as f64 * self.pixel_m,
            (self.rows - 1) as f64 * self.pixel_m,
        )
    }

    fn texel(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c] as f64 / 65535.0
    }

    /// Bilinear albedo, clamped to the texture edge.
    pub fn albedo_at(&self, x: f64, y: f64) -> f64 {
        let gc = (x / self.pixel_m + (self.cols - 1) as f64 / 2.0).clamp(0.0, (self.cols - 1) as f64);
        let gr = ((self.rows - 1) as f64 / 2.0 - y / self.pixel_m).clamp(0.0, (self.rows - 1) as f64);
        let c0 = (gc.floor() as usize).min(self.cols.saturating_sub(2));
        let r0 = (gr.floor() as usize).min(self.rows.saturating_sub(2));
        let c1 = (c0 + 1).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let fx = gc - c0 as f64;
        let fy = gr - r0 as f64;
        let top = self.texel(r0, c0) * (1.0 - fx) + self.texel(r0, c1) * fx;
        let bottom = self.texel(r1, c0) * (1.0 - fx) + self.texel(r1, c1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

pub fn albedo_to_u16(albedo: f64) -> u16 {
    (albedo.clamp(0.0, 1.0) * 65535.0).round() as u16
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainModel {
    rows: usize,
    cols: usize,
    spacing: f64,
    heights: Vec<f32>,
    nodata: f32,
    texture: Texture,
}

/// Bilinear patch `z = a + b·x + c·y + d·x·y` of one cell in world meters.
#[derive(Debug, Clone, Copy)]
struct Patch {
    x0: f64,
    y0: f64,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl Patch {
    fn height(&self, x: f64, y: f64) -> f64 {
        let (u, v) = (x - self.x0, y - self.y0);
        self.a + self.b * u + self.c * v + self.d * u * v
    }
}

/// A ray-triangle hit inside one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CellHit {
    pub t: f64,
    pub row: usize,
    pub col: usize,
    pub tri: u8,
}

impl CellHit {
    /// Nearest first; equal `t` resolved by the lexicographic cell index.
    pub(crate) fn better_than(&self, other: &CellHit) -> bool {
        (self.t, self.row, self.col, self.tri) < (other.t, other.row, other.col, other.tri)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: Vec3,
    pub normal: Vec3,
    pub albedo: f64,
    pub t: f64,
    pub cell: (usize, usize),
}

impl TerrainModel {
    pub fn new(rows: usize, cols: usize, spacing: f64, heights: Vec<f32>, nodata: f32, texture: Texture) -> Result<Self, TerrainError> {
        if rows < 2 || cols < 2 {
            return Err(TerrainError::Invalid(format!("grid {rows}x{cols} needs at least 2x2 posts")));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(TerrainError::Invalid(format!("post spacing {spacing}")));
        }
        if heights.len() != rows * cols {
            return Err(TerrainError::Invalid(format!(
                "{} heights for a {rows}x{cols} grid",
                heights.len()
            )));
        }
        if let Some(bad) = heights.iter().find(|h| **h != nodata && !h.is_finite()) {
            return Err(TerrainError::Invalid(format!("non-finite height {bad}")));
        }
        if texture.rows < 2 || texture.cols < 2 || texture.data.len() != texture.rows * texture.cols {
            return Err(TerrainError::Invalid("texture grid is inconsistent".into()));
        }
        if texture.pixel_m > spacing * (1.0 + 1e-12) {
            return Err(TerrainError::Invalid(format!(
                "texture pixel {} m is coarser than post spacing {spacing} m",
                texture.pixel_m
            )));
        }
        let model = Self {
            rows,
            cols,
            spacing,
            heights,
            nodata,
            texture,
        };
        let (dx, dy) = model.extent();
        let (tx, ty) = model.texture.extent();
        if (dx - tx).abs() > 0.5 * spacing || (dy - ty).abs() > 0.5 * spacing {
            return Err(TerrainError::ExtentMismatch {
                dtm_m: (dx, dy),
                texture_m: (tx, ty),
            });
        }
        Ok(model)
    }

    /// Grid of constant height with a constant-albedo texture at post resolution.
    pub fn flat(rows: usize, cols: usize, spacing: f64, height: f64, albedo: f64) -> Self {
        Self::from_fn(rows, cols, spacing, albedo, |_, _| height)
    }

    /// Grid whose heights are `f(x, y)` at each post, with constant albedo.
    pub fn from_fn(rows: usize, cols: usize, spacing: f64, albedo: f64, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut heights = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let (x, y) = post_xy(rows, cols, spacing, r, c);
                heights.push(f(x, y) as f32);
            }
        }
        let texture = Texture::constant(rows, cols, spacing, albedo);
        Self::new(rows, cols, spacing, heights, DEFAULT_NODATA, texture).expect("valid generated grid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn heights(&self) -> &[f32] {
        &self.heights
    }

    pub fn texture(&self) -> &Texture {
        &self.texture
    }

    /// Extent in meters, `((cols−1)·s, (rows−1)·s)`.
    pub fn extent(&self) -> (f64, f64) {
        (
            (self.cols - 1) as f64 * self.spacing,
            (self.rows - 1) as f64 * self.spacing,
        )
    }

    /// Half extents: the terrain covers `[−hx, hx] × [−hy, hy]`.
    pub fn half_extent(&self) -> (f64, f64) {
        let (w, h) = self.extent();
        (w / 2.0, h / 2.0)
    }

    pub fn post(&self, r: usize, c: usize) -> Option<f64> {
        let h = self.heights[r * self.cols + c];
        (h != self.nodata).then_some(h as f64)
    }

    pub fn post_xy(&self, r: usize, c: usize) -> (f64, f64) {
        post_xy(self.rows, self.cols, self.spacing, r, c)
    }

    pub fn is_nodata(&self, r: usize, c: usize) -> bool {
        self.heights[r * self.cols + c] == self.nodata
    }

    pub fn cell_valid(&self, r: usize, c: usize) -> bool {
        !(self.is_nodata(r, c) || self.is_nodata(r, c + 1) || self.is_nodata(r + 1, c) || self.is_nodata(r + 1, c + 1))
    }

    /// Containing cell and fractional offsets for a world point.
    fn locate(&self, x: f64, y: f64) -> Result<(usize, usize, f64, f64), TerrainError> {
        let gc = x / self.spacing + (self.cols - 1) as f64 / 2.0;
        let gr = (self.rows - 1) as f64 / 2.0 - y / self.spacing;
        if !(gc >= 0.0 && gc <= (self.cols - 1) as f64 && gr >= 0.0 && gr <= (self.rows - 1) as f64) {
            return Err(TerrainError::OutOfBounds(x, y));
        }
        let c = (gc.floor() as usize).min(self.cols - 2);
        let r = (gr.floor() as usize).min(self.rows - 2);
        Ok((r, c, gc - c as f64, gr - r as f64))
    }

    fn patch(&self, r: usize, c: usize, x: f64, y: f64) -> Result<Patch, TerrainError> {
        let (Some(nw), Some(ne), Some(sw), Some(se)) =
            (self.post(r, c), self.post(r, c + 1), self.post(r + 1, c), self.post(r + 1, c + 1))
        else {
            return Err(TerrainError::NoData(x, y));
        };
        let s = self.spacing;
        let (x0, y0) = self.post_xy(r + 1, c);
        Ok(Patch {
            x0,
            y0,
            a: sw,
            b: (se - sw) / s,
            c: (nw - sw) / s,
            d: (ne - nw - se + sw) / (s * s),
        })
    }

    /// Bilinear height; exact at posts.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        let (r, c, fx, fy) = self.locate(x, y)?;
        let (Some(nw), Some(ne), Some(sw), Some(se)) =
            (self.post(r, c), self.post(r, c + 1), self.post(r + 1, c), self.post(r + 1, c + 1))
        else {
            return Err(TerrainError::NoData(x, y));
        };
        let top = nw * (1.0 - fx) + ne * fx;
        let bottom = sw * (1.0 - fx) + se * fx;
        Ok(top * (1.0 - fy) + bottom * fy)
    }

    /// Unit normal by central differences with a step of a quarter post.
    pub fn normal_at(&self, x: f64, y: f64) -> Result<Vec3, TerrainError> {
        self.normal_at_step(x, y, 0.25 * self.spacing)
    }

    /// Unit normal by central differences of step `h` on the interpolated
    /// surface of the cell containing `(x, y)`.
    pub fn normal_at_step(&self, x: f64, y: f64, h: f64) -> Result<Vec3, TerrainError> {
        let (r, c, _, _) = self.locate(x, y)?;
        let patch = self.patch(r, c, x, y)?;
        Ok(patch_normal(&patch, x, y, h))
    }

    pub fn albedo_at(&self, x: f64, y: f64) -> f64 {
        self.texture.albedo_at(x, y)
    }

    /// World-space corners of cell `(r, c)`: NW, NE, SW, SE.
    fn cell_corners(&self, r: usize, c: usize) -> [Vec3; 4] {
        let s = self.spacing;
        let (x0, y0) = self.post_xy(r, c);
        let z = |rr: usize, cc: usize| self.heights[rr * self.cols + cc] as f64;
        [
            Vec3::new(x0, y0, z(r, c)),
            Vec3::new(x0 + s, y0, z(r, c + 1)),
            Vec3::new(x0, y0 - s, z(r + 1, c)),
            Vec3::new(x0 + s, y0 - s, z(r + 1, c + 1)),
        ]
    }

    /// Nearest ray hit within one valid cell, if any.
    pub(crate) fn intersect_cell(&self, r: usize, c: usize, origin: &Vec3, dir: &Vec3) -> Option<CellHit> {
        if !self.cell_valid(r, c) {
            return None;
        }
        let [nw, ne, sw, se] = self.cell_corners(r, c);
        let mut best: Option<CellHit> = None;
        for (tri, (a, b, cc)) in [(sw, se, ne), (sw, ne, nw)].into_iter().enumerate() {
            if let Some(t) = ray_triangle(origin, dir, &a, &b, &cc) {
                let hit = CellHit { t, row: r, col: c, tri: tri as u8 };
                if best.map_or(true, |b| hit.better_than(&b)) {
                    best = Some(hit);
                }
            }
        }
        best
    }

    /// Exhaustive nearest hit over every cell.
    pub fn ray_intersect_brute(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        let mut best: Option<CellHit> = None;
        for r in 0..self.rows - 1 {
            for c in 0..self.cols - 1 {
                if let Some(hit) = self.intersect_cell(r, c, origin, dir) {
                    if best.map_or(true, |b| hit.better_than(&b)) {
                        best = Some(hit);
                    }
                }
            }
        }
        best.map(|h| self.finish_hit(&h, origin, dir))
    }

    pub(crate) fn finish_hit(&self, hit: &CellHit, origin: &Vec3, dir: &Vec3) -> RayHit {
        let point = origin + dir * hit.t;
        let patch = self.patch(hit.row, hit.col, point.x, point.y).expect("hit cells are valid");
        RayHit {
            point,
            normal: patch_normal(&patch, point.x, point.y, 0.25 * self.spacing),
            albedo: self.albedo_at(point.x, point.y),
            t: hit.t,
            cell: (hit.row, hit.col),
        }
    }

    /// Height range of valid posts.
    pub fn height_range(&self) -> Option<(f64, f64)> {
        self.heights
            .iter()
            .filter(|h| **h != self.nodata)
            .fold(None, |acc, &h| {
                let h = h as f64;
                Some(acc.map_or((h, h), |(lo, hi): (f64, f64)| (lo.min(h), hi.max(h))))
            })
    }

    /// Heights as a raster (row 0 north), nodata included verbatim.
    pub fn height_raster(&self) -> Raster<f32> {
        Raster::from_vec(self.cols, self.rows, self.heights.clone())
    }

    pub fn dtm_header(&self) -> DtmHeader {
        DtmHeader {
            rows: self.rows,
            cols: self.cols,
            post_spacing_m: self.spacing,
            nodata: self.nodata,
            origin: "center".into(),
        }
    }
}

/// Nearest-hit and any-hit ray queries against a terrain.
pub trait RayCaster: Sync {
    fn terrain(&self) -> &TerrainModel;
    fn ray_intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit>;
    fn occluded(&self, origin: &Vec3, dir: &Vec3) -> bool;
}

/// Exhaustive per-cell search; the reference the accelerated path must equal.
#[derive(Debug, Clone, Copy)]
pub struct BruteForce<'a>(pub &'a TerrainModel);

impl RayCaster for BruteForce<'_> {
    fn terrain(&self) -> &TerrainModel {
        self.0
    }

    fn ray_intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        self.0.ray_intersect_brute(origin, dir)
    }

    fn occluded(&self, origin: &Vec3, dir: &Vec3) -> bool {
        self.0.ray_intersect_brute(origin, dir).is_some()
    }
}

impl RayCaster for TerrainAccel<'_> {
    fn terrain(&self) -> &TerrainModel {
        TerrainAccel::terrain(self)
    }

    fn ray_intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        TerrainAccel::ray_intersect(self, origin, dir)
    }

    fn occluded(&self, origin: &Vec3, dir: &Vec3) -> bool {
        TerrainAccel::occluded(self, origin, dir)
    }
}

fn post_xy(rows: usize, cols: usize, spacing: f64, r: usize, c: usize) -> (f64, f64) {
    (
        (c as f64 - (cols - 1) as f64 / 2.0) * spacing,
        ((rows - 1) as f64 / 2.0 - r as f64) * spacing,
    )
}

fn patch_normal(patch: &Patch, x: f64, y: f64, h: f64) -> Vec3 {
    let dzdx = (patch.height(x + h, y) - patch.height(x - h, y)) / (2.0 * h);
    let dzdy = (patch.height(x, y + h) - patch.height(x, y - h)) / (2.0 * h);
    Vec3::new(-dzdx, -dzdy, 1.0).normalize()
}

/// Möller–Trumbore with a tiny barycentric tolerance so shared edges are
/// watertight. Returns `t ≥ 0`.
fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if u < -EPS || u > 1.0 + EPS {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t >= 0.0).then_some(t)
}

fn texture_format_for(path: &Path) -> TextureFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pgm") => TextureFormat::Pgm,
        _ => TextureFormat::Raw16,
    }
}

/// Writes the DTM (raw f32) and texture (PGM or raw16 by extension), each
/// with a JSON sidecar next to it.
pub fn save_terrain(terrain: &TerrainModel, dtm_path: &Path, texture_path: &Path) -> Result<(), TerrainError> {
    io::write_bytes(dtm_path, &io::encode_raw_f32(&terrain.heights))?;
    io::write_json(&io::sidecar_path(dtm_path), &terrain.dtm_header())?;
    let tex = &terrain.texture;
    let format = texture_format_for(texture_path);
    match format {
        TextureFormat::Pgm => {
            let gray = Raster::from_vec(
                tex.cols,
                tex.rows,
                tex.data.iter().map(|v| ((*v as f64) / 257.0).round() as u8).collect(),
            );
            io::write_pgm(texture_path, &gray)?;
        }
        TextureFormat::Raw16 => io::write_bytes(texture_path, &io::encode_raw_u16(&tex.data))?,
    }
    let header = TextureHeader {
        rows: tex.rows,
        cols: tex.cols,
        pixel_size_m: tex.pixel_m,
        format,
        origin: "center".into(),
    };
    io::write_json(&io::sidecar_path(texture_path), &header)?;
    Ok(())
}

pub fn load_terrain(dtm_path: &Path, texture_path: &Path) -> Result<TerrainModel, TerrainError> {
    let header: DtmHeader = read_header(dtm_path)?;
    if header.origin != "center" {
        return Err(TerrainError::Header(format!("unsupported origin {:?}", header.origin)));
    }
    let bytes = io::read_bytes(dtm_path)?;
    let heights = io::decode_raw_f32(dtm_path, &bytes, header.rows * header.cols)?;

    let th: TextureHeader = read_header(texture_path)?;
    if th.origin != "center" {
        return Err(TerrainError::Header(format!("unsupported texture origin {:?}", th.origin)));
    }
    let data = match th.format {
        TextureFormat::Pgm => {
            let gray = io::read_pgm(texture_path)?;
            if gray.width() != th.cols || gray.height() != th.rows {
                return Err(TerrainError::Header(format!(
                    "texture sidecar says {}x{}, PGM is {}x{}",
                    th.cols,
                    th.rows,
                    gray.width(),
                    gray.height()
                )));
            }
            gray.data().iter().map(|v| *v as u16 * 257).collect()
        }
        TextureFormat::Raw16 => io::decode_raw_u16(texture_path, &io::read_bytes(texture_path)?, th.rows * th.cols)?,
    };
    let texture = Texture {
        rows: th.rows,
        cols: th.cols,
        pixel_m: th.pixel_size_m,
        data,
    };
    TerrainModel::new(header.rows, header.cols, header.post_spacing_m, heights, header.nodata, texture)
}

fn read_header<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, TerrainError> {
    let side = io::sidecar_path(path);
    match io::read_json(&side) {
        Ok(h) => Ok(h),
        Err(IoError::Json { source, .. }) => Err(TerrainError::Header(format!("{}: {source}", side.display()))),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_and_ramp_heights() {
        let t = TerrainModel::flat(3, 3, 1.0, 0.0, 0.5);
        assert_eq!(t.height_at(0.0, 0.0).unwrap(), 0.0);
        let t = TerrainModel::flat(5, 5, 2.0, 7.0, 0.5);
        assert_eq!(t.height_at(1.3, -3.1).unwrap(), 7.0);
        let ramp = TerrainModel::from_fn(9, 9, 1.0, 0.5, |x, _| x);
        assert!((ramp.height_at(2.5, 0.7).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_and_nodata() {
        let mut t = TerrainModel::flat(4, 4, 1.0, 0.0, 0.5);
        assert!(matches!(t.height_at(1.6, 0.0), Err(TerrainError::OutOfBounds(..))));
        t.heights[0] = t.nodata;
        assert!(matches!(t.height_at(-1.2, 1.2), Err(TerrainError::NoData(..))));
        assert!(t.height_at(1.2, -1.2).is_ok());
    }

    #[test]
    fn normals_on_planes() {
        let flat = TerrainModel::flat(5, 5, 1.0, 3.0, 0.5);
        assert_eq!(flat.normal_at(0.3, 0.2).unwrap(), Vec3::new(0.0, 0.0, 1.0));
        let ramp = TerrainModel::from_fn(5, 5, 1.0, 0.5, |x, _| x);
        let n = ramp.normal_at(0.3, -0.4).unwrap();
        assert!((n - Vec3::new(-1.0, 0.0, 1.0).normalize()).norm() < 1e-12);
        let plane = TerrainModel::from_fn(7, 7, 0.5, 0.5, |x, y| 0.25 * x - 0.75 * y + 2.0);
        let n = plane.normal_at(0.61, 0.17).unwrap();
        assert!((n - Vec3::new(-0.25, 0.75, 1.0).normalize()).norm() < 1e-12);
        assert!((n.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_matches_independent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rows, cols, s) = (12, 17, 0.7);
        let raw: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t = TerrainModel::from_fn(rows, cols, s, 0.5, |x, y| {
            let c = (x / s + (cols - 1) as f64 / 2.0).round() as usize;
            let r = ((rows - 1) as f64 / 2.0 - y / s).round() as usize;
            raw[r * cols + c]
        });
        let h = |r: usize, c: usize| raw[r * cols + c] as f32 as f64;
        for _ in 0..1000 {
            let gx = rng.gen_range(0.0..(cols - 1) as f64);
            let gy = rng.gen_range(0.0..(rows - 1) as f64);
            let (c, r) = (gx.floor() as usize, gy.floor() as usize);
            let (fx, fy) = (gx - c as f64, gy - r as f64);
            let oracle = h(r, c) * (1.0 - fx) * (1.0 - fy)
                + h(r, c + 1) * fx * (1.0 - fy)
                + h(r + 1, c) * (1.0 - fx) * fy
                + h(r + 1, c + 1) * fx * fy;
            let x = (gx - (cols - 1) as f64 / 2.0) * s;
            let y = ((rows - 1) as f64 / 2.0 - gy) * s;
            assert!((t.height_at(x, y).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn height_continuous_across_cell_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = TerrainModel::from_fn(10, 10, 1.0, 0.5, |_, _| rng.gen_range(0.0..10.0));
        for c in 1..9 {
            let (x, _) = t.post_xy(0, c);
            for k in 0..20 {
                let y = -4.5 + k as f64 * 0.45;
                let left = t.patch(4, c - 1, x, y).unwrap();
                let right = t.patch(4, c, x, y).unwrap();
                let yy = y.clamp(-0.5, 0.5);
                assert!((left.height(x, yy) - right.height(x, yy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_ray_at_post() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = TerrainModel::from_fn(9, 9, 1.0, 0.5, |_, _| rng.gen_range(0.0..3.0));
        let (x, y) = t.post_xy(4, 4);
        let z = t.post(4, 4).unwrap();
        let hit = t.ray_intersect_brute(&Vec3::new(x, y, 50.0), &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(hit.t, 50.0 - z);
        assert!(t.ray_intersect_brute(&Vec3::new(100.0, 0.0, 50.0), &Vec3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams {
            size_m: 40.0,
            ..SynthParams::default()
        };
        let t = generate_synthetic_terrain(&params);
        let (dtm, tex) = (dir.path().join("t.dtm"), dir.path().join("t.tex"));
        save_terrain(&t, &dtm, &tex).unwrap();
        let back = load_terrain(&dtm, &tex).unwrap();
        assert_eq!(back, t);

        let pgm = dir.path().join("t.pgm");
        save_terrain(&t, &dtm, &pgm).unwrap();
        let back = load_terrain(&dtm, &pgm).unwrap();
        assert_eq!(back.heights, t.heights);
        for (a, b) in back.texture.data.iter().zip(&t.texture.data) {
            assert!((*a as i32 - *b as i32).abs() <= 129);
        }
    }

    #[test]
    fn load_rejects_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let t = TerrainModel::flat(3, 3, 1.0, 0.0, 0.5);
        let (dtm, tex) = (dir.path().join("a.dtm"), dir.path().join("a.tex"));
        save_terrain(&t, &dtm, &tex).unwrap();
        let mut header = t.dtm_header();
        header.rows = 4;
        io::write_json(&io::sidecar_path(&dtm), &header).unwrap();
        assert!(matches!(
            load_terrain(&dtm, &tex),
            Err(TerrainError::Io(IoError::SizeMismatch { .. }))
        ));
        std::fs::write(io::sidecar_path(&dtm), "{ rows: ").unwrap();
        assert!(matches!(load_terrain(&dtm, &tex), Err(TerrainError::Header(_))));

        io::write_json(&io::sidecar_path(&dtm), &t.dtm_header()).unwrap();
        let wide = TextureHeader {
            rows: 3,
            cols: 5,
            pixel_size_m: 1.0,
            format: TextureFormat::Raw16,
            origin: "center".into(),
        };
        io::write_bytes(&tex, &io::encode_raw_u16(&[0; 15])).unwrap();
        io::write_json(&io::sidecar_path(&tex), &wide).unwrap();
        assert!(matches!(load_terrain(&dtm, &tex), Err(TerrainError::ExtentMismatch { .. })));
    }
}
