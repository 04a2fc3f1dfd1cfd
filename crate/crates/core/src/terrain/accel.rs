//! Min-max quadtree over terrain cells.
//!
//! Level 0 holds one node per cell; each higher level merges 2×2 children
//! until a single root remains. Nodes store the z range of their valid
//! cells, and x/y bounds follow from the cell range, so the hierarchy is a
//! BVH whose boxes never need to be stored explicitly.

use arrayvec::ArrayVec;

use super::{CellHit, RayHit, TerrainError, TerrainModel};
use crate::geom::Vec3;

#[derive(Debug, Clone)]
struct Level {
    rows: usize,
    cols: usize,
    /// `(zmin, zmax)` per node; empty nodes have `zmin > zmax`.
    z: Vec<(f32, f32)>,
}

#[derive(Debug, Clone)]
pub struct TerrainAccel<'a> {
    terrain: &'a TerrainModel,
    levels: Vec<Level>,
    pad: f64,
    spacing: f64,
    x_west: f64,
    y_north: f64,
}

const EMPTY: (f32, f32) = (f32::INFINITY, f32::NEG_INFINITY);

/// Traversal stack bound: at most 3 pending siblings per level plus the
/// node being expanded, for quadtrees up to 2^30 cells on a side.
const STACK: usize = 3 * 31 + 1;

impl<'a> TerrainAccel<'a> {
    pub fn build(terrain: &'a TerrainModel) -> Result<Self, TerrainError> {
        let (rows, cols) = (terrain.rows() - 1, terrain.cols() - 1);
        let mut z = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                if terrain.cell_valid(r, c) {
                    let h = [
                        terrain.heights[r * terrain.cols + c],
                        terrain.heights[r * terrain.cols + c + 1],
                        terrain.heights[(r + 1) * terrain.cols + c],
                        terrain.heights[(r + 1) * terrain.cols + c + 1],
                    ];
                    let lo = h.iter().copied().fold(f32::INFINITY, f32::min);
                    let hi = h.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    z.push((lo, hi));
                } else {
                    z.push(EMPTY);
                }
            }
        }
        if z.iter().all(|(lo, hi)| lo > hi) {
            return Err(TerrainError::Empty);
        }
        if rows.max(cols) > 1 << 30 {
            return Err(TerrainError::Invalid(format!("grid {rows}x{cols} is too large")));
        }
        let mut levels = vec![Level { rows, cols, z }];
        while levels.last().map_or(false, |l| l.rows > 1 || l.cols > 1) {
            let child = levels.last().unwrap();
            let (pr, pc) = (child.rows.div_ceil(2), child.cols.div_ceil(2));
            let mut z = vec![EMPTY; pr * pc];
            for r in 0..child.rows {
                for c in 0..child.cols {
                    let (lo, hi) = child.z[r * child.cols + c];
                    let node = &mut z[(r / 2) * pc + c / 2];
                    node.0 = node.0.min(lo);
                    node.1 = node.1.max(hi);
                }
            }
            levels.push(Level { rows: pr, cols: pc, z });
        }
        let (ex, ey) = terrain.extent();
        let (zlo, zhi) = terrain.height_range().unwrap_or((0.0, 0.0));
        let scale = ex.max(ey).max(zlo.abs()).max(zhi.abs()).max(1.0);
        let (x_west, y_north) = terrain.post_xy(0, 0);
        Ok(Self {
            terrain,
            levels,
            pad: 1e-9 * scale,
            spacing: terrain.spacing(),
            x_west,
            y_north,
        })
    }

    pub fn terrain(&self) -> &'a TerrainModel {
        self.terrain
    }

    /// Entry parameter of the ray into node `(i, j)` at `level`, clamped
    /// to `t ≥ 0`; `None` if the padded box is missed or empty.
    #[inline]
    fn enter(&self, level: usize, i: usize, j: usize, ray: &Ray) -> Option<f64> {
        let lvl = &self.levels[level];
        let (zlo, zhi) = lvl.z[i * lvl.cols + j];
        if zlo > zhi {
            return None;
        }
        let (rows, cols) = (self.levels[0].rows, self.levels[0].cols);
        let s = self.spacing;
        let p = self.pad;
        let c0 = (j << level) as f64;
        let c1 = ((j + 1) << level).min(cols) as f64;
        let r0 = (i << level) as f64;
        let r1 = ((i + 1) << level).min(rows) as f64;
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        let inside = ray.slab(0, self.x_west + c0 * s - p, self.x_west + c1 * s + p, &mut t0, &mut t1)
            && ray.slab(1, self.y_north - r1 * s - p, self.y_north - r0 * s + p, &mut t0, &mut t1)
            && ray.slab(2, zlo as f64 - p, zhi as f64 + p, &mut t0, &mut t1);
        inside.then_some(t0)
    }

    /// Nearest hit with deterministic tie-breaking, identical to the
    /// exhaustive search.
    pub fn ray_intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        self.nearest(origin, dir).map(|h| self.terrain.finish_hit(&h, origin, dir))
    }

    pub(crate) fn nearest(&self, origin: &Vec3, dir: &Vec3) -> Option<CellHit> {
        if dir.x == 0.0 && dir.y == 0.0 {
            return self.nearest_vertical(origin, dir);
        }
        let ray = Ray::new(origin, dir);
        let top = self.levels.len() - 1;
        let mut best: Option<CellHit> = None;
        let mut stack: ArrayVec<(u32, u32, u32, f64), STACK> = ArrayVec::new();
        if let Some(t) = self.enter(top, 0, 0, &ray) {
            stack.push((top as u32, 0, 0, t));
        }
        while let Some((level, i, j, entry)) = stack.pop() {
            let (level, i, j) = (level as usize, i as usize, j as usize);
            if best.map_or(false, |b| entry > b.t) {
                continue;
            }
            if level == 0 {
                if let Some(hit) = self.terrain.intersect_cell(i, j, origin, dir) {
                    if best.map_or(true, |b| hit.better_than(&b)) {
                        best = Some(hit);
                    }
                }
                continue;
            }
            let mut kids = [(0u32, 0u32, 0f64); 4];
            let mut n = 0;
            let child = &self.levels[level - 1];
            for ci in 2 * i..(2 * i + 2).min(child.rows) {
                for cj in 2 * j..(2 * j + 2).min(child.cols) {
                    if let Some(t) = self.enter(level - 1, ci, cj, &ray) {
                        if best.map_or(true, |b| t <= b.t) {
                            // insertion sort, farthest first
                            let mut k = n;
                            while k > 0 && kids[k - 1].2 < t {
                                kids[k] = kids[k - 1];
                                k -= 1;
                            }
                            kids[k] = (ci as u32, cj as u32, t);
                            n += 1;
                        }
                    }
                }
            }
            for &(ci, cj, t) in &kids[..n] {
                stack.push(((level - 1) as u32, ci, cj, t));
            }
        }
        best
    }

    /// Vertical rays can only hit the cells whose padded footprint holds
    /// the ray's x/y, so those are tested directly.
    fn nearest_vertical(&self, origin: &Vec3, dir: &Vec3) -> Option<CellHit> {
        let (rows, cols) = (self.levels[0].rows, self.levels[0].cols);
        let s = self.spacing;
        let gc = (origin.x - self.x_west) / s;
        let gr = (self.y_north - origin.y) / s;
        let slack = 2.0 * self.pad / s;
        let span = |g: f64, n: usize| -> Option<(usize, usize)> {
            let lo = (g - slack).floor();
            let hi = (g + slack).floor();
            if hi < 0.0 || lo > (n - 1) as f64 {
                return None;
            }
            Some((lo.max(0.0) as usize, (hi as usize).min(n - 1)))
        };
        let (c0, c1) = span(gc, cols)?;
        let (r0, r1) = span(gr, rows)?;
        let mut best: Option<CellHit> = None;
        for r in r0..=r1 {
            for c in c0..=c1 {
                if let Some(hit) = self.terrain.intersect_cell(r, c, origin, dir) {
                    if best.map_or(true, |b| hit.better_than(&b)) {
                        best = Some(hit);
                    }
                }
            }
        }
        best
    }

    /// True if the ray hits any terrain triangle at `t ≥ 0`.
    pub fn occluded(&self, origin: &Vec3, dir: &Vec3) -> bool {
        if dir.x == 0.0 && dir.y == 0.0 {
            return self.nearest_vertical(origin, dir).is_some();
        }
        let ray = Ray::new(origin, dir);
        let top = self.levels.len() - 1;
        let mut stack: ArrayVec<(u32, u32, u32), STACK> = ArrayVec::new();
        if self.enter(top, 0, 0, &ray).is_some() {
            stack.push((top as u32, 0, 0));
        }
        while let Some((level, i, j)) = stack.pop() {
            let (level, i, j) = (level as usize, i as usize, j as usize);
            if level == 0 {
                if self.terrain.intersect_cell(i, j, origin, dir).is_some() {
                    return true;
                }
                continue;
            }
            let child = &self.levels[level - 1];
            for ci in 2 * i..(2 * i + 2).min(child.rows) {
                for cj in 2 * j..(2 * j + 2).min(child.cols) {
                    if self.enter(level - 1, ci, cj, &ray).is_some() {
                        stack.push(((level - 1) as u32, ci as u32, cj as u32));
                    }
                }
            }
        }
        false
    }
}

struct Ray {
    o: [f64; 3],
    d: [f64; 3],
    inv: [f64; 3],
}

impl Ray {
    fn new(origin: &Vec3, dir: &Vec3) -> Self {
        Self {
            o: [origin.x, origin.y, origin.z],
            d: [dir.x, dir.y, dir.z],
            inv: [1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z],
        }
    }

    /// Clips `[t0, t1]` to the slab `lo ≤ o + t·d ≤ hi` along axis `k`.
    #[inline]
    fn slab(&self, k: usize, lo: f64, hi: f64, t0: &mut f64, t1: &mut f64) -> bool {
        if self.d[k] == 0.0 {
            return self.o[k] >= lo && self.o[k] <= hi;
        }
        let a = (lo - self.o[k]) * self.inv[k];
        let b = (hi - self.o[k]) * self.inv[k];
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        *t0 = t0.max(near);
        *t1 = t1.min(far);
        *t0 <= *t1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_terrain(n: usize, seed: u64) -> TerrainModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TerrainModel::from_fn(n, n, 1.0, 0.5, |_, _| rng.gen_range(-4.0..4.0))
    }

    fn random_ray(rng: &mut ChaCha8Rng, half: f64) -> (Vec3, Vec3) {
        let o = Vec3::new(
            rng.gen_range(-1.3 * half..1.3 * half),
            rng.gen_range(-1.3 * half..1.3 * half),
            rng.gen_range(-2.0..30.0),
        );
        let target = Vec3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-5.0..5.0));
        let d = if rng.gen_bool(0.1) {
            Vec3::new(0.0, 0.0, -1.0)
        } else {
            (target - o).normalize()
        };
        (o, d)
    }

    #[test]
    fn accel_matches_brute_force_on_random_rays() {
        let t = random_terrain(64, 1);
        let accel = TerrainAccel::build(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = 0;
        for _ in 0..10_000 {
            let (o, d) = random_ray(&mut rng, 31.5);
            let fast = accel.ray_intersect(&o, &d);
            let slow = t.ray_intersect_brute(&o, &d);
            assert_eq!(fast, slow);
            assert_eq!(accel.occluded(&o, &d), slow.is_some());
            hits += slow.is_some() as usize;
        }
        assert!(hits > 5000);
    }

    #[test]
    fn nodata_cells_are_holes() {
        let mut t = random_terrain(16, 4);
        let idx = 8 * t.cols + 8;
        t.heights[idx] = t.nodata;
        let accel = TerrainAccel::build(&t).unwrap();
        let (x, y) = t.post_xy(8, 8);
        let down = Vec3::new(0.0, 0.0, -1.0);
        assert!(accel.ray_intersect(&Vec3::new(x + 0.3, y - 0.2, 50.0), &down).is_none());
        assert!(accel.ray_intersect(&Vec3::new(x + 1.3, y - 1.2, 50.0), &down).is_some());
    }

    #[test]
    fn empty_terrain_is_rejected() {
        let mut t = TerrainModel::flat(3, 3, 1.0, 0.0, 0.5);
        let nodata = t.nodata;
        t.heights[4] = nodata;
        assert!(matches!(TerrainAccel::build(&t), Err(TerrainError::Empty)));
    }

    #[test]
    fn miss_outside_extent() {
        let t = random_terrain(8, 6);
        let accel = TerrainAccel::build(&t).unwrap();
        assert!(accel.ray_intersect(&Vec3::new(20.0, 0.0, 10.0), &Vec3::new(0.0, 0.0, -1.0)).is_none());
        assert!(accel.ray_intersect(&Vec3::new(0.0, 0.0, 10.0), &Vec3::new(0.0, 0.0, 1.0)).is_none());
    }
}
