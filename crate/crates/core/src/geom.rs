//! Frame conventions, camera intrinsics and projection math.
//!
//! World frame `W` is East-North-Up with its origin at the terrain center,
//! in meters. A [`Pose`] stores `r_wc`, whose columns are the camera axes
//! expressed in `W`, and `t_wc`, the camera center in `W`:
//!
//! ```text
//! X_W = r_wc * X_C + t_wc        X_C = r_wcᵀ * (X_W - t_wc)
//! ```
//!
//! Camera X runs right along the image width, Z points toward the scene and
//! Y completes a right-handed frame (image rows advance along +Y).
//! Pixel coordinates address pixel centers: pixel `(i, j)` is the point
//! `(u, v) = (i, j)`, with no half-pixel offset.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on orthonormality and determinant of pose rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid camera parameter: {0}")]
    InvalidParameter(String),
    #[error("point is behind the camera (camera z = {0})")]
    BehindCamera(f64),
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("pixel ({0}, {1}) outside image bounds")]
    PixelOutOfBounds(f64, f64),
    #[error("rotation is not orthonormal with det +1")]
    InvalidRotation,
}

/// Camera pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub r_wc: Mat3,
    pub t_wc: Vec3,
}

impl Pose {
    pub fn new(r_wc: Mat3, t_wc: Vec3) -> Result<Self, GeomError> {
        if !is_rotation(&r_wc) {
            return Err(GeomError::InvalidRotation);
        }
        Ok(Self { r_wc, t_wc })
    }

    pub fn world_to_camera(&self, x_w: &Vec3) -> Vec3 {
        self.r_wc.transpose() * (x_w - self.t_wc)
    }

    pub fn camera_to_world(&self, x_c: &Vec3) -> Vec3 {
        self.r_wc * x_c + self.t_wc
    }

    /// Viewing axis (camera +Z) in world coordinates.
    pub fn view_axis(&self) -> Vec3 {
        self.r_wc.column(2).into_owned()
    }

    /// Rotation angle (rad) between this pose's attitude and `other`'s.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.r_wc.transpose() * other.r_wc))
    }

    pub fn is_nadir(&self) -> bool {
        (self.r_wc - nadir_rotation()).abs().max() < 1e-9
    }

    pub fn to_record(&self) -> PoseRecord {
        let mut r = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                r[row * 3 + col] = self.r_wc[(row, col)];
            }
        }
        PoseRecord {
            r,
            t: [self.t_wc.x, self.t_wc.y, self.t_wc.z],
        }
    }
}

/// Serialized pose: `r` is `r_wc` in row-major order, `t` is `t_wc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose, GeomError> {
        Pose::new(Mat3::from_row_slice(&self.r), Vec3::from(self.t))
    }
}

pub fn is_rotation(r: &Mat3) -> bool {
    let should_be_identity = r.transpose() * r;
    (should_be_identity - Mat3::identity()).abs().max() < ROTATION_TOLERANCE
        && (r.determinant() - 1.0).abs() < ROTATION_TOLERANCE
}

pub fn rotation_angle(r: &Mat3) -> f64 {
    // acos is ill-conditioned near zero; use the axis-angle log instead.
    let skew = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = 0.5 * skew.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

/// Rotation of the canonical nadir attitude: camera X = East, Y = South, Z = Down.
pub fn nadir_rotation() -> Mat3 {
    Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
}

pub fn nadir_pose(x: f64, y: f64, z_world: f64) -> Pose {
    Pose {
        r_wc: nadir_rotation(),
        t_wc: Vec3::new(x, y, z_world),
    }
}

/// Pinhole optics described the way rendering tools expose them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveIntrinsics {
    pub focal_mm: f64,
    pub sensor_width_mm: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub shift_x_px: f64,
    #[serde(default)]
    pub shift_y_px: f64,
    #[serde(default = "default_aspect")]
    pub pixel_aspect: f64,
}

fn default_aspect() -> f64 {
    1.0
}

impl PerspectiveIntrinsics {
    /// Query camera of the reference dataset: 32 mm lens, 80 mm sensor, 640×480.
    pub fn reference_query() -> Self {
        Self {
            focal_mm: 32.0,
            sensor_width_mm: 80.0,
            width: 640,
            height: 480,
            shift_x_px: 0.0,
            shift_y_px: 0.0,
            pixel_aspect: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.focal_mm) {
            return Err(GeomError::InvalidParameter(format!("focal length {}", self.focal_mm)));
        }
        if !positive(self.sensor_width_mm) {
            return Err(GeomError::InvalidParameter(format!(
                "sensor width {}",
                self.sensor_width_mm
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeomError::InvalidParameter(format!(
                "image size {}x{}",
                self.width, self.height
            )));
        }
        if !positive(self.pixel_aspect) {
            return Err(GeomError::InvalidParameter(format!(
                "pixel aspect {}",
                self.pixel_aspect
            )));
        }
        Ok(())
    }

    pub fn camera_matrix(&self) -> Result<CameraMatrix, GeomError> {
        self.validate()?;
        let fx = self.focal_mm * self.width as f64 / self.sensor_width_mm;
        Ok(CameraMatrix {
            fx,
            fy: fx / self.pixel_aspect,
            cx: self.width as f64 / 2.0 + self.shift_x_px,
            cy: self.height as f64 / 2.0 + self.shift_y_px,
        })
    }

    /// Ground sample distance (m/px) at the image center for a nadir view at `altitude` m.
    pub fn ground_sample_distance(&self, altitude: f64) -> f64 {
        altitude * self.sensor_width_mm / (self.focal_mm * self.width as f64)
    }

    /// Ground footprint (width, height) in meters of a nadir view over flat ground.
    pub fn footprint(&self, altitude: f64) -> (f64, f64) {
        let width = altitude * self.sensor_width_mm / self.focal_mm;
        let height = width * self.height as f64 / self.width as f64 * self.pixel_aspect;
        (width, height)
    }
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMatrix {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraMatrix {
    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel of a camera-frame point; the point must have positive z.
    pub fn project_camera(&self, x_c: &Vec3) -> Result<Vector2<f64>, GeomError> {
        if !(x_c.z > 0.0) {
            return Err(GeomError::BehindCamera(x_c.z));
        }
        Ok(Vector2::new(
            self.fx * x_c.x / x_c.z + self.cx,
            self.fy * x_c.y / x_c.z + self.cy,
        ))
    }

    /// Camera-frame ray through a pixel, scaled so that its z component is 1.
    pub fn unproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Pixel coordinates and camera-frame depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn project_perspective(k: &CameraMatrix, pose: &Pose, x_w: &Vec3) -> Result<Projection, GeomError> {
    let x_c = pose.world_to_camera(x_w);
    let px = k.project_camera(&x_c)?;
    Ok(Projection {
        u: px.x,
        v: px.y,
        depth: x_c.z,
    })
}

/// World point seen at pixel `(u, v)` with camera-frame depth `depth`.
pub fn unproject_perspective(k: &CameraMatrix, pose: &Pose, u: f64, v: f64, depth: f64) -> Vec3 {
    pose.camera_to_world(&(k.unproject(u, v) * depth))
}

/// Orthographic camera: `scale_m` meters of ground across `width` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoIntrinsics {
    pub scale_m: f64,
    pub width: usize,
    pub height: usize,
    pub cx: f64,
    pub cy: f64,
}

impl OrthoIntrinsics {
    /// Centered orthographic camera with square pixels of `pixel_m` meters.
    pub fn with_resolution(width: usize, height: usize, pixel_m: f64) -> Self {
        Self {
            scale_m: pixel_m * width as f64,
            width,
            height,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn pixel_size(&self) -> f64 {
        self.scale_m / self.width as f64
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.width == 0 || self.height == 0 || !(self.scale_m > 0.0) || !self.scale_m.is_finite() {
            return Err(GeomError::InvalidParameter(format!(
                "orthographic camera {}x{} px, scale {} m",
                self.width, self.height, self.scale_m
            )));
        }
        Ok(())
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u <= self.width as f64 - 0.5 && v <= self.height as f64 - 0.5
    }
}

/// Inverse orthographic projection of map pixel `(u, v)` at depth `depth`:
/// `X_W = p · R · [u − cx, v − cy, depth / p]ᵀ + t`.
pub fn backproject_ortho(
    oi: &OrthoIntrinsics,
    map_pose: &Pose,
    u: f64,
    v: f64,
    depth: f64,
) -> Result<Vec3, GeomError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeomError::InvalidDepth(depth));
    }
    if !oi.contains(u, v) {
        return Err(GeomError::PixelOutOfBounds(u, v));
    }
    let p = oi.pixel_size();
    let x_c = Vec3::new(u - oi.cx, v - oi.cy, depth / p) * p;
    Ok(map_pose.camera_to_world(&x_c))
}

/// Forward orthographic projection, the inverse of [`backproject_ortho`].
pub fn project_ortho(oi: &OrthoIntrinsics, map_pose: &Pose, x_w: &Vec3) -> Projection {
    let x_c = map_pose.world_to_camera(x_w);
    let p = oi.pixel_size();
    Projection {
        u: x_c.x / p + oi.cx,
        v: x_c.y / p + oi.cy,
        depth: x_c.z,
    }
}

pub fn deg_to_rad(deg: f64) -> f64 {
    deg.to_radians()
}

/// Rodrigues rotation from an axis-angle vector.
pub fn rotation_from_axis_angle(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-12 {
        return Mat3::identity() + k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + k * a + k * k * b
}

pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}
