//! Pinhole and stereo-rig geometry: projection, triangulation and the
//! disparity-to-3D reprojection matrix.
//!
//! The camera frame is right handed with x to the right, y down and z
//! forward along the optical axis. Depths are in meters, pixel
//! coordinates in (possibly fractional) pixels.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("disparity must be positive, got {0}")]
    NonPositiveDisparity(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("homogeneous W below tolerance: |{0}| < 1e-12")]
    DegenerateW(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid stereo rig: {0}")]
    InvalidRig(String),
}

/// Guard for the homogeneous divide in [`reproject_pixel`].
pub const DEGENERATE_W_TOL: f64 = 1e-12;

/// Pinhole camera intrinsics. Both rig cameras share a single focal
/// length, so `f` is one scalar in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(f > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal length must be positive, got {f}"
            )));
        }
        if !(0.0..(width as f64)).contains(&cx) || !(0.0..(height as f64)).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { f, cx, cy, width, height })
    }
}

/// A horizontal stereo rig: two cameras sharing one focal length,
/// separated by `baseline_m` along the x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    pub baseline_m: f64,
}

impl StereoRig {
    pub fn new(
        left: CameraIntrinsics,
        right: CameraIntrinsics,
        baseline_m: f64,
    ) -> Result<Self, GeometryError> {
        if !(baseline_m > 0.0) {
            return Err(GeometryError::InvalidRig(format!(
                "baseline must be positive, got {baseline_m}"
            )));
        }
        if left.f != right.f {
            return Err(GeometryError::InvalidRig(format!(
                "cameras must share one focal length ({} vs {})",
                left.f, right.f
            )));
        }
        if left.width != right.width || left.height != right.height {
            return Err(GeometryError::InvalidRig(
                "left and right image sizes differ".into(),
            ));
        }
        Ok(Self { left, right, baseline_m })
    }

    /// Principal-point x of the right camera (c'x).
    pub fn right_cx(&self) -> f64 {
        self.right.cx
    }
}

/// 4x4 matrix Q mapping (x, y, d, 1) to homogeneous (X, Y, Z, W).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionMatrix {
    pub q: [[f64; 4]; 4],
}

/// 3D point in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Continuous pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

/// Planar pose: position in meters, heading in radians normalized to
/// (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn identity() -> Self {
        Self { x: 0.0, y: 0.0, theta: 0.0 }
    }
}

/// Normalize an angle to (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = theta % two_pi;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    } else if t > std::f64::consts::PI {
        t -= two_pi;
    }
    t
}

/// Z = f*T/d.
pub fn triangulate_depth(f: f64, baseline_m: f64, d: f64) -> Result<f64, GeometryError> {
    if d <= 0.0 {
        return Err(GeometryError::NonPositiveDisparity(d));
    }
    Ok(f * baseline_m / d)
}

/// d = f*T/z, the inverse of [`triangulate_depth`].
pub fn depth_to_disparity(f: f64, baseline_m: f64, z: f64) -> Result<f64, GeometryError> {
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(f * baseline_m / z)
}

/// Build Q for the rig.
///
/// The last row is (0, 0, 1/Tx, (c'x - cx)/Tx), i.e. the translation
/// axis is taken positive so that W = (d - (cx - c'x))/Tx and the
/// reprojected Z comes out positive for positive disparity.
pub fn build_reprojection_matrix(rig: &StereoRig) -> ReprojectionMatrix {
    let f = rig.left.f;
    let (cx, cy) = (rig.left.cx, rig.left.cy);
    let tx = rig.baseline_m;
    ReprojectionMatrix {
        q: [
            [1.0, 0.0, 0.0, -cx],
            [0.0, 1.0, 0.0, -cy],
            [0.0, 0.0, 0.0, f],
            [0.0, 0.0, 1.0 / tx, (rig.right_cx() - cx) / tx],
        ],
    }
}

/// (X, Y, Z, W) = Q * (x, y, d, 1)^T followed by the homogeneous divide.
pub fn reproject_pixel(
    q: &ReprojectionMatrix,
    x: f64,
    y: f64,
    d: f64,
) -> Result<Point3, GeometryError> {
    if d <= 0.0 {
        return Err(GeometryError::NonPositiveDisparity(d));
    }
    let v = [x, y, d, 1.0];
    let mut out = [0.0f64; 4];
    for (row, o) in q.q.iter().zip(out.iter_mut()) {
        *o = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    }
    let w = out[3];
    if w.abs() < DEGENERATE_W_TOL {
        return Err(GeometryError::DegenerateW(w));
    }
    Ok(Point3::new(out[0] / w, out[1] / w, out[2] / w))
}

/// Pinhole projection: (cx + f*x/z, cy + f*y/z).
pub fn project_point(cam: &CameraIntrinsics, p: &Point3) -> Result<PixelCoord, GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::BehindCamera(p.z));
    }
    Ok(PixelCoord {
        x: cam.cx + cam.f * p.x / p.z,
        y: cam.cy + cam.f * p.y / p.z,
    })
}
