use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

/// Pinhole camera; `rotation` and `translation` map world to camera space
/// (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vec3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Camera {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if ortho > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "camera rotation is not orthonormal (error {ortho:e})"
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidArgument(format!(
                "camera needs 0 < near < far, got near {} far {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera image size must be at least 1x1".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target` with vertical field of view `fov_y`
    /// (radians) and the principal point at the image center.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("eye and target coincide".into()))?;
        let mut right = forward.cross(up);
        if right.norm() < 1e-9 {
            // looking along `up`: pick any horizontal reference
            let alt = if forward.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            right = forward.cross(&alt.cross(&forward));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let focal = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Camera::new(
            rotation,
            -(rotation * eye),
            focal,
            focal,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
        )
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct CameraRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(default = "default_near")]
    near: f64,
    #[serde(default = "default_far")]
    far: f64,
}

fn default_near() -> f64 {
    DEFAULT_NEAR
}

fn default_far() -> f64 {
    DEFAULT_FAR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraFile {
    cameras: Vec<CameraRecord>,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = c.rotation;
        CameraRecord {
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            near: c.near,
            far: c.far,
        }
    }
}

/// Writes the camera set as JSON: `{"cameras": [{rotation (row-major 9),
/// translation (3), fx, fy, cx, cy, width, height, near, far}, ...]}`.
pub fn save_cameras(cameras: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CameraFile {
        cameras: cameras.iter().map(CameraRecord::from).collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("camera records serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CameraFile = serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    file.cameras
        .into_iter()
        .map(|r| {
            let cam = Camera {
                rotation: Matrix3::from_row_slice(&r.rotation),
                translation: Vec3::from(r.translation),
                fx: r.fx,
                fy: r.fy,
                cx: r.cx,
                cy: r.cy,
                width: r.width,
                height: r.height,
                near: r.near,
                far: r.far,
            };
            cam.validate()?;
            Ok(cam)
        })
        .collect()
}
