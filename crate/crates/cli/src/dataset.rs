//! Synthetic multi-view datasets: hemisphere cameras, RGB and mask PNGs.

use std::path::{Path, PathBuf};

use gmr_core::image::Image;
use gmr_core::mesh::{load_mesh, normalize_mesh, save_mesh, TriangleMesh, Vec3};
use gmr_core::objective::TargetView;
use gmr_core::render::{load_cameras, render_mesh, save_cameras, Camera, RenderOptions};
use gmr_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_VIEWS: usize = 253;
pub const DEFAULT_RESOLUTION: usize = 256;
pub const DEFAULT_RADIUS: f64 = 3.0;
pub const DEFAULT_FOV_DEGREES: f64 = 50.0;
/// Alpha above this counts as inside the object mask.
pub const MASK_THRESHOLD: f64 = 0.5;

pub const META_FILE: &str = "dataset.json";
pub const CAMERA_FILE: &str = "cameras.json";
pub const TARGET_FILE: &str = "target.ply";

fn golden_angle() -> f64 {
    std::f64::consts::PI * (3.0 - 5f64.sqrt())
}

/// Orthonormal `(a, b)` spanning the plane perpendicular to `up`.
fn tangent_basis(up: &Vec3) -> (Vec3, Vec3) {
    let helper = if up.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = up.cross(&helper).normalize();
    (a, up.cross(&a))
}

/// `n` points of a Fibonacci spiral on the hemisphere of `radius` above the
/// plane perpendicular to `up`. Heights follow `1 - i/n`, so the first point
/// sits on the pole.
pub fn fibonacci_hemisphere(n: usize, radius: f64, up: &Vec3, azimuth_offset: f64) -> Result<Vec<Vec3>> {
    let up = up
        .try_normalize(1e-12)
        .ok_or_else(|| Error::InvalidArgument("up vector must be non-zero".into()))?;
    let (a, b) = tangent_basis(&up);
    Ok((0..n)
        .map(|i| {
            let h = 1.0 - i as f64 / n as f64;
            let r = (1.0 - h * h).max(0.0).sqrt();
            let phi = azimuth_offset + i as f64 * golden_angle();
            (a * (r * phi.cos()) + b * (r * phi.sin()) + up * h) * radius
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSettings {
    pub n_views: usize,
    pub resolution: usize,
    pub radius: f64,
    pub fov_degrees: f64,
    pub up: Vec3,
    pub seed: u64,
    pub background: Vec3,
}

impl Default for ViewSettings {
    fn default() -> Self {
        ViewSettings {
            n_views: DEFAULT_VIEWS,
            resolution: DEFAULT_RESOLUTION,
            radius: DEFAULT_RADIUS,
            fov_degrees: DEFAULT_FOV_DEGREES,
            up: Vec3::z(),
            seed: 0,
            background: Vec3::zeros(),
        }
    }
}

impl ViewSettings {
    /// Random spiral rotation drawn from the seed. Zero for seed 0.
    pub fn azimuth_offset(&self) -> f64 {
        if self.seed == 0 {
            0.0
        } else {
            ChaCha8Rng::seed_from_u64(self.seed).gen_range(0.0..std::f64::consts::TAU)
        }
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.n_views == 0 || self.resolution == 0 {
            return Err(Error::InvalidArgument("n_views and resolution must be positive".into()));
        }
        if !(self.radius > 0.0 && self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::InvalidArgument("radius must be positive and fov within (0, 180)".into()));
        }
        fibonacci_hemisphere(self.n_views, self.radius, &self.up, self.azimuth_offset())?
            .iter()
            .map(|eye| {
                Camera::look_at(eye, &Vec3::zeros(), &self.up, self.fov_degrees.to_radians(), self.resolution, self.resolution)
            })
            .collect()
    }
}

/// Binary object mask from an alpha image.
pub fn mask_from_alpha(alpha: &Image) -> Image {
    let data = alpha.data.iter().map(|&a| if a > MASK_THRESHOLD { 1.0 } else { 0.0 }).collect();
    Image::from_data(alpha.width, alpha.height, alpha.channels, data).expect("same shape")
}

/// Renders ground-truth views of `mesh` in memory, in parallel over cameras.
pub fn render_views(mesh: &TriangleMesh, cameras: &[Camera], options: &RenderOptions) -> Result<Vec<TargetView>> {
    cameras
        .par_iter()
        .map(|camera| {
            let out = render_mesh(mesh, camera, options)?;
            Ok(TargetView {
                camera: *camera,
                rgb: out.rgb,
                mask: mask_from_alpha(&out.alpha),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_views: usize,
    pub width: usize,
    pub height: usize,
    pub radius: f64,
    pub fov_degrees: f64,
    pub up: [f64; 3],
    pub seed: u64,
    pub azimuth_offset: f64,
    pub background: [f64; 3],
    pub source_mesh: String,
    pub normalization_center: [f64; 3],
    pub normalization_scale: f64,
}

#[derive(Debug, Clone)]
pub struct ViewDataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub cameras: Vec<Camera>,
}

impl ViewDataset {
    pub fn rgb_path(&self, view: usize) -> PathBuf {
        rgb_path(&self.root, view)
    }

    pub fn mask_path(&self, view: usize) -> PathBuf {
        mask_path(&self.root, view)
    }

    pub fn target_path(&self) -> PathBuf {
        self.root.join(TARGET_FILE)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let meta_path = root.join(META_FILE);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: e.line(), message: format!("{}: {e}", meta_path.display()) })?;
        let cameras = load_cameras(root.join(CAMERA_FILE))?;
        if cameras.len() != meta.n_views {
            return Err(Error::ShapeMismatch(format!(
                "{} lists {} views but the camera file has {}",
                META_FILE,
                meta.n_views,
                cameras.len()
            )));
        }
        Ok(ViewDataset { root, meta, cameras })
    }

    /// Loads images for the given views; a missing file names its view.
    pub fn load_views(&self, views: &[usize]) -> Result<Vec<TargetView>> {
        views
            .par_iter()
            .map(|&i| {
                let camera = self
                    .cameras
                    .get(i)
                    .ok_or_else(|| Error::InvalidArgument(format!("view {i} is out of range")))?;
                let load = |path: PathBuf, channels: usize, what: &str| -> Result<Image> {
                    if !path.exists() {
                        return Err(Error::InvalidArgument(format!("view {i}: missing {what} file {}", path.display())));
                    }
                    let img = Image::load_png(&path, channels)?;
                    if img.width != camera.width || img.height != camera.height {
                        return Err(Error::ShapeMismatch(format!(
                            "view {i}: {what} is {}x{}, camera expects {}x{}",
                            img.width, img.height, camera.width, camera.height
                        )));
                    }
                    Ok(img)
                };
                Ok(TargetView {
                    camera: *camera,
                    rgb: load(self.rgb_path(i), 3, "rgb")?,
                    mask: load(self.mask_path(i), 1, "mask")?,
                })
            })
            .collect()
    }
}

fn rgb_path(root: &Path, view: usize) -> PathBuf {
    root.join("views").join(format!("rgb_{view:04}.png"))
}

fn mask_path(root: &Path, view: usize) -> PathBuf {
    root.join("views").join(format!("mask_{view:04}.png"))
}

/// Normalizes the mesh, renders every hemisphere view and writes the dataset.
pub fn make_views(mesh_path: &Path, settings: &ViewSettings, out_dir: &Path) -> Result<ViewDataset> {
    let mesh = load_mesh(mesh_path)?;
    make_views_from_mesh(&mesh, &mesh_path.display().to_string(), settings, out_dir)
}

pub fn make_views_from_mesh(mesh: &TriangleMesh, source: &str, settings: &ViewSettings, out_dir: &Path) -> Result<ViewDataset> {
    let (mesh, transform) = normalize_mesh(mesh)?;
    let cameras = settings.cameras()?;
    let options = RenderOptions {
        background: settings.background,
        ..Default::default()
    };
    let views_dir = out_dir.join("views");
    std::fs::create_dir_all(&views_dir).map_err(|e| Error::io(&views_dir, e))?;
    (0..cameras.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        let out = render_mesh(&mesh, &cameras[i], &options)?;
        out.rgb.save_png(rgb_path(out_dir, i))?;
        mask_from_alpha(&out.alpha).save_png(mask_path(out_dir, i))
    })?;
    save_cameras(&cameras, out_dir.join(CAMERA_FILE))?;
    save_mesh(&mesh, out_dir.join(TARGET_FILE))?;
    let meta = DatasetMeta {
        n_views: cameras.len(),
        width: settings.resolution,
        height: settings.resolution,
        radius: settings.radius,
        fov_degrees: settings.fov_degrees,
        up: settings.up.into(),
        seed: settings.seed,
        azimuth_offset: settings.azimuth_offset(),
        background: settings.background.into(),
        source_mesh: source.to_string(),
        normalization_center: transform.center.into(),
        normalization_scale: transform.scale,
    };
    let meta_path = out_dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(ViewDataset {
        root: out_dir.to_path_buf(),
        meta,
        cameras,
    })
}

/// Splits view indices into `(train, held_out)`, holding out every
/// `holdout_every`-th view. Zero disables the hold-out.
pub fn split_views(n: usize, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| holdout_every == 0 || (i + 1) % holdout_every != 0)
}
