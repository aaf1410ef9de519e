//! Differentiable splatting of facet Gaussians.

mod camera;
mod project;
mod raster;

use nalgebra::Matrix3;

pub use camera::{load_cameras, save_cameras, Camera, DEFAULT_FAR, DEFAULT_NEAR};
pub use project::{project_backward, project_gaussian, projection_jacobian, Splat2D, LOW_PASS, SIGMA_EXTENT};
pub use raster::{
    bin_splats, rasterize, rasterize_backward, RenderOutput, SplatGrad, TileBins, ALPHA_MAX, ALPHA_MIN, TILE_SIZE,
    TRANSMITTANCE_MIN,
};

use crate::convert::{convert_backward, convert_mesh, ConvertOptions, FacetGaussian};
use crate::error::Result;
use crate::image::Image;
use crate::mesh::{TriangleMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: Vec3,
    pub convert: ConvertOptions,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            background: Vec3::zeros(),
            convert: ConvertOptions::default(),
        }
    }
}

/// Intermediate state kept from a forward render for its backward pass.
#[derive(Debug, Clone)]
pub struct RenderContext {
    pub gaussians: Vec<FacetGaussian>,
    pub splats: Vec<Splat2D>,
    pub output: RenderOutput,
}

pub fn project_all(gaussians: &[FacetGaussian], camera: &Camera) -> Vec<Splat2D> {
    gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(&g.mean, &g.cov3d, &g.color, g.opacity, i, camera))
        .collect()
}

/// Renders a list of Gaussians from one camera.
pub fn render_gaussians(gaussians: &[FacetGaussian], camera: &Camera, background: &Vec3) -> Result<RenderOutput> {
    rasterize(&project_all(gaussians, camera), camera, background)
}

/// Mesh to Gaussians to splats to image.
pub fn render_mesh(mesh: &TriangleMesh, camera: &Camera, options: &RenderOptions) -> Result<RenderOutput> {
    Ok(render_mesh_with_context(mesh, camera, options)?.output)
}

pub fn render_mesh_with_context(mesh: &TriangleMesh, camera: &Camera, options: &RenderOptions) -> Result<RenderContext> {
    let gaussians = convert_mesh(mesh, options.convert);
    let splats = project_all(&gaussians, camera);
    let output = rasterize(&splats, camera, &options.background)?;
    Ok(RenderContext {
        gaussians,
        splats,
        output,
    })
}

/// Pulls image gradients back to vertex positions and vertex colors.
pub fn render_mesh_backward(
    mesh: &TriangleMesh,
    camera: &Camera,
    options: &RenderOptions,
    context: &RenderContext,
    grad_rgb: &Image,
    grad_alpha: &Image,
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let splat_grads = rasterize_backward(&context.splats, camera, &context.output, grad_rgb, grad_alpha)?;
    let n = context.gaussians.len();
    let mut grad_means = vec![Vec3::zeros(); n];
    let mut grad_covs = vec![Matrix3::zeros(); n];
    let mut grad_colors = vec![Vec3::zeros(); n];
    for (splat, g) in context.splats.iter().zip(&splat_grads) {
        let i = splat.source;
        let gauss = &context.gaussians[i];
        let (gm, gc) = project_backward(&gauss.mean, &gauss.cov3d, camera, &g.mean2d, &g.cov2d);
        grad_means[i] = gm;
        grad_covs[i] = gc;
        grad_colors[i] = g.color;
    }
    convert_backward(mesh, &context.gaussians, &grad_means, &grad_covs, &grad_colors, options.convert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_icosphere, make_octahedron};

    #[test]
    fn icosphere_fills_projected_disk() {
        let cam = Camera::look_at(&Vec3::new(0.0, -3.0, 0.5), &Vec3::zeros(), &Vec3::z(), 0.8, 64, 64).unwrap();
        let mesh = make_icosphere(1280, 1.0);
        let out = render_mesh(&mesh, &cam, &RenderOptions::default()).unwrap();
        let dist = cam.position().norm();
        let radius_px = cam.fx * (1.0 / (dist * dist - 1.0).sqrt());
        let mut inside = 0;
        for y in 0..64 {
            for x in 0..64 {
                let r = ((x as f64 + 0.5 - cam.cx).powi(2) + (y as f64 + 0.5 - cam.cy).powi(2)).sqrt();
                if r < radius_px - 2.0 {
                    inside += 1;
                    assert!(out.alpha.data[y * 64 + x] > 0.9, "pixel ({x},{y}) alpha {}", out.alpha.data[y * 64 + x]);
                }
                if r > radius_px + 3.0 {
                    assert!(out.alpha.data[y * 64 + x] < 0.1);
                }
            }
        }
        assert!(inside > 500);
    }

    #[test]
    fn mesh_behind_camera_is_background() {
        let cam = Camera::look_at(&Vec3::new(0.0, -3.0, 0.0), &Vec3::new(0.0, -6.0, 0.0), &Vec3::z(), 0.8, 32, 32).unwrap();
        let bg = Vec3::new(0.1, 0.2, 0.3);
        let out = render_mesh(&make_octahedron(1.0), &cam, &RenderOptions { background: bg, ..Default::default() }).unwrap();
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
        assert!(out.rgb.data.chunks(3).all(|c| c == bg.as_slice()));
    }

    #[test]
    fn rendering_is_deterministic() {
        let cam = Camera::look_at(&Vec3::new(1.0, -3.0, 1.0), &Vec3::zeros(), &Vec3::z(), 0.8, 48, 48).unwrap();
        let mesh = make_icosphere(320, 1.0);
        let a = render_mesh(&mesh, &cam, &RenderOptions::default()).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| render_mesh(&mesh, &cam, &RenderOptions::default()).unwrap());
        assert_eq!(a, b);
    }
}
