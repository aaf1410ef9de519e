//! The small inverse-rendering task used for end-to-end checks: a colored,
//! subdivided cube seen from 20 hemisphere views at 64x64, fitted from a
//! 1280-facet sphere.

use gmr_core::mesh::{make_cube, make_icosphere, normalize_mesh, TriangleMesh, Vec3};
use gmr_core::objective::TargetView;
use gmr_core::optimize::FitConfig;
use gmr_core::render::RenderOptions;
use gmr_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{render_views, ViewSettings};

pub const VIEWS: usize = 20;
pub const RESOLUTION: usize = 64;
/// Wide enough that a sphere shifted by 1.5 stays in frame.
pub const FOV_DEGREES: f64 = 90.0;
pub const INIT_FACETS: usize = 1280;
pub const ITERATIONS: usize = 2000;
pub const LR_POSITION: f64 = 1e-2;

/// Normalized cube with vertex colors that vary linearly with position.
pub fn target() -> TriangleMesh {
    let (cube, _) = normalize_mesh(&make_cube(4, 1.0)).expect("cube is not degenerate");
    let colors = cube
        .vertices()
        .iter()
        .map(|v| (v * 0.866 + Vec3::repeat(0.5)).map(|x| x.clamp(0.0, 1.0)))
        .collect();
    cube.with_colors(colors).expect("one color per vertex")
}

pub fn view_settings() -> ViewSettings {
    ViewSettings {
        n_views: VIEWS,
        resolution: RESOLUTION,
        fov_degrees: FOV_DEGREES,
        ..Default::default()
    }
}

pub fn views(target: &TriangleMesh) -> Result<Vec<TargetView>> {
    render_views(target, &view_settings().cameras()?, &RenderOptions::default())
}

pub fn initial_mesh() -> TriangleMesh {
    make_icosphere(INIT_FACETS, 1.0)
}

pub fn fit_config(batch_size: usize) -> FitConfig {
    FitConfig {
        iterations: ITERATIONS,
        batch_size,
        lr_position: LR_POSITION,
        ..Default::default()
    }
}

/// Seeded uniform unit vector.
pub fn random_direction(seed: u64) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}
