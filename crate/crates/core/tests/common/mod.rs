#![allow(dead_code)]

use gmr_core::image::Image;
use gmr_core::mesh::{TriangleMesh, Vec3};
use gmr_core::render::{render_mesh, render_mesh_backward, render_mesh_with_context, Camera, RenderOptions};

/// Largest relative error of the end-to-end vertex gradient against central
/// differences, for the loss `<w_rgb, rgb> + <w_alpha, alpha>`.
///
/// Pixels whose contributor count changes under any of the perturbations sit
/// on a clamp or culling discontinuity and get zero weight.
pub fn end_to_end_gradient_error(
    mesh: &TriangleMesh,
    camera: &Camera,
    options: &RenderOptions,
    w_rgb: &Image,
    w_alpha: &Image,
    h: f64,
) -> (f64, usize) {
    let base = render_mesh(mesh, camera, options).unwrap();
    let mut masked = vec![false; camera.width * camera.height];
    let mut renders = Vec::new();
    for v in 0..mesh.vertex_count() {
        for a in 0..3 {
            let mut pair = Vec::new();
            for sign in [1.0, -1.0] {
                let mut verts = mesh.vertices().to_vec();
                verts[v][a] += sign * h;
                let out = render_mesh(&mesh.with_vertices(verts).unwrap(), camera, options).unwrap();
                for (p, (c0, c1)) in base.contributors.iter().zip(&out.contributors).enumerate() {
                    if c0 != c1 {
                        masked[p] = true;
                    }
                }
                pair.push(out);
            }
            renders.push(pair);
        }
    }
    let mut wr = w_rgb.clone();
    let mut wa = w_alpha.clone();
    for (p, &m) in masked.iter().enumerate() {
        if m {
            wa.data[p] = 0.0;
            for c in 0..3 {
                wr.data[p * 3 + c] = 0.0;
            }
        }
    }
    let dot = |img: &Image, w: &Image| img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>();
    let ctx = render_mesh_with_context(mesh, camera, options).unwrap();
    let (grad, _) = render_mesh_backward(mesh, camera, options, &ctx, &wr, &wa).unwrap();
    let scale = grad.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for v in 0..mesh.vertex_count() {
        for a in 0..3 {
            let pair = &renders[v * 3 + a];
            let lp = dot(&pair[0].rgb, &wr) + dot(&pair[0].alpha, &wa);
            let lm = dot(&pair[1].rgb, &wr) + dot(&pair[1].alpha, &wa);
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - grad[v][a]).abs() / scale);
        }
    }
    (worst, masked.iter().filter(|&&m| m).count())
}

pub fn random_weights(width: usize, height: usize, channels: usize, seed: u64) -> Image {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Image::from_data(width, height, channels, data).unwrap()
}

pub fn colored(mesh: &TriangleMesh, seed: u64) -> TriangleMesh {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let colors = (0..mesh.vertex_count())
        .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
        .collect();
    mesh.with_colors(colors).unwrap()
}
