//! Vertex gradients of the embed-path conversion.
//!
//! The embedded covariance equals the frame-free form
//! `kappa * P + SCALE_Z^2 * n n^T` with `P = (1/36) sum_{p<q} d_pq d_pq^T`
//! over corner differences, `n` the unit normal and `kappa` computed from the
//! area and `det = lambda1 * lambda2 = ((tr P)^2 - tr(P^2)) / 2`. Gradients are
//! taken through that form.

use nalgebra::Matrix3;

use super::{area_scale, ConvertOptions, CovariancePath, FacetGaussian, KAPPA_EPS, SCALE_Z};
use crate::error::{Error, Result};
use crate::mesh::{TriangleMesh, Vec3};

/// Frame-free covariance of a non-degenerate facet; matches the embed path.
pub fn facet_covariance(corners: &[Vec3; 3], rescale: bool) -> Matrix3<f64> {
    let (p, _) = spread(corners);
    let c = (corners[1] - corners[0]).cross(&(corners[2] - corners[0]));
    let n = c.normalize();
    let kappa = if rescale {
        area_scale(0.5 * c.norm(), pair_det(&p))
    } else {
        1.0
    };
    p * kappa + n * n.transpose() * (SCALE_Z * SCALE_Z)
}

fn spread(corners: &[Vec3; 3]) -> (Matrix3<f64>, [(usize, usize, Vec3); 3]) {
    let diffs = [
        (0, 1, corners[0] - corners[1]),
        (0, 2, corners[0] - corners[2]),
        (1, 2, corners[1] - corners[2]),
    ];
    let mut p = Matrix3::zeros();
    for (_, _, d) in &diffs {
        p += d * d.transpose();
    }
    (p / 36.0, diffs)
}

/// Product of the two nonzero eigenvalues of a rank-2 PSD matrix.
fn pair_det(p: &Matrix3<f64>) -> f64 {
    let tr = p.trace();
    0.5 * (tr * tr - (p * p).trace())
}

/// Gradient on the three corners of one facet from gradients on its mean and
/// covariance. `grad_cov` is taken as `dL/dSigma` with all nine entries
/// independent; only its symmetric part matters.
pub fn facet_backward(
    corners: &[Vec3; 3],
    grad_mean: &Vec3,
    grad_cov: &Matrix3<f64>,
    rescale: bool,
    degenerate: bool,
) -> [Vec3; 3] {
    let mean_share = grad_mean / 3.0;
    let mut out = [mean_share; 3];
    if degenerate {
        return out;
    }
    let g = (grad_cov + grad_cov.transpose()) * 0.5;

    let (p, diffs) = spread(corners);
    let e1 = corners[1] - corners[0];
    let e2 = corners[2] - corners[0];
    let c = e1.cross(&e2);
    let cnorm = c.norm();
    let n = c / cnorm;

    let mut grad_p = g;
    let mut grad_c = Vec3::zeros();
    if rescale {
        let area = 0.5 * cnorm;
        let det = pair_det(&p);
        let kappa = area_scale(area, det);
        let grad_kappa = g.dot(&p);
        grad_p = g * kappa;
        let denom = std::f64::consts::PI * det.max(KAPPA_EPS).sqrt();
        let grad_area = grad_kappa / denom;
        grad_c += n * (0.5 * grad_area);
        if det > KAPPA_EPS {
            let dkappa_ddet = -0.5 * kappa / det;
            let ddet_dp = Matrix3::identity() * p.trace() - p;
            grad_p += ddet_dp * (grad_kappa * dkappa_ddet);
        }
    }

    // SCALE_Z^2 n n^T
    let grad_n = g * n * (2.0 * SCALE_Z * SCALE_Z);
    grad_c += (grad_n - n * n.dot(&grad_n)) / cnorm;

    for (a, b, d) in &diffs {
        let gd = grad_p * d * (2.0 / 36.0);
        out[*a] += gd;
        out[*b] -= gd;
    }

    let grad_e1 = e2.cross(&grad_c);
    let grad_e2 = grad_c.cross(&e1);
    out[1] += grad_e1;
    out[2] += grad_e2;
    out[0] -= grad_e1 + grad_e2;
    out
}

/// Accumulates per-Gaussian gradients onto mesh vertices and vertex colors,
/// scattering in facet order.
pub fn convert_backward(
    mesh: &TriangleMesh,
    gaussians: &[FacetGaussian],
    grad_means: &[Vec3],
    grad_cov3ds: &[Matrix3<f64>],
    grad_colors: &[Vec3],
    options: ConvertOptions,
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let m = mesh.facet_count();
    if gaussians.len() != m
        || grad_means.len() != m
        || grad_cov3ds.len() != m
        || grad_colors.len() != m
    {
        return Err(Error::ShapeMismatch(format!(
            "{m} facets but {} gaussians, {} mean grads, {} covariance grads, {} color grads",
            gaussians.len(),
            grad_means.len(),
            grad_cov3ds.len(),
            grad_colors.len()
        )));
    }
    if options.path != CovariancePath::Embed {
        return Err(Error::InvalidArgument(
            "only the embed covariance path is differentiable".into(),
        ));
    }
    let mut grad_v = vec![Vec3::zeros(); mesh.vertex_count()];
    let mut grad_c = vec![Vec3::zeros(); mesh.vertex_count()];
    for (f, idx) in mesh.facets().iter().enumerate() {
        let corners = mesh.facet_vertices(f);
        let gv = facet_backward(
            &corners,
            &grad_means[f],
            &grad_cov3ds[f],
            options.rescale,
            gaussians[f].degenerate,
        );
        let share = grad_colors[f] / 3.0;
        for (slot, &vi) in idx.iter().enumerate() {
            grad_v[vi] += gv[slot];
            grad_c[vi] += share;
        }
    }
    Ok((grad_v, grad_c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::{convert_facet, convert_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn single(corners: [Vec3; 3]) -> TriangleMesh {
        TriangleMesh::new(corners.to_vec(), None, vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn frame_free_form_matches_embed() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let corners = [random_vec(&mut rng), random_vec(&mut rng), random_vec(&mut rng)];
            for rescale in [true, false] {
                let g = convert_facet(&single(corners), 0, ConvertOptions { path: CovariancePath::Embed, rescale });
                let alt = facet_covariance(&corners, rescale);
                assert!((g.cov3d - alt).norm() < 1e-12 * (1.0 + alt.norm()));
            }
        }
    }

    #[test]
    fn mean_gradient_splits_evenly() {
        let corners = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        let gm = Vec3::new(3.0, -6.0, 9.0);
        let out = facet_backward(&corners, &gm, &Matrix3::zeros(), true, false);
        for g in out {
            assert!((g - gm / 3.0).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero() {
        let m = crate::mesh::make_icosphere(80, 1.0);
        let opts = ConvertOptions::default();
        let gs = convert_mesh(&m, opts);
        let n = gs.len();
        let (gv, gc) = convert_backward(&m, &gs, &vec![Vec3::zeros(); n], &vec![Matrix3::zeros(); n], &vec![Vec3::zeros(); n], opts).unwrap();
        assert!(gv.iter().chain(&gc).all(|g| *g == Vec3::zeros()));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let m = crate::mesh::make_icosphere(20, 1.0);
        let opts = ConvertOptions::default();
        let gs = convert_mesh(&m, opts);
        let err = convert_backward(&m, &gs, &[Vec3::zeros()], &vec![Matrix3::zeros(); 20], &vec![Vec3::zeros(); 20], opts);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
        let err = convert_backward(&m, &gs, &vec![Vec3::zeros(); 20], &vec![Matrix3::zeros(); 20], &vec![Vec3::zeros(); 20], ConvertOptions { path: CovariancePath::Eigen, rescale: true });
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    /// Scalar objective `<gm, mean> + <gs, cov3d> + <gc, color>` evaluated through
    /// the frame-based forward conversion.
    fn objective(corners: &[Vec3; 3], colors: &[Vec3; 3], gm: &Vec3, gs: &Matrix3<f64>, gc: &Vec3, rescale: bool) -> f64 {
        let m = TriangleMesh::new(corners.to_vec(), Some(colors.to_vec()), vec![[0, 1, 2]]).unwrap();
        let g = convert_facet(&m, 0, ConvertOptions { path: CovariancePath::Embed, rescale });
        gm.dot(&g.mean) + gs.component_mul(&g.cov3d).sum() + gc.dot(&g.color)
    }

    #[test]
    fn matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let h = 1e-5;
        for trial in 0..50 {
            let corners = [random_vec(&mut rng), random_vec(&mut rng), random_vec(&mut rng)];
            let colors = [random_vec(&mut rng).abs(), random_vec(&mut rng).abs(), random_vec(&mut rng).abs()];
            let gm = random_vec(&mut rng);
            let gc = random_vec(&mut rng);
            let mut gs = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            // large normal-direction pull so the s_z term is exercised too
            if trial % 2 == 0 {
                gs *= 1e3;
            }
            let rescale = trial % 3 != 0;
            let mesh = TriangleMesh::new(corners.to_vec(), Some(colors.to_vec()), vec![[0, 1, 2]]).unwrap();
            let opts = ConvertOptions { path: CovariancePath::Embed, rescale };
            let gauss = convert_mesh(&mesh, opts);
            let (gv, gcol) = convert_backward(&mesh, &gauss, &[gm], &[gs], &[gc], opts).unwrap();

            let scale = gv.iter().map(|g| g.amax()).fold(0.0, f64::max);
            for vi in 0..3 {
                for a in 0..3 {
                    let mut plus = corners;
                    let mut minus = corners;
                    plus[vi][a] += h;
                    minus[vi][a] -= h;
                    let fd = (objective(&plus, &colors, &gm, &gs, &gc, rescale)
                        - objective(&minus, &colors, &gm, &gs, &gc, rescale))
                        / (2.0 * h);
                    let err = (fd - gv[vi][a]).abs();
                    assert!(err <= 1e-5 * scale.max(1e-12), "trial {trial} v{vi}[{a}]: fd {fd} analytic {}", gv[vi][a]);
                }
                assert!((gcol[vi] - gc / 3.0).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn accumulates_over_shared_vertices() {
        let m = crate::mesh::make_octahedron(1.0);
        let opts = ConvertOptions::default();
        let gs = convert_mesh(&m, opts);
        let gm = vec![Vec3::new(0.0, 0.0, 3.0); 8];
        let (gv, gc) = convert_backward(&m, &gs, &gm, &[Matrix3::zeros(); 8], &[Vec3::x() * 3.0; 8], opts).unwrap();
        // every octahedron vertex touches four facets
        for (g, c) in gv.iter().zip(&gc) {
            assert!((g - Vec3::new(0.0, 0.0, 4.0)).norm() < 1e-12);
            assert!((c - Vec3::x() * 4.0).norm() < 1e-12);
        }
    }
}
