//! EWA projection of 3D Gaussians to screen-space splats.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2};

use super::Camera;
use crate::mesh::Vec3;

/// Isotropic variance (pixels^2) added to every projected footprint.
pub const LOW_PASS: f64 = 0.3;

/// Footprint extent used for culling and tile binning, in standard deviations.
pub const SIGMA_EXTENT: f64 = 3.0;

/// A Gaussian's footprint on the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    /// Screen covariance including the low-pass dilation.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: Vec3,
    pub opacity: f64,
    /// Half-width of the square bounding the `SIGMA_EXTENT` footprint, pixels.
    pub radius: f64,
    pub source: usize,
}

impl Splat2D {
    pub fn is_finite(&self) -> bool {
        self.mean2d.iter().all(|v| v.is_finite())
            && self.conic.iter().all(|v| v.is_finite())
            && self.cov2d.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.depth.is_finite()
            && self.radius.is_finite()
    }
}

/// Affine Jacobian of the perspective projection at camera-space point `t`.
pub fn projection_jacobian(camera: &Camera, t: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * t.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * t.y * iz * iz,
    )
}

/// Largest eigenvalue of a symmetric 2x2 matrix.
fn max_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let d = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    mean + (d * d + m[(0, 1)] * m[(1, 0)]).max(0.0).sqrt()
}

/// Projects one Gaussian; `None` when its mean lies outside `(near, far)` or
/// its footprint misses the image entirely.
pub fn project_gaussian(
    mean: &Vec3,
    cov3d: &Matrix3<f64>,
    color: &Vec3,
    opacity: f64,
    source: usize,
    camera: &Camera,
) -> Option<Splat2D> {
    let t = camera.world_to_camera(mean);
    if !(t.z > camera.near && t.z < camera.far) {
        return None;
    }
    let j = projection_jacobian(camera, &t);
    let m = j * camera.rotation;
    let cov2d = m * cov3d * m.transpose() + Matrix2::identity() * LOW_PASS;
    let conic = cov2d.try_inverse()?;
    let mean2d = Vector2::new(camera.fx * t.x / t.z + camera.cx, camera.fy * t.y / t.z + camera.cy);
    let radius = SIGMA_EXTENT * max_eigenvalue(&cov2d).sqrt();
    if mean2d.x + radius < 0.0
        || mean2d.x - radius > camera.width as f64
        || mean2d.y + radius < 0.0
        || mean2d.y - radius > camera.height as f64
    {
        return None;
    }
    Some(Splat2D {
        mean2d,
        cov2d,
        conic,
        depth: t.z,
        color: *color,
        opacity,
        radius,
        source,
    })
}

/// Gradients of `(mean2d, cov2d)` pulled back to the 3D mean and covariance.
///
/// `grad_cov2d` and the returned covariance gradient are `dL/dSigma` with all
/// entries independent (symmetric for symmetric inputs).
pub fn project_backward(
    mean: &Vec3,
    cov3d: &Matrix3<f64>,
    camera: &Camera,
    grad_mean2d: &Vector2<f64>,
    grad_cov2d: &Matrix2<f64>,
) -> (Vec3, Matrix3<f64>) {
    let w = camera.rotation;
    let t = camera.world_to_camera(mean);
    let j = projection_jacobian(camera, &t);
    let m = j * w;
    let g = (grad_cov2d + grad_cov2d.transpose()) * 0.5;

    let grad_cov3d = m.transpose() * g * m;

    // cov2d = M S M^T  =>  dL/dM = 2 G M S, then dL/dJ = dL/dM W^T
    let grad_m = g * m * cov3d * 2.0;
    let grad_j = grad_m * w.transpose();

    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;

    let mut grad_t = Vec3::zeros();
    // mean2d
    grad_t.x += grad_mean2d.x * fx * iz;
    grad_t.y += grad_mean2d.y * fy * iz;
    grad_t.z += -grad_mean2d.x * fx * t.x * iz2 - grad_mean2d.y * fy * t.y * iz2;
    // J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]
    grad_t.z += -grad_j[(0, 0)] * fx * iz2;
    grad_t.x += -grad_j[(0, 2)] * fx * iz2;
    grad_t.z += grad_j[(0, 2)] * 2.0 * fx * t.x * iz3;
    grad_t.z += -grad_j[(1, 1)] * fy * iz2;
    grad_t.y += -grad_j[(1, 2)] * fy * iz2;
    grad_t.z += grad_j[(1, 2)] * 2.0 * fy * t.y * iz3;

    (w.transpose() * grad_t, grad_cov3d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis_camera() -> Camera {
        Camera::new(Matrix3::identity(), Vec3::zeros(), 50.0, 60.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn on_axis_projection() {
        let cam = axis_camera();
        let t = Vec3::new(0.0, 0.0, 4.0);
        let j = projection_jacobian(&cam, &t);
        assert_eq!(j, Matrix2x3::new(12.5, 0.0, 0.0, 0.0, 15.0, 0.0));
        let sigma2 = 0.01;
        let s = project_gaussian(&t, &(Matrix3::identity() * sigma2), &Vec3::zeros(), 1.0, 0, &cam).unwrap();
        assert_eq!(s.mean2d, Vector2::new(32.0, 24.0));
        let expected = Matrix2::new(sigma2 * 50.0 * 50.0 / 16.0 + LOW_PASS, 0.0, 0.0, sigma2 * 60.0 * 60.0 / 16.0 + LOW_PASS);
        assert!((s.cov2d - expected).norm() < 1e-12);
        assert_eq!(s.depth, 4.0);
    }

    #[test]
    fn culls_behind_and_offscreen() {
        let cam = axis_camera();
        let cov = Matrix3::identity() * 1e-4;
        assert!(project_gaussian(&Vec3::new(0.0, 0.0, -1.0), &cov, &Vec3::zeros(), 1.0, 0, &cam).is_none());
        assert!(project_gaussian(&Vec3::new(0.0, 0.0, 0.001), &cov, &Vec3::zeros(), 1.0, 0, &cam).is_none());
        assert!(project_gaussian(&Vec3::new(0.0, 0.0, 1000.0), &cov, &Vec3::zeros(), 1.0, 0, &cam).is_none());
        assert!(project_gaussian(&Vec3::new(10.0, 0.0, 2.0), &cov, &Vec3::zeros(), 1.0, 0, &cam).is_none());
    }

    #[test]
    fn on_axis_mean_gradient() {
        let cam = axis_camera();
        let mean = Vec3::new(0.0, 0.0, 4.0);
        let (gm, gc) = project_backward(&mean, &(Matrix3::identity() * 0.01), &cam, &Vector2::new(1.0, 0.0), &Matrix2::zeros());
        assert!((gm - Vec3::new(50.0 / 4.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(gc, Matrix3::zeros());
        let (gm, gc) = project_backward(&mean, &Matrix3::identity(), &cam, &Vector2::zeros(), &Matrix2::zeros());
        assert_eq!(gm, Vec3::zeros());
        assert_eq!(gc, Matrix3::zeros());
    }

    fn random_spd(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
        a * a.transpose() + Matrix3::identity() * 0.01
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-6;
        for _ in 0..30 {
            let eye = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(2.0..4.0));
            let cam = Camera::look_at(&eye, &Vec3::zeros(), &Vec3::z(), 0.9, 64, 64).unwrap();
            let mean = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let cov = random_spd(&mut rng);
            let gm2 = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let gc2 = {
                let a = Matrix2::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                a + a.transpose()
            };
            let objective = |mean: &Vec3, cov: &Matrix3<f64>| {
                let s = project_gaussian(mean, cov, &Vec3::zeros(), 1.0, 0, &cam).unwrap();
                gm2.dot(&s.mean2d) + gc2.component_mul(&s.cov2d).sum()
            };
            let (gmean, gcov) = project_backward(&mean, &cov, &cam, &gm2, &gc2);
            let scale = gmean.amax().max(gcov.amax());
            for a in 0..3 {
                let mut p = mean;
                let mut m = mean;
                p[a] += h;
                m[a] -= h;
                let fd = (objective(&p, &cov) - objective(&m, &cov)) / (2.0 * h);
                assert!((fd - gmean[a]).abs() <= 1e-4 * scale, "mean[{a}] fd {fd} vs {}", gmean[a]);
            }
            for r in 0..3 {
                for c in r..3 {
                    let mut p = cov;
                    let mut m = cov;
                    p[(r, c)] += h;
                    m[(r, c)] -= h;
                    if r != c {
                        p[(c, r)] += h;
                        m[(c, r)] -= h;
                    }
                    let fd = (objective(&mean, &p) - objective(&mean, &m)) / (2.0 * h);
                    let analytic = if r == c { gcov[(r, c)] } else { gcov[(r, c)] + gcov[(c, r)] };
                    assert!((fd - analytic).abs() <= 1e-4 * scale, "cov[{r}{c}] fd {fd} vs {analytic}");
                }
            }
        }
    }
}
