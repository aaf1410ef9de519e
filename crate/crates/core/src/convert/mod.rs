//! Mesh-to-Gaussian conversion.
//!
//! Each facet is expressed in a local orthonormal frame anchored at its first
//! vertex. The closed-form covariance of the uniform distribution over the
//! triangle is then lifted back to 3D as a flat Gaussian whose normal-axis
//! variance is `SCALE_Z^2`.

mod backward;
mod export;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::mesh::{TriangleMesh, Vec3};

pub use backward::{convert_backward, facet_backward, facet_covariance};
pub use export::{export_gaussians, load_gaussian_ply, GaussianRecord, EXPORT_OPACITY_CLAMP, SH_C0};

/// Thickness of every facet Gaussian along its normal.
pub const SCALE_Z: f64 = 1e-6;

/// Lower clamp on `lambda1 * lambda2` when computing the area ratio.
pub const KAPPA_EPS: f64 = 1e-14;

/// Edge length / residual below which a facet frame is degenerate.
pub const FRAME_EPS: f64 = 1e-12;

/// Eigenvalue gap below which the in-plane basis is left unrotated.
pub const EIGEN_TIE: f64 = 1e-12;

/// Orthonormal frame on a facet with its corners in local 2D coordinates.
///
/// Corner `i` sits at the origin, corner `j` at `(xj, 0)` and corner `k` at `(xk, yk)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetFrame {
    pub origin: Vec3,
    pub x_axis: Vec3,
    pub y_axis: Vec3,
    pub normal: Vec3,
    pub xj: f64,
    pub xk: f64,
    pub yk: f64,
    pub degenerate: bool,
}

impl FacetFrame {
    /// Columns `[x_axis, y_axis, normal]`.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.x_axis, self.y_axis, self.normal])
    }

    /// World position of local coordinates `(x, y)`.
    pub fn to_world(&self, x: f64, y: f64) -> Vec3 {
        self.origin + self.x_axis * x + self.y_axis * y
    }
}

/// Any unit vector orthogonal to `v` (which must be unit length).
fn any_orthogonal(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (helper - v * v.dot(&helper)).normalize()
}

pub fn build_facet_frame(vi: &Vec3, vj: &Vec3, vk: &Vec3) -> FacetFrame {
    let e1 = vj - vi;
    let e2 = vk - vi;
    let mut degenerate = false;

    let len1 = e1.norm();
    let x_axis = if len1 < FRAME_EPS {
        degenerate = true;
        Vec3::x()
    } else {
        e1 / len1
    };
    let residual = e2 - x_axis * e2.dot(&x_axis);
    let rlen = residual.norm();
    let y_axis = if degenerate || rlen < FRAME_EPS {
        degenerate = true;
        any_orthogonal(&x_axis)
    } else {
        residual / rlen
    };
    let normal = x_axis.cross(&y_axis);

    FacetFrame {
        origin: *vi,
        x_axis,
        y_axis,
        normal,
        xj: e1.dot(&x_axis),
        xk: e2.dot(&x_axis),
        yk: e2.dot(&y_axis),
        degenerate,
    }
}

/// First and second moments of the uniform distribution on a facet, in its local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments2D {
    pub mu: Vector2<f64>,
    /// `(E[x^2], E[xy], E[y^2])`.
    pub second_moments: (f64, f64, f64),
    pub cov2d: Matrix2<f64>,
    pub area: f64,
}

/// Closed-form moments from the barycentric parameterization
/// `p = alpha * v_j + beta * v_k` with `E[alpha] = E[beta] = 1/3`,
/// `E[alpha^2] = E[beta^2] = 1/6` and `E[alpha beta] = 1/12`.
pub fn triangle_moments(frame: &FacetFrame) -> Moments2D {
    let (xj, xk, yk) = (frame.xj, frame.xk, frame.yk);
    let mu = Vector2::new((xj + xk) / 3.0, yk / 3.0);
    let exx = (xj * xj + xj * xk + xk * xk) / 6.0;
    let exy = xj * yk / 12.0 + xk * yk / 6.0;
    let eyy = yk * yk / 6.0;
    let cxy = exy - mu.x * mu.y;
    let cov2d = Matrix2::new(exx - mu.x * mu.x, cxy, cxy, eyy - mu.y * mu.y);
    Moments2D {
        mu,
        second_moments: (exx, exy, eyy),
        cov2d,
        area: 0.5 * xj * yk.abs(),
    }
}

/// Area-matching factor: scales `cov` so its 1-sigma ellipse has area `area`.
pub fn area_scale(area: f64, det: f64) -> f64 {
    area / (std::f64::consts::PI * det.max(KAPPA_EPS).sqrt())
}

/// Eigen-decomposition of a symmetric 2x2 matrix.
///
/// Returns `(lambda1, lambda2, u)` with `lambda1 >= lambda2` and `u` a proper
/// rotation whose first column has a non-negative x component (non-negative y
/// on a tie). Eigenvalues closer than [`EIGEN_TIE`] give `u = I`.
pub fn sym2_eigen(m: &Matrix2<f64>) -> (f64, f64, Matrix2<f64>) {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mean = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (mean + radius, mean - radius);
    if l1 - l2 < EIGEN_TIE {
        return (l1, l2, Matrix2::identity());
    }
    // Two candidate eigenvectors for l1; keep the better conditioned one.
    let c1 = Vector2::new(l1 - c, b);
    let c2 = Vector2::new(b, l1 - a);
    let mut u1 = if c1.norm_squared() >= c2.norm_squared() { c1 } else { c2 }.normalize();
    if u1.x < 0.0 || (u1.x == 0.0 && u1.y < 0.0) {
        u1 = -u1;
    }
    let u = Matrix2::new(u1.x, -u1.y, u1.y, u1.x);
    (l1, l2, u)
}

/// Which 3D covariance construction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariancePath {
    /// Rotate the frame onto the 2D principal axes and scale (validation only).
    Eigen,
    /// Embed the 2D covariance block directly in the facet frame (differentiable path).
    Embed,
}

impl std::str::FromStr for CovariancePath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eigen" => Ok(CovariancePath::Eigen),
            "embed" => Ok(CovariancePath::Embed),
            other => Err(format!("unknown covariance path '{other}' (expected eigen or embed)")),
        }
    }
}

impl std::fmt::Display for CovariancePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovariancePath::Eigen => "eigen",
            CovariancePath::Embed => "embed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvertOptions {
    pub path: CovariancePath,
    /// Area-match the in-plane covariance before embedding (embed path only).
    pub rescale: bool,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions {
            path: CovariancePath::Embed,
            rescale: true,
        }
    }
}

/// One planar Gaussian standing in for a facet.
///
/// `rotation` and `scales` always factor `cov3d = R diag(s^2) R^T` with a
/// proper rotation; on the embed path they come from a non-differentiated
/// eigen-decomposition of the same in-plane block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetGaussian {
    pub mean: Vec3,
    pub cov3d: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub scales: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    pub source_facet: usize,
    pub degenerate: bool,
}

/// Geometry-only part of a facet Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedCovariance {
    pub cov3d: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub scales: Vec3,
}

fn degenerate_lift(frame: &FacetFrame) -> LiftedCovariance {
    LiftedCovariance {
        cov3d: Matrix3::identity() * (SCALE_Z * SCALE_Z),
        rotation: frame.rotation(),
        scales: Vec3::repeat(SCALE_Z),
    }
}

fn eigen_factors(cov2d: &Matrix2<f64>, scale: f64, frame: &FacetFrame) -> (Matrix3<f64>, Vec3) {
    let (l1, l2, u) = sym2_eigen(cov2d);
    let mut lift = Matrix3::identity();
    lift.fixed_view_mut::<2, 2>(0, 0).copy_from(&u);
    let rotation = frame.rotation() * lift;
    let scales = Vec3::new(
        (scale * l1.max(0.0)).sqrt(),
        (scale * l2.max(0.0)).sqrt(),
        SCALE_Z,
    );
    (rotation, scales)
}

/// `R_local diag(kappa lambda1, kappa lambda2, SCALE_Z^2) R_local^T`.
pub fn lift_covariance_eigen(moments: &Moments2D, frame: &FacetFrame) -> LiftedCovariance {
    if frame.degenerate {
        return degenerate_lift(frame);
    }
    let (l1, l2, _) = sym2_eigen(&moments.cov2d);
    let kappa = area_scale(moments.area, l1 * l2);
    let (rotation, scales) = eigen_factors(&moments.cov2d, kappa, frame);
    let s2 = scales.component_mul(&scales);
    let cov3d = rotation * Matrix3::from_diagonal(&s2) * rotation.transpose();
    LiftedCovariance {
        cov3d,
        rotation,
        scales,
    }
}

/// `R_f blockdiag(C, SCALE_Z^2) R_f^T` with `C = kappa cov2d` when `rescale`.
pub fn lift_covariance_embed(moments: &Moments2D, frame: &FacetFrame, rescale: bool) -> LiftedCovariance {
    if frame.degenerate {
        return degenerate_lift(frame);
    }
    let scale = if rescale {
        area_scale(moments.area, moments.cov2d.determinant())
    } else {
        1.0
    };
    let mut block = Matrix3::zeros();
    block
        .fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&(moments.cov2d * scale));
    block[(2, 2)] = SCALE_Z * SCALE_Z;
    let rf = frame.rotation();
    let cov3d = rf * block * rf.transpose();
    let (rotation, scales) = eigen_factors(&moments.cov2d, scale, frame);
    LiftedCovariance {
        cov3d,
        rotation,
        scales,
    }
}

/// Mean of the three corner colors.
pub fn facet_color(ci: &Vec3, cj: &Vec3, ck: &Vec3) -> Vec3 {
    (ci + cj + ck) / 3.0
}

pub fn convert_facet(mesh: &TriangleMesh, f: usize, options: ConvertOptions) -> FacetGaussian {
    let [i, j, k] = mesh.facets()[f];
    let v = mesh.vertices();
    let c = mesh.colors();
    let frame = build_facet_frame(&v[i], &v[j], &v[k]);
    let moments = triangle_moments(&frame);
    let lifted = match options.path {
        CovariancePath::Eigen => lift_covariance_eigen(&moments, &frame),
        CovariancePath::Embed => lift_covariance_embed(&moments, &frame, options.rescale),
    };
    FacetGaussian {
        mean: frame.to_world(moments.mu.x, moments.mu.y),
        cov3d: lifted.cov3d,
        rotation: lifted.rotation,
        scales: lifted.scales,
        opacity: 1.0,
        color: facet_color(&c[i], &c[j], &c[k]),
        source_facet: f,
        degenerate: frame.degenerate,
    }
}

/// One Gaussian per facet, in facet order.
pub fn convert_mesh(mesh: &TriangleMesh, options: ConvertOptions) -> Vec<FacetGaussian> {
    (0..mesh.facet_count())
        .into_par_iter()
        .map(|f| convert_facet(mesh, f, options))
        .collect()
}

/// Symmetric eigenvalues of a 3x3 matrix, ascending.
pub fn sym3_eigenvalues(m: &Matrix3<f64>) -> Vector3<f64> {
    let mut e = nalgebra::SymmetricEigen::new(*m).eigenvalues;
    e.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    e
}
