//! Surface and image metrics.
//!
//! Chamfer distance is reported in squared world units. Normal consistency is
//! the mean absolute cosine between normals at nearest-sample pairs.

use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::{PointDistance, RTree};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::{sample_surface, SurfaceSamples, TriangleMesh};

pub const DEFAULT_SAMPLES: usize = 100_000;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

type Tree = RTree<GeomWithData<[f64; 3], usize>>;

fn tree(samples: &SurfaceSamples) -> Tree {
    let pts = samples.points.iter().enumerate().map(|(i, p)| GeomWithData::new([p.x, p.y, p.z], i)).collect();
    Tree::bulk_load(pts)
}

/// For every point of `from`, squared distance and |cos| to its nearest
/// neighbour in `to`. Summed in input order.
fn directed(from: &SurfaceSamples, to: &SurfaceSamples, to_tree: &Tree) -> (f64, f64) {
    let parts: Vec<(f64, f64)> = from
        .points
        .par_chunks(4096)
        .zip(from.normals.par_chunks(4096))
        .map(|(pts, nrm)| {
            let mut d = 0.0;
            let mut c = 0.0;
            for (p, n) in pts.iter().zip(nrm) {
                let q = [p.x, p.y, p.z];
                let nn = to_tree.nearest_neighbor(&q).expect("sample sets are non-empty");
                d += nn.distance_2(&q);
                c += n.dot(&to.normals[nn.data]).abs();
            }
            (d, c)
        })
        .collect();
    let n = from.len() as f64;
    let (d, c) = parts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    (d / n, c / n)
}

/// Chamfer distance and normal consistency from one shared pair of sample
/// sets. Both meshes are sampled with the same seed.
pub fn geometric_metrics(pred: &TriangleMesh, gt: &TriangleMesh, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let a = sample_surface(pred, n_samples, seed)?;
    let b = sample_surface(gt, n_samples, seed)?;
    let (ta, tb) = rayon::join(|| tree(&a), || tree(&b));
    let (dab, cab) = directed(&a, &b, &tb);
    let (dba, cba) = directed(&b, &a, &ta);
    Ok((0.5 * (dab + dba), 0.5 * (cab + cba)))
}

/// Symmetric mean squared nearest-neighbour distance between surface samples.
pub fn chamfer_distance(pred: &TriangleMesh, gt: &TriangleMesh, n_samples: usize, seed: u64) -> Result<f64> {
    geometric_metrics(pred, gt, n_samples, seed).map(|m| m.0)
}

/// Symmetric mean |cos| between normals at nearest-sample correspondences.
pub fn normal_consistency(pred: &TriangleMesh, gt: &TriangleMesh, n_samples: usize, seed: u64) -> Result<f64> {
    geometric_metrics(pred, gt, n_samples, seed).map(|m| m.1)
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *w = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable valid-region filter of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), dynamic range
/// 1, averaged over the valid region and then over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for c in 0..a.channels {
        let x = a.channel(c).data;
        let y = b.channel(c).data;
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &k));
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cov = sxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / a.channels as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cd: f64,
    pub nc: f64,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn psnr_mean(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn ssim_mean(&self) -> f64 {
        mean(&self.ssim)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_cube, make_icosphere, normalize_mesh, Vec3};
    use nalgebra::Matrix3;

    #[test]
    fn chamfer_self_and_symmetry() {
        let s = make_icosphere(1280, 1.0);
        assert_eq!(chamfer_distance(&s, &s, 5000, 3).unwrap(), 0.0);
        let t = s.transformed(&Matrix3::identity(), &Vec3::new(0.05, 0.0, 0.0));
        let ab = chamfer_distance(&s, &t, 5000, 3).unwrap();
        let ba = chamfer_distance(&t, &s, 5000, 3).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }

    #[test]
    fn chamfer_radius_offset() {
        let a = make_icosphere(5120, 1.0);
        let b = make_icosphere(5120, 1.1);
        let cd = chamfer_distance(&a, &b, 20_000, 1).unwrap();
        assert!((cd - 0.01).abs() < 0.002, "{cd}");
    }

    #[test]
    fn normal_consistency_properties() {
        let s = make_icosphere(5120, 1.0);
        let other = make_icosphere(5120, 1.0);
        let nc = normal_consistency(&s, &other, 20_000, 9).unwrap();
        assert!(nc > 0.99 && nc <= 1.0);
        // flipping reorders facet corners, which moves individual samples
        let flipped = normal_consistency(&s.flipped(), &other, 20_000, 9).unwrap();
        assert!((nc - flipped).abs() < 1e-3);
        let shifted = s.transformed(&Matrix3::identity(), &Vec3::new(1e-3, 0.0, 0.0));
        let a = normal_consistency(&shifted, &other, 20_000, 9).unwrap();
        let b = normal_consistency(&shifted.flipped(), &other.flipped(), 20_000, 9).unwrap();
        assert!(a > 0.99 && (a - b).abs() < 1e-3);
        let (cube, _) = normalize_mesh(&make_cube(8, 1.0)).unwrap();
        let (sphere, _) = normalize_mesh(&s).unwrap();
        assert!(normal_consistency(&sphere, &cube, 20_000, 9).unwrap() < nc);
    }

    #[test]
    fn zero_area_is_an_error() {
        let flat = TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0], None, vec![[0, 1, 2]]).unwrap();
        let s = make_icosphere(20, 1.0);
        assert!(chamfer_distance(&flat, &s, 100, 0).is_err());
        assert!(chamfer_distance(&s, &s, 0, 0).is_err());
    }

    #[test]
    fn psnr_values() {
        let a = Image::filled(4, 4, 3, 0.5);
        let b = Image::filled(4, 4, 3, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(psnr(&Image::filled(4, 4, 3, 0.0), &Image::filled(4, 4, 3, 1.0)).unwrap(), 0.0);
        assert!(psnr(&a, &Image::filled(4, 5, 3, 0.0)).is_err());
    }

    fn pattern(w: usize, h: usize) -> Image {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                0.5 + 0.4 * (0.37 * x).sin() * (0.23 * y + 0.5).cos()
            })
            .collect();
        Image::from_data(w, h, 1, data).unwrap()
    }

    #[test]
    fn ssim_values() {
        let a = pattern(24, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = Image::from_data(24, 20, 1, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &neg).unwrap() < 0.0);
        assert_eq!(ssim(&a, &neg).unwrap(), ssim(&neg, &a).unwrap());

        let b = Image::from_data(
            24,
            20,
            1,
            (0..480)
                .map(|i| {
                    let (x, y) = ((i % 24) as f64, (i / 24) as f64);
                    0.5 + 0.3 * (0.21 * x + 0.3).cos() * (0.31 * y).sin() + 0.1 * (0.11 * x * y / 10.0).sin()
                })
                .collect(),
        )
        .unwrap();
        // reference values from scikit-image (gaussian window, population covariance)
        assert!((ssim(&a, &b).unwrap() - 0.18444019886064678).abs() < 1e-10);
        assert!((ssim(&a, &neg).unwrap() + 0.7617736773940951).abs() < 1e-10);

        let c5 = Image::filled(16, 16, 3, 0.5);
        let c6 = Image::filled(16, 16, 3, 0.6);
        let c1 = 1e-4;
        let expected = (2.0 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
        assert!((ssim(&c5, &c6).unwrap() - expected).abs() < 1e-12);
        assert!(ssim(&Image::filled(10, 10, 1, 0.0), &Image::filled(10, 10, 1, 0.0)).is_err());
    }
}
