//! Tile-based front-to-back compositing of screen splats, forward and backward.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::{Camera, Splat2D};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::Vec3;

pub const TILE_SIZE: usize = 16;
/// Upper clamp on a single splat's alpha.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions with smaller alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops before transmittance would drop below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Rendered color and silhouette.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// `H x W x 3`, foreground composited over `background`.
    pub rgb: Image,
    /// `H x W x 1` accumulated opacity.
    pub alpha: Image,
    pub background: Vec3,
    /// Number of splats that contributed to each pixel.
    pub contributors: Vec<u32>,
}

impl RenderOutput {
    /// Transmittance left after compositing, per pixel.
    pub fn transmittance(&self) -> Vec<f64> {
        self.alpha.data.iter().map(|a| 1.0 - a).collect()
    }
}

/// Per-splat gradients of a scalar loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatGrad {
    pub mean2d: Vector2<f64>,
    /// `dL/dcov2d`, symmetric, entries treated as independent.
    pub cov2d: Matrix2<f64>,
    pub color: Vec3,
    pub opacity: f64,
}

impl Default for SplatGrad {
    fn default() -> Self {
        SplatGrad {
            mean2d: Vector2::zeros(),
            cov2d: Matrix2::zeros(),
            color: Vec3::zeros(),
            opacity: 0.0,
        }
    }
}

impl std::ops::AddAssign<&SplatGrad> for SplatGrad {
    fn add_assign(&mut self, o: &SplatGrad) {
        self.mean2d += o.mean2d;
        self.cov2d += o.cov2d;
        self.color += o.color;
        self.opacity += o.opacity;
    }
}

/// Splat indices per 16x16 tile, each list ordered by depth then source index.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<usize>>,
}

pub fn bin_splats(splats: &[Splat2D], width: usize, height: usize) -> TileBins {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].source.cmp(&splats[b].source))
    });
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for idx in order {
        let s = &splats[idx];
        // pixel centers sit at integer + 0.5
        let range = |c: f64, extent: usize| -> Option<(usize, usize)> {
            let lo = (c - s.radius - 0.5).ceil().max(0.0);
            let hi = (c + s.radius - 0.5).floor().min(extent as f64 - 1.0);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        let (Some((x0, x1)), Some((y0, y1))) = (range(s.mean2d.x, width), range(s.mean2d.y, height)) else {
            continue;
        };
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                lists[ty * tiles_x + tx].push(idx);
            }
        }
    }
    TileBins {
        tiles_x,
        tiles_y,
        lists,
    }
}

fn check_finite(splats: &[Splat2D]) -> Result<()> {
    for (i, s) in splats.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!(
                "splat {i} (source {}) has non-finite parameters",
                s.source
            )));
        }
    }
    Ok(())
}

/// Falloff `exp(-d^T conic d / 2)` and the offset `d = p - mean`.
#[inline]
fn falloff(s: &Splat2D, p: &Vector2<f64>) -> (f64, Vector2<f64>) {
    let d = p - s.mean2d;
    let power = -0.5 * (s.conic[(0, 0)] * d.x * d.x + 2.0 * s.conic[(0, 1)] * d.x * d.y + s.conic[(1, 1)] * d.y * d.y);
    (power.min(0.0).exp(), d)
}

struct Contribution {
    list_pos: usize,
    alpha: f64,
    falloff: f64,
    clamped: bool,
    offset: Vector2<f64>,
    transmittance: f64,
}

/// Front-to-back walk over one pixel's splat list.
fn composite<F: FnMut(Contribution)>(splats: &[Splat2D], list: &[usize], p: &Vector2<f64>, mut visit: F) -> f64 {
    let mut t = 1.0;
    for (pos, &idx) in list.iter().enumerate() {
        let s = &splats[idx];
        let (g, d) = falloff(s, p);
        let raw = s.opacity * g;
        let alpha = raw.min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            continue;
        }
        let next = t * (1.0 - alpha);
        if next < TRANSMITTANCE_MIN {
            break;
        }
        visit(Contribution {
            list_pos: pos,
            alpha,
            falloff: g,
            clamped: raw > ALPHA_MAX,
            offset: d,
            transmittance: t,
        });
        t = next;
    }
    t
}

fn tile_pixels(bins: &TileBins, tile: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let tx = tile % bins.tiles_x;
    let ty = tile / bins.tiles_x;
    let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width);
    let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height);
    ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
}

pub fn rasterize(splats: &[Splat2D], camera: &Camera, background: &Vec3) -> Result<RenderOutput> {
    check_finite(splats)?;
    let (w, h) = (camera.width, camera.height);
    let bins = bin_splats(splats, w, h);

    let tiles: Vec<Vec<(usize, Vec3, f64, u32)>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            tile_pixels(&bins, tile, w, h)
                .map(|(x, y)| {
                    let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let mut color = Vec3::zeros();
                    let mut count = 0u32;
                    let t = composite(splats, list, &p, |c| {
                        color += splats[list[c.list_pos]].color * (c.alpha * c.transmittance);
                        count += 1;
                    });
                    (y * w + x, color + background * t, 1.0 - t, count)
                })
                .collect()
        })
        .collect();

    let mut rgb = Image::filled(w, h, 3, 0.0);
    let mut alpha = Image::filled(w, h, 1, 0.0);
    let mut contributors = vec![0u32; w * h];
    for tile in tiles {
        for (pix, color, a, count) in tile {
            rgb.data[pix * 3..pix * 3 + 3].copy_from_slice(color.as_slice());
            alpha.data[pix] = a;
            contributors[pix] = count;
        }
    }
    Ok(RenderOutput {
        rgb,
        alpha,
        background: *background,
        contributors,
    })
}

/// Exact gradients of the compositing equation with respect to every splat.
///
/// Per-tile partial sums are reduced in tile order, so the result does not
/// depend on thread scheduling.
pub fn rasterize_backward(
    splats: &[Splat2D],
    camera: &Camera,
    output: &RenderOutput,
    grad_rgb: &Image,
    grad_alpha: &Image,
) -> Result<Vec<SplatGrad>> {
    check_finite(splats)?;
    let (w, h) = (camera.width, camera.height);
    grad_rgb.check_same_shape(&output.rgb)?;
    grad_alpha.check_same_shape(&output.alpha)?;
    if output.rgb.width != w || output.rgb.height != h {
        return Err(Error::ShapeMismatch("render output does not match camera".into()));
    }
    let bins = bin_splats(splats, w, h);
    let bg = output.background;

    let partials: Vec<Vec<SplatGrad>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let mut local = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return local;
            }
            let mut contribs: Vec<Contribution> = Vec::new();
            for (x, y) in tile_pixels(&bins, tile, w, h) {
                let pix = y * w + x;
                let g = Vec3::new(grad_rgb.data[pix * 3], grad_rgb.data[pix * 3 + 1], grad_rgb.data[pix * 3 + 2]);
                let ga = grad_alpha.data[pix];
                if g == Vec3::zeros() && ga == 0.0 {
                    continue;
                }
                let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                contribs.clear();
                let t_final = composite(splats, list, &p, |c| contribs.push(c));
                let grad_t_final = g.dot(&bg) - ga;

                let mut behind = Vec3::zeros();
                for c in contribs.iter().rev() {
                    let s = &splats[list[c.list_pos]];
                    let acc = &mut local[c.list_pos];
                    let weight = c.alpha * c.transmittance;
                    acc.color += g * weight;
                    let one_minus = 1.0 - c.alpha;
                    let grad_alpha_k = c.transmittance * g.dot(&s.color)
                        - g.dot(&behind) / one_minus
                        - grad_t_final * t_final / one_minus;
                    behind += s.color * weight;
                    if c.clamped {
                        continue;
                    }
                    acc.opacity += grad_alpha_k * c.falloff;
                    let grad_g = grad_alpha_k * s.opacity * c.falloff;
                    let qd = s.conic * c.offset;
                    acc.mean2d += qd * grad_g;
                    // dL/dconic = -grad_g/2 d d^T ; dL/dcov = -conic dL/dconic conic
                    acc.cov2d += qd * qd.transpose() * (0.5 * grad_g);
                }
            }
            local
        })
        .collect();

    let mut grads = vec![SplatGrad::default(); splats.len()];
    for (tile, local) in partials.iter().enumerate() {
        for (pos, &idx) in bins.lists[tile].iter().enumerate() {
            grads[idx] += &local[pos];
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(Matrix3::identity(), Vec3::zeros(), 40.0, 40.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    fn splat(mean: (f64, f64), cov: Matrix2<f64>, depth: f64, color: Vec3, opacity: f64, source: usize) -> Splat2D {
        let radius = 3.0 * nalgebra::SymmetricEigen::new(cov).eigenvalues.max().sqrt();
        Splat2D {
            mean2d: Vector2::new(mean.0, mean.1),
            cov2d: cov,
            conic: cov.try_inverse().unwrap(),
            depth,
            color,
            opacity,
            radius,
            source,
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let cam = camera(20, 10);
        let bg = Vec3::new(0.2, 0.4, 0.6);
        let out = rasterize(&[], &cam, &bg).unwrap();
        for p in 0..200 {
            assert_eq!(&out.rgb.data[p * 3..p * 3 + 3], bg.as_slice());
            assert_eq!(out.alpha.data[p], 0.0);
        }
    }

    #[test]
    fn single_white_splat_center() {
        let cam = camera(16, 16);
        let s = splat((5.5, 7.5), Matrix2::identity() * 2.0, 1.0, Vec3::repeat(1.0), 1.0, 0);
        let out = rasterize(&[s], &cam, &Vec3::zeros()).unwrap();
        let pix = 7 * 16 + 5;
        assert!((out.rgb.data[pix * 3] - 0.99).abs() < 1e-15);
        assert!((out.alpha.data[pix] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn red_in_front_of_blue() {
        let cam = camera(16, 16);
        let cov = Matrix2::identity() * 2.0;
        let blue = splat((5.5, 7.5), cov, 2.0, Vec3::z(), 1.0, 0);
        let red = splat((5.5, 7.5), cov, 1.0, Vec3::x(), 1.0, 1);
        let out = rasterize(&[blue, red], &cam, &Vec3::zeros()).unwrap();
        let pix = 7 * 16 + 5;
        let c = &out.rgb.data[pix * 3..pix * 3 + 3];
        assert!((c[0] - 0.99).abs() < 1e-15);
        assert_eq!(c[1], 0.0);
        assert!((c[2] - 0.01 * 0.99).abs() < 1e-15);
    }

    #[test]
    fn depth_ties_break_on_source() {
        let cam = camera(16, 16);
        let cov = Matrix2::identity() * 2.0;
        let a = splat((5.5, 7.5), cov, 1.0, Vec3::x(), 1.0, 3);
        let b = splat((5.5, 7.5), cov, 1.0, Vec3::y(), 1.0, 1);
        let out1 = rasterize(&[a, b], &cam, &Vec3::zeros()).unwrap();
        let out2 = rasterize(&[b, a], &cam, &Vec3::zeros()).unwrap();
        assert_eq!(out1, out2);
        let pix = 7 * 16 + 5;
        assert!(out1.rgb.data[pix * 3 + 1] > out1.rgb.data[pix * 3]);
    }

    #[test]
    fn rejects_non_finite() {
        let cam = camera(8, 8);
        let mut s = splat((2.0, 2.0), Matrix2::identity(), 1.0, Vec3::x(), 1.0, 0);
        s.mean2d.x = f64::NAN;
        assert!(matches!(rasterize(&[s], &cam, &Vec3::zeros()), Err(Error::NonFinite(_))));
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<Splat2D> {
        (0..n)
            .map(|i| {
                let a = Matrix2::from_fn(|_, _| rng.gen_range(-2.0..2.0));
                let cov = a * a.transpose() + Matrix2::identity() * 1.5;
                splat(
                    (rng.gen_range(4.0..size as f64 - 4.0), rng.gen_range(4.0..size as f64 - 4.0)),
                    cov,
                    rng.gen_range(1.0..5.0),
                    Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                    rng.gen_range(0.3..0.95),
                    i,
                )
            })
            .collect()
    }

    #[test]
    fn conservation_and_background_separability() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cam = camera(40, 40);
        let splats = random_scene(&mut rng, 10, 40);
        let a = rasterize(&splats, &cam, &Vec3::zeros()).unwrap();
        let bg = Vec3::new(0.3, 0.9, 0.1);
        let b = rasterize(&splats, &cam, &bg).unwrap();
        for p in 0..cam.width * cam.height {
            let alpha = b.alpha.data[p];
            assert!((0.0..=1.0).contains(&alpha));
            for c in 0..3 {
                let fg_a = a.rgb.data[p * 3 + c] - (1.0 - a.alpha.data[p]) * 0.0;
                let fg_b = b.rgb.data[p * 3 + c] - (1.0 - alpha) * bg[c];
                assert!((fg_a - fg_b).abs() < 1e-6);
            }
        }
        let t = b.transmittance();
        for (a, t) in b.alpha.data.iter().zip(&t) {
            assert!((a + t - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn occlusion_monotone_in_front_opacity() {
        let cam = camera(16, 16);
        let cov = Matrix2::identity() * 3.0;
        let back = splat((8.0, 8.0), cov, 2.0, Vec3::z(), 0.9, 0);
        let mut prev = f64::INFINITY;
        for o in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let front = splat((8.5, 8.0), cov, 1.0, Vec3::x(), o, 1);
            let out = rasterize(&[back, front], &cam, &Vec3::zeros()).unwrap();
            let blue: f64 = (0..256).map(|p| out.rgb.data[p * 3 + 2]).sum();
            assert!(blue <= prev);
            prev = blue;
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = camera(32, 32);
        let splats = random_scene(&mut rng, 6, 32);
        let out = rasterize(&splats, &cam, &Vec3::zeros()).unwrap();
        let grads = rasterize_backward(&splats, &cam, &out, &Image::filled(32, 32, 3, 0.0), &Image::filled(32, 32, 1, 0.0)).unwrap();
        assert!(grads.iter().all(|g| *g == SplatGrad::default()));
    }

    /// Weighted pixel sum used as a scalar loss for finite-difference checks.
    fn weighted(out: &RenderOutput, wr: &Image, wa: &Image) -> f64 {
        out.rgb.data.iter().zip(&wr.data).map(|(a, b)| a * b).sum::<f64>()
            + out.alpha.data.iter().zip(&wa.data).map(|(a, b)| a * b).sum::<f64>()
    }

    #[test]
    fn single_splat_mean_gradient_center_pixel() {
        let cam = camera(16, 16);
        let base = splat((7.8, 8.3), Matrix2::new(3.0, 0.4, 0.4,2.0), 1.0, Vec3::new(0.9, 0.5, 0.1), 0.8, 0);
        let mut wr = Image::filled(16, 16, 3, 0.0);
        let pix = 8 * 16 + 7;
        wr.data[pix * 3] = 1.0;
        let wa = Image::filled(16, 16, 1, 0.0);
        let out = rasterize(&[base], &cam, &Vec3::zeros()).unwrap();
        let g = rasterize_backward(&[base], &cam, &out, &wr, &wa).unwrap()[0];
        let h = 1e-4;
        for a in 0..2 {
            let mut p = base;
            let mut m = base;
            p.mean2d[a] += h;
            m.mean2d[a] -= h;
            let fd = (weighted(&rasterize(&[p], &cam, &Vec3::zeros()).unwrap(), &wr, &wa)
                - weighted(&rasterize(&[m], &cam, &Vec3::zeros()).unwrap(), &wr, &wa))
                / (2.0 * h);
            assert!((fd - g.mean2d[a]).abs() <= 1e-4 * g.mean2d.amax().max(1e-12), "fd {fd} vs {}", g.mean2d[a]);
        }
    }

    #[test]
    fn alpha_gradient_wrt_opacity_at_center() {
        let cam = camera(16, 16);
        let s = splat((8.5, 8.5), Matrix2::identity() * 2.0, 1.0, Vec3::repeat(0.5), 0.6, 0);
        let wr = Image::filled(16, 16, 3, 0.0);
        let mut wa = Image::filled(16, 16, 1, 0.0);
        wa.data[8 * 16 + 8] = 1.0;
        let out = rasterize(&[s], &cam, &Vec3::zeros()).unwrap();
        let g = rasterize_backward(&[s], &cam, &out, &wr, &wa).unwrap()[0];
        assert!((g.opacity - 1.0).abs() < 1e-12);
        let h = 1e-5;
        let mut p = s;
        let mut m = s;
        p.opacity += h;
        m.opacity -= h;
        let fd = (weighted(&rasterize(&[p], &cam, &Vec3::zeros()).unwrap(), &wr, &wa)
            - weighted(&rasterize(&[m], &cam, &Vec3::zeros()).unwrap(), &wr, &wa))
            / (2.0 * h);
        assert!((fd - 1.0).abs() < 1e-6);
    }

    #[test]
    fn random_scene_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let size = 32;
        let cam = camera(size, size);
        let bg = Vec3::new(0.1, 0.2, 0.3);
        for _ in 0..5 {
            let splats = random_scene(&mut rng, 10, size);
            let wr = Image::from_data(size, size, 3, (0..size * size * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let wa = Image::from_data(size, size, 1, (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let out = rasterize(&splats, &cam, &bg).unwrap();
            let grads = rasterize_backward(&splats, &cam, &out, &wr, &wa).unwrap();
            let loss = |s: &[Splat2D]| {
                let mut s = s.to_vec();
                for sp in &mut s {
                    sp.conic = sp.cov2d.try_inverse().unwrap();
                }
                let o = rasterize(&s, &cam, &bg).unwrap();
                (weighted(&o, &wr, &wa), o.contributors)
            };
            let h = 1e-6;
            let mut checked = 0;
            let mut perturb = |i: usize, f: &dyn Fn(&mut Splat2D, f64), analytic: f64, scale: f64| {
                let mut p = splats.clone();
                let mut m = splats.clone();
                f(&mut p[i], h);
                f(&mut m[i], -h);
                let (lp, cp) = loss(&p);
                let (lm, cm) = loss(&m);
                // skip perturbations that change which splats contribute anywhere
                if cp != out.contributors || cm != out.contributors {
                    return;
                }
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - analytic).abs() <= 1e-4 * scale.max(1e-9), "splat {i}: fd {fd} vs {analytic}");
                checked += 1;
            };
            for (i, g) in grads.iter().enumerate() {
                let scale = g.mean2d.amax().max(g.cov2d.amax()).max(g.color.amax()).max(g.opacity.abs());
                perturb(i, &|s, d| s.mean2d.x += d, g.mean2d.x, scale);
                perturb(i, &|s, d| s.mean2d.y += d, g.mean2d.y, scale);
                perturb(i, &|s, d| s.cov2d[(0, 0)] += d, g.cov2d[(0, 0)], scale);
                perturb(i, &|s, d| s.cov2d[(1, 1)] += d, g.cov2d[(1, 1)], scale);
                perturb(i, &|s, d| { s.cov2d[(0, 1)] += d; s.cov2d[(1, 0)] += d; }, 2.0 * g.cov2d[(0, 1)], scale);
                perturb(i, &|s, d| s.opacity += d, g.opacity, scale);
                for c in 0..3 {
                    perturb(i, &|s, d| s.color[c] += d, g.color[c], scale);
                }
            }
            assert!(checked > 50);
        }
    }
}
