//! Image and mesh-regularization losses with analytic gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::{TriangleMesh, Vec3};
use crate::render::{render_mesh_backward, render_mesh_with_context, Camera, RenderOptions};

/// Alpha is clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub color: f64,
    pub silhouette: f64,
    pub edge: f64,
    pub laplacian: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            color: 1.0,
            silhouette: 1.0,
            edge: 0.1,
            laplacian: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("color", self.color),
            ("silhouette", self.silhouette),
            ("edge", self.edge),
            ("laplacian", self.laplacian),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "loss weight {name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub color: f64,
    pub silhouette: f64,
    pub edge: f64,
    pub laplacian: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Image terms averaged over the batch; regularizers once.
    pub terms: LossTerms,
    pub total: f64,
    /// `(color, silhouette)` for each view in batch order.
    pub per_view: Vec<(f64, f64)>,
}

/// Mean squared error over all pixels and channels, with `dL/drendered`.
pub fn color_loss(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    rendered.check_same_shape(target)?;
    let n = rendered.data.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = rendered.clone();
    for (g, (r, t)) in grad.data.iter_mut().zip(rendered.data.iter().zip(&target.data)) {
        let d = r - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Mean binary cross-entropy of a clamped alpha image against a 0/1 mask.
pub fn silhouette_loss(alpha: &Image, mask: &Image) -> Result<(f64, Image)> {
    alpha.check_same_shape(mask)?;
    let n = alpha.data.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = alpha.clone();
    for (g, (&a, &m)) in grad.data.iter_mut().zip(alpha.data.iter().zip(&mask.data)) {
        let inside = a > BCE_CLAMP && a < 1.0 - BCE_CLAMP;
        let p = a.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= m * p.ln() + (1.0 - m) * (1.0 - p).ln();
        *g = if inside {
            (-m / p + (1.0 - m) / (1.0 - p)) / n
        } else {
            0.0
        };
    }
    Ok((loss / n, grad))
}

/// Mean squared deviation of edge lengths from their mean.
///
/// The mean is held fixed in the gradient; the full derivative through the
/// mean is zero anyway since deviations sum to zero.
pub fn edge_length_loss(mesh: &TriangleMesh) -> (f64, Vec<Vec3>) {
    let edges = mesh.edges();
    let v = mesh.vertices();
    let mut grad = vec![Vec3::zeros(); v.len()];
    if edges.is_empty() {
        return (0.0, grad);
    }
    let lengths: Vec<f64> = edges.iter().map(|e| (v[e[0]] - v[e[1]]).norm()).collect();
    let n = lengths.len() as f64;
    let mean = lengths.iter().sum::<f64>() / n;
    let mut loss = 0.0;
    for (e, &len) in edges.iter().zip(&lengths) {
        let dev = len - mean;
        loss += dev * dev;
        if len > 0.0 {
            let dir = (v[e[0]] - v[e[1]]) / len;
            let g = dir * (2.0 * dev / n);
            grad[e[0]] += g;
            grad[e[1]] -= g;
        }
    }
    (loss / n, grad)
}

/// Mean over vertices of `|v - mean(neighbors(v))|^2` (uniform Laplacian).
pub fn laplacian_loss(mesh: &TriangleMesh) -> (f64, Vec<Vec3>) {
    let v = mesh.vertices();
    let adj = mesh.adjacency();
    let mut grad = vec![Vec3::zeros(); v.len()];
    if v.is_empty() {
        return (0.0, grad);
    }
    let n = v.len() as f64;
    let mut loss = 0.0;
    for (i, nbrs) in adj.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let k = nbrs.len() as f64;
        let centroid = nbrs.iter().map(|&j| v[j]).sum::<Vec3>() / k;
        let delta = v[i] - centroid;
        loss += delta.norm_squared();
        let g = delta * (2.0 / n);
        grad[i] += g;
        for &j in nbrs {
            grad[j] -= g / k;
        }
    }
    (loss / n, grad)
}

/// One supervised view: camera, target RGB and target mask.
#[derive(Debug, Clone)]
pub struct TargetView {
    pub camera: Camera,
    pub rgb: Image,
    pub mask: Image,
}

/// Weighted loss over a batch of views plus the regularizers, with gradients
/// on vertex positions and vertex colors. Per-view work runs in parallel and
/// is summed in batch order.
pub fn total_loss(
    mesh: &TriangleMesh,
    views: &[&TargetView],
    weights: &LossWeights,
    options: &RenderOptions,
) -> Result<(LossReport, Vec<Vec3>, Vec<Vec3>)> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("batch must contain at least one view".into()));
    }
    weights.validate()?;
    let batch = views.len() as f64;
    let needs_images = weights.color > 0.0 || weights.silhouette > 0.0;

    type ViewResult = (f64, f64, Vec<Vec3>, Vec<Vec3>);
    let per_view: Vec<ViewResult> = views
        .par_iter()
        .map(|view| -> Result<ViewResult> {
            let ctx = render_mesh_with_context(mesh, &view.camera, options)?;
            let (lc, mut gc) = color_loss(&ctx.output.rgb, &view.rgb)?;
            let (ls, mut gs) = silhouette_loss(&ctx.output.alpha, &view.mask)?;
            if !needs_images {
                return Ok((lc, ls, vec![Vec3::zeros(); mesh.vertex_count()], vec![Vec3::zeros(); mesh.vertex_count()]));
            }
            let sc = weights.color / batch;
            let ss = weights.silhouette / batch;
            gc.data.iter_mut().for_each(|g| *g *= sc);
            gs.data.iter_mut().for_each(|g| *g *= ss);
            let (gv, gcol) = render_mesh_backward(mesh, &view.camera, options, &ctx, &gc, &gs)?;
            Ok((lc, ls, gv, gcol))
        })
        .collect::<Result<_>>()?;

    let mut grad_v = vec![Vec3::zeros(); mesh.vertex_count()];
    let mut grad_c = vec![Vec3::zeros(); mesh.vertex_count()];
    let mut terms = LossTerms::default();
    let mut breakdown = Vec::with_capacity(per_view.len());
    for (lc, ls, gv, gcol) in &per_view {
        terms.color += lc / batch;
        terms.silhouette += ls / batch;
        breakdown.push((*lc, *ls));
        for (a, b) in grad_v.iter_mut().zip(gv) {
            *a += b;
        }
        for (a, b) in grad_c.iter_mut().zip(gcol) {
            *a += b;
        }
    }

    let (le, ge) = edge_length_loss(mesh);
    let (ll, gl) = laplacian_loss(mesh);
    terms.edge = le;
    terms.laplacian = ll;
    for ((a, e), l) in grad_v.iter_mut().zip(&ge).zip(&gl) {
        *a += e * weights.edge + l * weights.laplacian;
    }
    let total = weights.color * terms.color
        + weights.silhouette * terms.silhouette
        + weights.edge * terms.edge
        + weights.laplacian * terms.laplacian;
    Ok((
        LossReport {
            terms,
            total,
            per_view: breakdown,
        },
        grad_v,
        grad_c,
    ))
}
