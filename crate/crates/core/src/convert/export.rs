//! Splat-viewer PLY export of facet Gaussians.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion};

use super::FacetGaussian;
use crate::error::{Error, Result};

/// Band-0 spherical-harmonic constant `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177387814;

/// Opacity written to file is clamped to `1 - EXPORT_OPACITY_CLAMP` before the logit.
pub const EXPORT_OPACITY_CLAMP: f64 = 1e-6;

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

/// One Gaussian as stored in the export file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianRecord {
    pub position: [f32; 3],
    pub f_dc: [f32; 3],
    /// Logit of opacity.
    pub opacity: f32,
    /// Natural log of the scales.
    pub log_scales: [f32; 3],
    /// Unit quaternion, `w` first.
    pub rotation: [f32; 4],
}

impl GaussianRecord {
    pub fn from_gaussian(g: &FacetGaussian) -> Self {
        let o = g.opacity.clamp(EXPORT_OPACITY_CLAMP, 1.0 - EXPORT_OPACITY_CLAMP);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(g.rotation));
        let mut q = [q.w, q.i, q.j, q.k];
        if q[0] < 0.0 {
            q.iter_mut().for_each(|c| *c = -*c);
        }
        GaussianRecord {
            position: [g.mean.x as f32, g.mean.y as f32, g.mean.z as f32],
            f_dc: [0, 1, 2].map(|k| ((g.color[k] - 0.5) / SH_C0) as f32),
            opacity: (o / (1.0 - o)).ln() as f32,
            log_scales: [0, 1, 2].map(|k| g.scales[k].ln() as f32),
            rotation: q.map(|c| c as f32),
        }
    }

    fn values(&self) -> [f32; 14] {
        let mut v = [0f32; 14];
        v[0..3].copy_from_slice(&self.position);
        v[3..6].copy_from_slice(&self.f_dc);
        v[6] = self.opacity;
        v[7..10].copy_from_slice(&self.log_scales);
        v[10..14].copy_from_slice(&self.rotation);
        v
    }

    fn from_values(v: &[f32]) -> Self {
        GaussianRecord {
            position: [v[0], v[1], v[2]],
            f_dc: [v[3], v[4], v[5]],
            opacity: v[6],
            log_scales: [v[7], v[8], v[9]],
            rotation: [v[10], v[11], v[12], v[13]],
        }
    }
}

/// Writes a binary little-endian PLY in the layout splat viewers read.
pub fn export_gaussians(gaussians: &[FacetGaussian], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(512 + gaussians.len() * 56);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    writeln!(out, "element vertex {}", gaussians.len()).expect("write to vec");
    for p in PROPERTIES {
        writeln!(out, "property float {p}").expect("write to vec");
    }
    out.extend_from_slice(b"end_header\n");
    for g in gaussians {
        for v in GaussianRecord::from_gaussian(g).values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads back a file written by [`export_gaussians`].
pub fn load_gaussian_ply(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<GaussianRecord>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::parse(1, "missing end_header"))?;
    let header = String::from_utf8_lossy(&bytes[..end]);
    let mut count = 0usize;
    let mut names = Vec::new();
    for (i, line) in header.lines().enumerate() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["element", "vertex", n] => {
                count = n.parse().map_err(|_| Error::parse(i + 1, "bad vertex count"))?
            }
            ["property", "float", name] => names.push(name.to_string()),
            ["property", ..] => return Err(Error::parse(i + 1, "only float properties are supported")),
            _ => {}
        }
    }
    if names != PROPERTIES {
        return Err(Error::parse(1, format!("unexpected property layout {names:?}")));
    }
    let body = &bytes[end + marker.len()..];
    let stride = names.len() * 4;
    if body.len() < count * stride {
        return Err(Error::parse(header.lines().count() + 1, "body truncated"));
    }
    let records = body
        .chunks_exact(stride)
        .take(count)
        .map(|chunk| {
            let v: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            GaussianRecord::from_values(&v)
        })
        .collect();
    Ok((names, records))
}
