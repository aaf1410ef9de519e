use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{mesh_area_and_normals, TriangleMesh, Vec3};
use crate::error::{Error, Result};

const CHUNK: usize = 4096;

/// Points drawn on a mesh surface, each with the normal of its facet.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub facets: Vec<usize>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `n` area-uniform surface samples.
///
/// Chunk `c` of the output uses ChaCha stream `c` seeded with `seed`, so the
/// result does not depend on how many threads run the chunks.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<SurfaceSamples> {
    let geometry = mesh_area_and_normals(mesh);
    let mut cdf = Vec::with_capacity(geometry.len());
    let mut total = 0.0;
    for g in &geometry {
        total += if g.degenerate { 0.0 } else { g.area };
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateGeometry(
            "cannot sample a mesh with zero surface area".into(),
        ));
    }

    let chunks: Vec<(Vec<Vec3>, Vec<Vec3>, Vec<usize>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(n - c * CHUNK);
            let mut points = Vec::with_capacity(count);
            let mut normals = Vec::with_capacity(count);
            let mut facets = Vec::with_capacity(count);
            for _ in 0..count {
                let target = rng.gen::<f64>() * total;
                let f = cdf.partition_point(|&x| x <= target).min(cdf.len() - 1);
                let (mut r1, mut r2): (f64, f64) = (rng.gen(), rng.gen());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                let [a, b, cc] = mesh.facet_vertices(f);
                points.push(a + (b - a) * r1 + (cc - a) * r2);
                normals.push(geometry[f].normal);
                facets.push(f);
            }
            (points, normals, facets)
        })
        .collect();

    let mut out = SurfaceSamples {
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        facets: Vec::with_capacity(n),
    };
    for (p, nrm, f) in chunks {
        out.points.extend(p);
        out.normals.extend(nrm);
        out.facets.extend(f);
    }
    Ok(out)
}
