//! Triangle meshes: representation, topology, file IO, and surface queries.

mod io;
mod sample;
mod shapes;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use io::{load_mesh, load_mesh_with_summary, save_mesh, LoadSummary};
pub use sample::{sample_surface, SurfaceSamples};
pub use shapes::{icosphere_level_for, make_cube, make_icosphere, make_octahedron, make_tetrahedron};

pub type Vec3 = Vector3<f64>;

/// Color assigned to vertices when the source has none.
pub const DEFAULT_GRAY: f64 = 0.5;

/// Facets with area below this are reported as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Connectivity derived once from the facet list and shared between meshes
/// that only differ in vertex positions or colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Undirected edges, smaller index first, sorted lexicographically.
    pub edges: Vec<[usize; 2]>,
    /// Number of facets incident to each edge in `edges`.
    pub edge_facet_counts: Vec<usize>,
    /// Sorted neighbor indices per vertex.
    pub adjacency: Vec<Vec<usize>>,
}

impl Topology {
    fn build(vertex_count: usize, facets: &[[usize; 3]]) -> Self {
        let mut counts: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        for f in facets {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = if a < b { [a, b] } else { [b, a] };
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        let mut adjacency = vec![Vec::new(); vertex_count];
        let mut edges = Vec::with_capacity(counts.len());
        let mut edge_facet_counts = Vec::with_capacity(counts.len());
        for (e, c) in counts {
            adjacency[e[0]].push(e[1]);
            adjacency[e[1]].push(e[0]);
            edges.push(e);
            edge_facet_counts.push(c);
        }
        for n in &mut adjacency {
            n.sort_unstable();
        }
        Topology {
            edges,
            edge_facet_counts,
            adjacency,
        }
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edge_facet_counts.iter().filter(|&&c| c == 1).count()
    }

    pub fn non_manifold_edge_count(&self) -> usize {
        self.edge_facet_counts.iter().filter(|&&c| c > 2).count()
    }
}

/// An indexed triangle mesh with per-vertex RGB colors.
///
/// Values are immutable once built; [`TriangleMesh::with_vertices`] and
/// [`TriangleMesh::with_colors`] produce new meshes sharing the topology.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    colors: Vec<Vec3>,
    facets: Vec<[usize; 3]>,
    topology: Arc<Topology>,
}

impl TriangleMesh {
    /// Builds a mesh, validating facet indices. `colors` defaults to gray.
    pub fn new(vertices: Vec<Vec3>, colors: Option<Vec<Vec3>>, facets: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in facets.iter().enumerate() {
            for &idx in f {
                if idx >= n {
                    return Err(Error::IndexOutOfRange {
                        facet: fi,
                        index: idx,
                        vertex_count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::RepeatedIndex { facet: fi });
            }
        }
        let colors = match colors {
            Some(c) if c.len() != n => {
                return Err(Error::ShapeMismatch(format!(
                    "{} colors for {} vertices",
                    c.len(),
                    n
                )))
            }
            Some(c) => c,
            None => vec![Vec3::repeat(DEFAULT_GRAY); n],
        };
        let topology = Arc::new(Topology::build(n, &facets));
        Ok(TriangleMesh {
            vertices,
            colors,
            facets,
            topology,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn colors(&self) -> &[Vec3] {
        &self.colors
    }

    pub fn facets(&self) -> &[[usize; 3]] {
        &self.facets
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.topology.edges
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.topology.adjacency
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn facet_count(&self) -> usize {
        self.facets.len()
    }

    /// Corner positions of facet `f`.
    pub fn facet_vertices(&self, f: usize) -> [Vec3; 3] {
        let [i, j, k] = self.facets[f];
        [self.vertices[i], self.vertices[j], self.vertices[k]]
    }

    /// Same topology and colors, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} positions for mesh with {} vertices",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(TriangleMesh {
            vertices,
            colors: self.colors.clone(),
            facets: self.facets.clone(),
            topology: Arc::clone(&self.topology),
        })
    }

    /// Same topology and positions, new colors.
    pub fn with_colors(&self, colors: Vec<Vec3>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} colors for mesh with {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        Ok(TriangleMesh {
            vertices: self.vertices.clone(),
            colors,
            facets: self.facets.clone(),
            topology: Arc::clone(&self.topology),
        })
    }

    /// Mesh with the winding of every facet reversed.
    pub fn flipped(&self) -> Self {
        let facets = self.facets.iter().map(|f| [f[0], f[2], f[1]]).collect();
        TriangleMesh {
            vertices: self.vertices.clone(),
            colors: self.colors.clone(),
            facets,
            topology: Arc::clone(&self.topology),
        }
    }

    /// Applies `p -> rotation * p + translation` to every vertex.
    pub fn transformed(&self, rotation: &nalgebra::Matrix3<f64>, translation: &Vec3) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|v| rotation * v + translation)
            .collect();
        TriangleMesh {
            vertices,
            colors: self.colors.clone(),
            facets: self.facets.clone(),
            topology: Arc::clone(&self.topology),
        }
    }

    /// Mean of the vertex positions.
    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    pub fn total_area(&self) -> f64 {
        mesh_area_and_normals(self).iter().map(|g| g.area).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.vertices.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Rigid translation of every vertex by `offset`.
pub fn shift_initialization(mesh: &TriangleMesh, offset: &Vec3) -> TriangleMesh {
    mesh.transformed(&nalgebra::Matrix3::identity(), offset)
}

/// Area and outward normal of one facet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetGeometry {
    pub area: f64,
    pub normal: Vec3,
    pub degenerate: bool,
}

/// Area and unit normal from corner positions, winding-ordered.
pub fn facet_geometry(a: &Vec3, b: &Vec3, c: &Vec3) -> FacetGeometry {
    let cross = (b - a).cross(&(c - a));
    let norm = cross.norm();
    let area = 0.5 * norm;
    if area < DEGENERATE_AREA {
        FacetGeometry {
            area,
            normal: Vec3::z(),
            degenerate: true,
        }
    } else {
        FacetGeometry {
            area,
            normal: cross / norm,
            degenerate: false,
        }
    }
}

pub fn mesh_area_and_normals(mesh: &TriangleMesh) -> Vec<FacetGeometry> {
    (0..mesh.facet_count())
        .map(|f| {
            let [a, b, c] = mesh.facet_vertices(f);
            facet_geometry(&a, &b, &c)
        })
        .collect()
}

/// Maps a source mesh into the normalized frame: `(p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub center: Vec3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.center
    }
}

/// Vertex counts above which the farthest pair is found with cell pruning
/// instead of the all-pairs scan.
const ALL_PAIRS_LIMIT: usize = 50_000;

/// Largest distance between any two points.
pub fn max_pairwise_distance(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    if points.len() <= ALL_PAIRS_LIMIT {
        let mut best = 0.0f64;
        for (i, p) in points.iter().enumerate() {
            for q in &points[i + 1..] {
                best = best.max((p - q).norm_squared());
            }
        }
        return best.sqrt();
    }
    max_pairwise_distance_pruned(points)
}

/// Exact farthest pair via axis-aligned cells: a pair of cells is scanned
/// only if the farthest corners of their boxes could beat the current best.
fn max_pairwise_distance_pruned(points: &[Vec3]) -> f64 {
    let (lo, hi) = bounding_box(points);
    let extent = hi - lo;
    let cells_per_axis = 16usize;
    let cell_of = |p: &Vec3| -> usize {
        let mut idx = 0;
        for a in 0..3 {
            let t = if extent[a] > 0.0 {
                ((p[a] - lo[a]) / extent[a] * cells_per_axis as f64) as usize
            } else {
                0
            };
            idx = idx * cells_per_axis + t.min(cells_per_axis - 1);
        }
        idx
    };
    let mut cells: BTreeMap<usize, Vec<Vec3>> = BTreeMap::new();
    for p in points {
        cells.entry(cell_of(p)).or_default().push(*p);
    }
    let cells: Vec<(Vec3, Vec3, Vec<Vec3>)> = cells
        .into_values()
        .map(|pts| {
            let (a, b) = bounding_box(&pts);
            (a, b, pts)
        })
        .collect();

    // Double-sweep lower bound.
    let far_from = |q: &Vec3| {
        points
            .iter()
            .max_by(|a, b| (*a - q).norm_squared().total_cmp(&(*b - q).norm_squared()))
            .copied()
            .unwrap()
    };
    let a = far_from(&points[0]);
    let b = far_from(&a);
    let mut best = (a - b).norm_squared();

    for i in 0..cells.len() {
        for j in i..cells.len() {
            let (alo, ahi, ap) = &cells[i];
            let (blo, bhi, bp) = &cells[j];
            let mut bound = 0.0;
            for k in 0..3 {
                let d = (ahi[k] - blo[k]).abs().max((bhi[k] - alo[k]).abs());
                bound += d * d;
            }
            if bound <= best {
                continue;
            }
            for p in ap {
                for q in bp {
                    best = best.max((p - q).norm_squared());
                }
            }
        }
    }
    best.sqrt()
}

fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Recenters on the bounding-box center and scales so the largest
/// vertex-to-vertex distance is 2.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<(TriangleMesh, NormalizationTransform)> {
    if mesh.vertex_count() < 2 {
        return Err(Error::DegenerateGeometry(
            "need at least two vertices to normalize".into(),
        ));
    }
    let diameter = max_pairwise_distance(mesh.vertices());
    if !(diameter > 0.0) || !diameter.is_finite() {
        return Err(Error::DegenerateGeometry(
            "all vertices coincide".into(),
        ));
    }
    let (lo, hi) = bounding_box(mesh.vertices());
    let transform = NormalizationTransform {
        center: (lo + hi) * 0.5,
        scale: 2.0 / diameter,
    };
    let vertices = mesh.vertices().iter().map(|v| transform.apply(v)).collect();
    Ok((mesh.with_vertices(vertices)?, transform))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::from(a), Vec3::from(b), Vec3::from(c)],
            None,
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn right_triangle_area_and_normal() {
        let g = mesh_area_and_normals(&tri([0., 0., 0.], [1., 0., 0.], [0., 1., 0.]));
        assert_eq!(g[0].area, 0.5);
        assert_eq!(g[0].normal, Vec3::z());
        assert!(!g[0].degenerate);

        let g = mesh_area_and_normals(&tri([0., 0., 0.], [0., 1., 0.], [1., 0., 0.]));
        assert_eq!(g[0].normal, -Vec3::z());
    }

    #[test]
    fn collinear_facet_is_flagged() {
        let g = mesh_area_and_normals(&tri([0., 0., 0.], [1., 0., 0.], [2., 0., 0.]));
        assert_eq!(g[0].area, 0.0);
        assert!(g[0].degenerate);
        assert!((g[0].normal.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_indices() {
        let v = vec![Vec3::zeros(); 8];
        let err = TriangleMesh::new(v.clone(), None, vec![[0, 1, 9]]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 9, .. }));
        let err = TriangleMesh::new(v, None, vec![[0, 1, 1]]).unwrap_err();
        assert!(matches!(err, Error::RepeatedIndex { facet: 0 }));
    }

    #[test]
    fn cube_edges_follow_euler() {
        let cube = make_cube(1, 1.0);
        assert_eq!(cube.vertex_count(), 8);
        assert_eq!(cube.facet_count(), 12);
        assert_eq!(cube.edges().len(), 8 + 12 - 2);
        let edges = cube.edges();
        assert!(edges.windows(2).all(|w| w[0] < w[1]));
        assert!(edges.iter().all(|e| e[0] < e[1]));
    }

    #[test]
    fn handshake_on_open_mesh() {
        // two triangles sharing one edge
        let m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1., 1., 0.)],
            None,
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let t = m.topology();
        let interior = t.edge_facet_counts.iter().filter(|&&c| c == 2).count();
        assert_eq!(3 * m.facet_count(), 2 * interior + t.boundary_edge_count());
        assert_eq!(m.adjacency()[0], vec![1, 2]);
        assert_eq!(m.adjacency()[1], vec![0, 2, 3]);
    }

    #[test]
    fn normalize_two_points() {
        let m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::new(4., 0., 0.), Vec3::new(2., 0.1, 0.)],
            None,
            vec![],
        )
        .unwrap();
        let (n, t) = normalize_mesh(&m).unwrap();
        assert!((max_pairwise_distance(n.vertices()) - 2.0).abs() < 1e-12);
        assert!((t.center - Vec3::new(2., 0.05, 0.)).norm() < 1e-12);
    }

    #[test]
    fn normalize_unit_cube_scale() {
        let cube = make_cube(1, 0.5).transformed(&nalgebra::Matrix3::identity(), &Vec3::repeat(0.5));
        let (n, t) = normalize_mesh(&cube).unwrap();
        assert!((t.scale - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!(t.center.iter().all(|c| (c - 0.5).abs() < 1e-12));
        let (n2, t2) = normalize_mesh(&n).unwrap();
        assert!((t2.scale - 1.0).abs() < 1e-6);
        assert!(t2.center.norm() < 1e-6);
        for (a, b) in n.vertices().iter().zip(n2.vertices()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn normalize_rejects_coincident() {
        let m = TriangleMesh::new(vec![Vec3::x(); 3], None, vec![]).unwrap();
        assert!(matches!(
            normalize_mesh(&m),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn pruned_farthest_pair_matches_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..3000)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..0.5), rng.gen_range(0.0..0.3)))
            .collect();
        let mut brute = 0.0f64;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                brute = brute.max((pts[i] - pts[j]).norm());
            }
        }
        assert_eq!(max_pairwise_distance_pruned(&pts), brute);
    }

    #[test]
    fn shift_moves_centroid() {
        let m = make_icosphere(20, 1.0);
        let s = shift_initialization(&m, &Vec3::new(0.5, 0., 0.));
        assert!(((s.centroid() - m.centroid()) - Vec3::new(0.5, 0., 0.)).norm() < 1e-12);
        assert_eq!(shift_initialization(&m, &Vec3::zeros()), m);
    }
}
