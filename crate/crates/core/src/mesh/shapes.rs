use std::collections::HashMap;

use super::{TriangleMesh, Vec3};

/// Smallest subdivision level whose facet count `20 * 4^level` reaches `target_facets`.
pub fn icosphere_level_for(target_facets: usize) -> u32 {
    let mut level = 0;
    let mut count = 20usize;
    while count < target_facets {
        level += 1;
        count *= 4;
    }
    level
}

/// Subdivided icosahedron with every vertex on the sphere of `radius`.
///
/// The level is the smallest one giving at least `target_facets` facets;
/// callers read the actual count from the returned mesh.
pub fn make_icosphere(target_facets: usize, radius: f64) -> TriangleMesh {
    let level = icosphere_level_for(target_facets.max(20));
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut facets: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(facets.len() * 4);
        for &[a, b, c] in &facets {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        facets = next;
    }

    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriangleMesh::new(vertices, None, facets).expect("icosphere indices are valid")
}

/// Closed axis-aligned cube of half-width `half`, each face split into a
/// `segments x segments` grid of quads (two triangles each), outward winding.
pub fn make_cube(segments: usize, half: f64) -> TriangleMesh {
    let n = segments.max(1) as i64;
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut facets = Vec::new();
    let mut vid = |p: [i64; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(p).or_insert_with(|| {
            vertices.push(Vec3::new(
                (2 * p[0] - n) as f64 / n as f64 * half,
                (2 * p[1] - n) as f64 / n as f64 * half,
                (2 * p[2] - n) as f64 / n as f64 * half,
            ));
            vertices.len() - 1
        })
    };
    // (normal axis, side, u axis, v axis) with u x v pointing outward.
    let faces = [
        (0, n, 1, 2),
        (0, 0, 2, 1),
        (1, n, 2, 0),
        (1, 0, 0, 2),
        (2, n, 0, 1),
        (2, 0, 1, 0),
    ];
    for &(axis, side, u, v) in &faces {
        let lattice = |a: i64, b: i64| {
            let mut p = [0i64; 3];
            p[axis] = side;
            p[u] = a;
            p[v] = b;
            p
        };
        for a in 0..n {
            for b in 0..n {
                let p00 = vid(lattice(a, b), &mut vertices);
                let p10 = vid(lattice(a + 1, b), &mut vertices);
                let p11 = vid(lattice(a + 1, b + 1), &mut vertices);
                let p01 = vid(lattice(a, b + 1), &mut vertices);
                facets.push([p00, p10, p11]);
                facets.push([p00, p11, p01]);
            }
        }
    }
    TriangleMesh::new(vertices, None, facets).expect("cube indices are valid")
}

/// Regular octahedron with vertices at distance `radius` on the axes.
pub fn make_octahedron(radius: f64) -> TriangleMesh {
    let vertices = vec![
        Vec3::new(radius, 0.0, 0.0),
        Vec3::new(-radius, 0.0, 0.0),
        Vec3::new(0.0, radius, 0.0),
        Vec3::new(0.0, -radius, 0.0),
        Vec3::new(0.0, 0.0, radius),
        Vec3::new(0.0, 0.0, -radius),
    ];
    let facets = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    TriangleMesh::new(vertices, None, facets).expect("octahedron indices are valid")
}

/// Tetrahedron on the unit axes plus the origin.
pub fn make_tetrahedron() -> TriangleMesh {
    let vertices = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
    let facets = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    TriangleMesh::new(vertices, None, facets).expect("tetrahedron indices are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::mesh_area_and_normals;

    #[test]
    fn level_sequence() {
        assert_eq!(icosphere_level_for(20), 0);
        assert_eq!(icosphere_level_for(21), 1);
        assert_eq!(icosphere_level_for(20480), 5);
        assert_eq!(icosphere_level_for(40000), 6);
    }

    #[test]
    fn icosahedron_base_case() {
        let m = make_icosphere(20, 1.0);
        assert_eq!(m.facet_count(), 20);
        assert_eq!(m.vertex_count(), 12);
        assert_eq!(m.edges().len(), 30);
    }

    #[test]
    fn icosphere_counts_and_radius() {
        for (target, level) in [(80, 1u32), (1280, 3), (5120, 4)] {
            let m = make_icosphere(target, 2.5);
            assert_eq!(m.facet_count(), 20 * 4usize.pow(level));
            assert_eq!(m.edges().len(), m.vertex_count() + m.facet_count() - 2);
            for v in m.vertices() {
                assert!((v.norm() - 2.5).abs() < 1e-6);
            }
            assert_eq!(m.topology().boundary_edge_count(), 0);
            for g in mesh_area_and_normals(&m) {
                assert!(!g.degenerate);
            }
        }
    }

    #[test]
    fn icosphere_winding_points_outward() {
        let m = make_icosphere(80, 1.0);
        for (f, g) in mesh_area_and_normals(&m).iter().enumerate() {
            let [a, b, c] = m.facet_vertices(f);
            assert!(g.normal.dot(&((a + b + c) / 3.0)) > 0.0);
        }
    }

    #[test]
    fn cube_is_closed_and_outward() {
        for segments in [1, 3] {
            let m = make_cube(segments, 0.5);
            assert_eq!(m.facet_count(), 12 * segments * segments);
            assert_eq!(m.topology().boundary_edge_count(), 0);
            assert_eq!(m.edges().len(), m.vertex_count() + m.facet_count() - 2);
            let area: f64 = mesh_area_and_normals(&m).iter().map(|g| g.area).sum();
            assert!((area - 6.0).abs() < 1e-12);
            for (f, g) in mesh_area_and_normals(&m).iter().enumerate() {
                let [a, b, c] = m.facet_vertices(f);
                assert!(g.normal.dot(&((a + b + c) / 3.0)) > 0.0);
            }
        }
    }

    #[test]
    fn small_solids_are_closed_and_outward() {
        for m in [make_octahedron(1.0), make_tetrahedron()] {
            assert_eq!(m.topology().boundary_edge_count(), 0);
            let c = m.centroid();
            for (f, g) in mesh_area_and_normals(&m).iter().enumerate() {
                let [a, b, cc] = m.facet_vertices(f);
                assert!(g.normal.dot(&((a + b + cc) / 3.0 - c)) > 0.0);
            }
        }
    }
}
