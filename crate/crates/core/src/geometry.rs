//! Triangle-mesh topology and the vertex-normal computation shared by the
//! renderer and the fitting losses.

use std::collections::BTreeSet;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Fixed connectivity of a triangle mesh together with its derived edge and
/// one-ring neighbor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    vertex_count: usize,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(vertex_count: usize, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut edge_set = BTreeSet::new();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= vertex_count {
                    return Err(Error::InvalidModel(format!(
                        "triangle {t} references vertex {v} but only {vertex_count} exist"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidModel(format!("triangle {t} repeats a vertex")));
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_set.insert([a.min(b), a.max(b)]);
            }
        }
        let edges: Vec<[usize; 2]> = edge_set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); vertex_count];
        for &[a, b] in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            vertex_count,
            triangles,
            edges,
            neighbors,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Unique undirected edges, each stored as `[lo, hi]`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// One-ring neighbors of `v`, sorted ascending.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }
}

/// Area-weighted vertex normals: the sum of incident (unnormalized) face
/// cross products, renormalized. Vertices with no incident area get +z.
pub fn vertex_normals(topology: &Topology, vertices: &[Vec3]) -> Vec<Vec3> {
    accumulate_face_normals(topology, vertices)
        .into_iter()
        .map(|s| {
            let len = s.norm();
            if len > 0.0 {
                s / len
            } else {
                Vec3::z()
            }
        })
        .collect()
}

fn accumulate_face_normals(topology: &Topology, vertices: &[Vec3]) -> Vec<Vec3> {
    let mut sums = vec![Vec3::zeros(); vertices.len()];
    for &[a, b, c] in topology.triangles() {
        let cross = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        sums[a] += cross;
        sums[b] += cross;
        sums[c] += cross;
    }
    sums
}

/// Back-propagates gradients on the unit vertex normals to vertex positions.
pub fn vertex_normals_backward(
    topology: &Topology,
    vertices: &[Vec3],
    grad_normals: &[Vec3],
) -> Vec<Vec3> {
    let sums = accumulate_face_normals(topology, vertices);
    // d(s/|s|) = (I - n n^T) ds / |s|
    let grad_sums: Vec<Vec3> = sums
        .iter()
        .zip(grad_normals)
        .map(|(s, g)| {
            let len = s.norm();
            if len > 0.0 {
                let n = s / len;
                (g - n * n.dot(g)) / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();

    let mut grad = vec![Vec3::zeros(); vertices.len()];
    for &[a, b, c] in topology.triangles() {
        let g = grad_sums[a] + grad_sums[b] + grad_sums[c];
        if g == Vec3::zeros() {
            continue;
        }
        let e1 = vertices[b] - vertices[a];
        let e2 = vertices[c] - vertices[a];
        // cross = e1 x e2; d(cross)·g = de1·(e2 x g) + de2·(g x e1)
        let ge1 = e2.cross(&g);
        let ge2 = g.cross(&e1);
        grad[b] += ge1;
        grad[c] += ge2;
        grad[a] -= ge1 + ge2;
    }
    grad
}

/// Axis-aligned bounding-box diagonal length.
pub fn bbox_diagonal(vertices: &[Vec3]) -> f64 {
    if vertices.is_empty() {
        return 0.0;
    }
    let mut lo = vertices[0];
    let mut hi = vertices[0];
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    (hi - lo).norm()
}

/// Mean Euclidean distance between corresponding vertices.
pub fn mean_vertex_error(a: &[Vec3], b: &[Vec3]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}
