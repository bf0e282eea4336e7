use std::collections::BTreeSet;

use crate::error::{Result, StarError};

/// Triangle mesh in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh, rejecting out-of-range and degenerate faces.
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(StarError::validation(format!(
                    "face {fi} references vertex {bad}, mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(StarError::validation(format!(
                    "face {fi} is degenerate: {f:?}"
                )));
            }
        }
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(StarError::validation(format!("vertex {i} is not finite")));
        }
        Ok(Mesh { vertices, faces })
    }

    /// Builds a mesh from a flat `3N` coordinate vector.
    pub fn from_flat(coords: &[f64], faces: Vec<[usize; 3]>) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(StarError::invalid(format!(
                "flat coordinate length {} is not a multiple of 3",
                coords.len()
            )));
        }
        let vertices = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Mesh::new(vertices, faces)
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flatten().copied().collect()
    }

    /// Unique undirected edges `(a, b)` with `a < b`, in sorted order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.vertices[a], self.vertices[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        if edges.is_empty() {
            return 0.0;
        }
        edges.iter().map(|&(a, b)| self.edge_length(a, b)).sum::<f64>() / edges.len() as f64
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(self.vertices.iter().copied())
    }

    /// Whether the edge graph has a single connected component.
    pub fn is_connected(&self) -> bool {
        let n = self.vertices.len();
        if n == 0 {
            return true;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (a, b) in self.edges() {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let root = find(&mut parent, 0);
        (1..n).all(|i| find(&mut parent, i) == root)
    }
}

pub(crate) fn bbox_diagonal(points: impl Iterator<Item = [f64; 3]>) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for p in points {
        any = true;
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    if !any {
        return 0.0;
    }
    (0..3).map(|c| (hi[c] - lo[c]).powi(2)).sum::<f64>().sqrt()
}
