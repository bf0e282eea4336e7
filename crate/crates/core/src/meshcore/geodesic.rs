use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Mesh;
use crate::error::{Result, StarError};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    vertex: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed so the max-heap pops the closest vertex; ties break on index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source shortest-path distance along mesh edges, Euclidean edge
/// weights. Seeds are at distance zero.
pub fn geodesic_distances(mesh: &Mesh, seeds: &[usize]) -> Result<Vec<f64>> {
    let n = mesh.num_vertices();
    if seeds.is_empty() {
        return Err(StarError::invalid("geodesic seed set is empty"));
    }
    if let Some(&s) = seeds.iter().find(|&&s| s >= n) {
        return Err(StarError::invalid(format!(
            "seed vertex {s} out of range for {n} vertices"
        )));
    }

    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (a, b) in mesh.edges() {
        let len = mesh.edge_length(a, b);
        adjacency[a].push((b, len));
        adjacency[b].push((a, len));
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &s in seeds {
        dist[s] = 0.0;
        heap.push(Candidate { dist: 0.0, vertex: s });
    }
    while let Some(Candidate { dist: d, vertex: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, len) in &adjacency[u] {
            let nd = d + len;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Candidate { dist: nd, vertex: v });
            }
        }
    }

    if let Some(vertex) = dist.iter().position(|d| d.is_infinite()) {
        return Err(StarError::Unreachable { vertex });
    }
    Ok(dist)
}
