//! Mesh and kinematic-tree primitives shared by the rest of the crate.

mod geodesic;
mod mesh;
mod obj;
mod seeds;
mod sparse;
mod tree;

pub use geodesic::geodesic_distances;
pub use mesh::Mesh;
pub use obj::{load_obj, parse_obj, save_obj, write_obj};
pub use seeds::{joint_seed_vertices, SeedRule};
pub use sparse::SparseRows;
pub use tree::{JointNeighborhood, KinematicTree};
