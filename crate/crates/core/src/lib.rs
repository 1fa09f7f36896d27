//! Hierarchical mesh-graph network simulator.
//!
//! The crate builds multi-level triangular meshes of 2D plate geometries,
//! partitions mesh edges into direction groups, tunes a per-group message
//! passing schedule from projected sub-area diameters, runs an
//! encoder/processor/decoder graph network with up-sampling-only level
//! transitions, and generates plane-stress FEM ground truth for training
//! and evaluation.

pub mod adaptive;
pub mod fem;
pub mod harness;
pub mod hierarchy;
pub mod mesh;
pub mod model;
pub(crate) mod seed;
pub mod vec2;

pub use mesh::{DirectedEdge, MeshGraph, NodeConditions};
pub use vec2::Vec2;

/// Build the global rayon pool, honoring the MESHSIM_THREADS cap. Call once
/// at process start; later calls are ignored.
pub fn init_thread_pool() {
    let threads = std::env::var("MESHSIM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0);
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
