//! Desk-scale square-table assembly: kinematic simulator, synthetic point
//! clouds, and a scripted expert that generates annotated demonstrations.

pub mod cloud;
pub mod expert;
pub mod math;
pub mod scene;
pub mod skill;
pub mod world;

pub use math::{Pose, Quat, Vec3};
pub use scene::{SceneSpec, SimParams, Skill};
pub use world::{Query, Randomness, Sim, World, WorldState};

/// Derive a child seed from a master seed and a purpose tag. Stable across
/// platforms and worker counts.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[0..8].try_into().unwrap())
}
