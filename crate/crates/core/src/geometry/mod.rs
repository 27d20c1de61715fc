//! Rigid-transform algebra, rotation encodings and Procrustes alignment.

mod procrustes;
pub mod rotation;
mod transform;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

pub use procrustes::{procrustes_align, procrustes_transform, weighted_procrustes, weighted_residual};
pub use rotation::{angle_axis_to_matrix, GramSchmidt, Rotation6D};
pub use transform::{RigidTransform, VertexBlock, RIGID_TOLERANCE};

/// Random rigid perturbation: angle `~ N(0, eps_r)` radians about an axis
/// with components `~ U(-1, 1)`, translation components `~ N(0, eps_t)` mm.
///
/// The all-zero axis has probability zero; it is redrawn if it ever occurs.
pub fn sample_random_rigid<R: Rng + ?Sized>(eps_r: f64, eps_t: f64, rng: &mut R) -> RigidTransform {
    assert!(eps_r >= 0.0 && eps_t >= 0.0, "noise scales must be non-negative");
    let angle = Normal::new(0.0, eps_r).expect("finite std").sample(rng);
    let unit = Uniform::new(-1.0, 1.0).expect("non-empty range");
    let axis = loop {
        let a = Vector3::new(unit.sample(rng), unit.sample(rng), unit.sample(rng));
        if a.norm_squared() > 0.0 {
            break a;
        }
    };
    let gauss = Normal::new(0.0, eps_t).expect("finite std");
    let t = Vector3::new(gauss.sample(rng), gauss.sample(rng), gauss.sample(rng));
    let r = angle_axis_to_matrix(angle, &axis).expect("nonzero axis");
    RigidTransform::new(r, t).expect("Rodrigues output is a rotation")
}
