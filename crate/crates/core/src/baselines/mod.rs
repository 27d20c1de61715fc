//! Comparison stabilizers: region-restricted Procrustes, model unposing and
//! the learned confidence map.

mod cmap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::geometry::{procrustes_transform, RigidTransform, VertexBlock};
use crate::model::{forward::head_transform, ModelData, ModelParams, Region};

pub use cmap::{
    cmap_losses, cmap_select, cmap_stabilize, cmap_train, neighborhoods, CmapConfig, CmapLosses, CmapVariant,
    ConfidenceMap, CMAP_KIND, CMAP_VERSION,
};

/// Procrustes on the vertices of one region.
pub fn proc_baseline(vs_full: &VertexBlock, vt_full: &VertexBlock, psi: &ModelData, region: Region) -> Result<RigidTransform> {
    let mask = psi.mask(region);
    procrustes_transform(&vs_full.select(mask), &vt_full.select(mask))
}

/// The rigid map between the posed head frames of two parameter sets:
/// unposing the source and re-posing it with the target's head transform.
pub fn unpose_baseline(source: &ModelParams, target: &ModelParams, psi: &ModelData) -> Result<RigidTransform> {
    source.check(psi)?;
    target.check(psi)?;
    let hs = head_transform(psi, &source.beta, &source.theta, &source.tau)?;
    let ht = head_transform(psi, &target.beta, &target.theta, &target.tau)?;
    Ok(ht.compose(&hs.inverse()))
}

/// Simulated fitting error: every joint rotation component gets
/// `N(0, level)` degrees and the root translation `N(0, level)` mm.
pub fn perturb_pose<R: Rng + ?Sized>(params: &ModelParams, level: f64, rng: &mut R) -> ModelParams {
    let mut p = params.clone();
    if level == 0.0 {
        return p;
    }
    let angle = Normal::new(0.0, level.to_radians()).expect("finite std");
    let shift = Normal::new(0.0, level).expect("finite std");
    for t in &mut p.theta {
        *t += Vector3::new(angle.sample(rng), angle.sample(rng), angle.sample(rng));
    }
    p.tau += Vector3::new(shift.sample(rng), shift.sample(rng), shift.sample(rng));
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_random_rigid;
    use crate::model::{model_forward, skull_forward, synth_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn proc_identity_and_rigid_recovery() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let mut p = ModelParams::zeros(&psi);
        p.phi[0] = 0.8;
        let v = model_forward(&psi, &p).unwrap();
        let z = sample_random_rigid(0.3, 20.0, &mut ChaCha8Rng::seed_from_u64(2));
        for region in [Region::Head, Region::Face, Region::Upper] {
            assert!(proc_baseline(&v, &v, &psi, region).unwrap().max_abs_diff(&RigidTransform::identity()) < 1e-9);
            let s = proc_baseline(&v, &z.apply(&v), &psi, region).unwrap();
            assert!(s.max_abs_diff(&z) < 1e-6);
        }
    }

    #[test]
    fn unpose_aligns_skulls_with_exact_parameters() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = ModelParams::zeros(&psi);
        assert!(unpose_baseline(&a, &a, &psi).unwrap().max_abs_diff(&RigidTransform::identity()) < 1e-12);
        a.beta = vec![1.0, -2.0, 0.5];
        let mut b = a.clone();
        for t in a.theta.iter_mut().chain(b.theta.iter_mut()) {
            *t = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        }
        a.tau = Vector3::new(3.0, -1.0, 2.0);
        b.phi[2] = 1.0;
        let s = unpose_baseline(&a, &b, &psi).unwrap();
        let ws = skull_forward(&psi, &a).unwrap();
        let wt = skull_forward(&psi, &b).unwrap();
        assert!(s.apply(&ws).frobenius_distance(&wt) / (ws.len() as f64).sqrt() < 1e-9);
    }

    #[test]
    fn zero_perturbation_is_exact() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let p = ModelParams::zeros(&psi);
        assert_eq!(perturb_pose(&p, 0.0, &mut ChaCha8Rng::seed_from_u64(0)), p);
        assert_ne!(perturb_pose(&p, 1.0, &mut ChaCha8Rng::seed_from_u64(0)), p);
    }
}
