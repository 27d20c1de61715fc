use nalgebra::{Matrix3x4, Point3, Vector3};

use super::{size_check, ModelData, ModelParams};
use crate::error::{Error, Result};
use crate::geometry::rotation::{matrix_to_rotation_vector, rotation_vector_to_matrix};
use crate::geometry::{RigidTransform, VertexBlock};

/// Bind-pose vertices `T + sum beta_i I_i + sum phi_i E_i` and joints
/// `J + sum beta_i Q_i`.
pub fn bind_pose(
    psi: &ModelData,
    beta: &[f64],
    phi: &[f64],
) -> Result<(VertexBlock, Vec<Point3<f64>>)> {
    size_check("beta", psi.n_identity(), beta.len())?;
    size_check("phi", psi.n_expression(), phi.len())?;

    let mut verts: Vec<Vector3<f64>> = psi.template.iter().map(|p| p.coords).collect();
    for (coef, basis) in beta
        .iter()
        .zip(&psi.identity_basis)
        .chain(phi.iter().zip(&psi.expression_basis))
    {
        if *coef == 0.0 {
            continue;
        }
        for (v, d) in verts.iter_mut().zip(basis) {
            *v += d * *coef;
        }
    }

    let mut joints = psi.joints.clone();
    for (coef, basis) in beta.iter().zip(&psi.joint_identity_basis) {
        if *coef == 0.0 {
            continue;
        }
        for (j, d) in joints.iter_mut().zip(basis) {
            *j += d * *coef;
        }
    }
    Ok((verts.into_iter().map(Point3::from).collect(), joints))
}

/// Per-joint skinning transforms: rotations composed root to leaf, each
/// about its bind-pose joint location, with the root also translated by
/// `tau`. The result maps bind-pose points to posed points.
pub fn skinning_transforms(
    joints_bind: &[Point3<f64>],
    theta: &[Vector3<f64>],
    tau: &Vector3<f64>,
    parents: &[Option<usize>],
) -> Result<Vec<RigidTransform>> {
    let k = joints_bind.len();
    size_check("theta", k, theta.len())?;
    size_check("parents", k, parents.len())?;

    let mut world: Vec<RigidTransform> = Vec::with_capacity(k);
    for j in 0..k {
        let local = about_point(&theta[j], &joints_bind[j]);
        let transform = match parents[j] {
            None if j == 0 => RigidTransform::from_translation(*tau).compose(&local),
            Some(p) if p < j => world[p].compose(&local),
            Some(p) => return Err(Error::InvalidHierarchy { joint: j, parent: p }),
            None => return Err(Error::InvalidHierarchy { joint: j, parent: j }),
        };
        world.push(transform);
    }
    Ok(world)
}

/// Rotation by `rotvec` about `pivot`.
fn about_point(rotvec: &Vector3<f64>, pivot: &Point3<f64>) -> RigidTransform {
    let r = rotation_vector_to_matrix(rotvec);
    RigidTransform::from_parts_unchecked(r, pivot.coords - r * pivot.coords)
}

/// Linear blend skinning: each vertex is moved by the weight-blended joint
/// transforms.
pub fn lbs(v_bind: &VertexBlock, transforms: &[RigidTransform], weights: &[Vec<f64>]) -> VertexBlock {
    let mats: Vec<Matrix3x4<f64>> = transforms
        .iter()
        .map(|t| t.to_homogeneous().fixed_view::<3, 4>(0, 0).into_owned())
        .collect();
    v_bind
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let mut blend = Matrix3x4::zeros();
            for (m, w) in mats.iter().zip(weights) {
                let wv = w[v];
                if wv != 0.0 {
                    blend += m * wv;
                }
            }
            Point3::from(blend * p.to_homogeneous())
        })
        .collect()
}

/// Posed skin vertices `M(theta)`.
pub fn model_forward(psi: &ModelData, params: &ModelParams) -> Result<VertexBlock> {
    params.check(psi)?;
    let (v_bind, j_bind) = bind_pose(psi, &params.beta, &params.phi)?;
    let x = skinning_transforms(&j_bind, &params.theta, &params.tau, &psi.parents)?;
    Ok(lbs(&v_bind, &x, &psi.skin_weights))
}

/// Skull points moved by the head joint's skinning transform. Expression
/// parameters never enter this computation.
pub fn skull_forward(psi: &ModelData, params: &ModelParams) -> Result<VertexBlock> {
    params.check(psi)?;
    Ok(head_transform(psi, &params.beta, &params.theta, &params.tau)?.apply(&psi.skull))
}

/// Skinning transform of the head joint.
pub(crate) fn head_transform(
    psi: &ModelData,
    beta: &[f64],
    theta: &[Vector3<f64>],
    tau: &Vector3<f64>,
) -> Result<RigidTransform> {
    size_check("beta", psi.n_identity(), beta.len())?;
    let mut joints = psi.joints.clone();
    for (coef, basis) in beta.iter().zip(&psi.joint_identity_basis) {
        for (j, d) in joints.iter_mut().zip(basis) {
            *j += d * *coef;
        }
    }
    let x = skinning_transforms(&joints, theta, tau, &psi.parents)?;
    Ok(x[psi.head_joint])
}

/// Root rotation and translation `(theta_root, tau)` that make the whole
/// model move by the rigid motion `z` when every other joint is unrotated.
pub fn root_params_for(psi: &ModelData, beta: &[f64], z: &RigidTransform) -> Result<(Vector3<f64>, Vector3<f64>)> {
    size_check("beta", psi.n_identity(), beta.len())?;
    let mut root = psi.joints[0].coords;
    for (coef, basis) in beta.iter().zip(&psi.joint_identity_basis) {
        root += basis[0] * *coef;
    }
    let rotvec = matrix_to_rotation_vector(z.rotation());
    // Use the re-exponentiated rotation so the pivot compensation matches
    // what skinning_transforms will rebuild.
    let r = rotation_vector_to_matrix(&rotvec);
    let tau = z.translation() - root + r * root;
    Ok((rotvec, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_random_rigid;
    use crate::model::{synth_model, HEAD, JAW};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn psi() -> &'static ModelData {
        static PSI: OnceLock<ModelData> = OnceLock::new();
        PSI.get_or_init(|| synth_model(3, 642, 6, 8).unwrap())
    }

    fn random_params(psi: &ModelData, rng: &mut ChaCha8Rng) -> ModelParams {
        use rand::Rng;
        let mut p = ModelParams::zeros(psi);
        p.beta.iter_mut().for_each(|b| *b = rng.random_range(-2.0..2.0));
        p.phi.iter_mut().for_each(|b| *b = rng.random_range(0.0..1.0));
        p.theta
            .iter_mut()
            .for_each(|t| *t = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
        p.tau = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        p
    }

    #[test]
    fn zero_params_give_template() {
        let psi = psi();
        let p = ModelParams::zeros(psi);
        let (v, j) = bind_pose(psi, &p.beta, &p.phi).unwrap();
        assert_eq!(v, psi.template);
        assert_eq!(j, psi.joints);
        assert_eq!(model_forward(psi, &p).unwrap(), psi.template);
        assert_eq!(skull_forward(psi, &p).unwrap(), psi.skull);
    }

    #[test]
    fn single_identity_basis() {
        let psi = psi();
        let mut beta = vec![0.0; psi.n_identity()];
        beta[0] = 1.0;
        let (v, _) = bind_pose(psi, &beta, &vec![0.0; psi.n_expression()]).unwrap();
        for (i, p) in v.iter().enumerate() {
            assert_eq!(*p, psi.template[i] + psi.identity_basis[0][i]);
        }
    }

    #[test]
    fn bind_pose_is_affine_in_parameters() {
        let psi = psi();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_params(psi, &mut rng);
        let b = random_params(psi, &mut rng);
        let sum: Vec<f64> = a.beta.iter().zip(&b.beta).map(|(x, y)| x + y).collect();
        let phi0 = vec![0.0; psi.n_expression()];
        let (v_ab, _) = bind_pose(psi, &sum, &phi0).unwrap();
        let (v_a, _) = bind_pose(psi, &a.beta, &phi0).unwrap();
        let (v_b, _) = bind_pose(psi, &b.beta, &phi0).unwrap();
        for i in 0..psi.n_vertices() {
            let r = v_ab[i].coords - v_a[i].coords - v_b[i].coords + psi.template[i].coords;
            assert!(r.norm() < 1e-9);
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let psi = psi();
        assert!(bind_pose(psi, &[0.0], &vec![0.0; psi.n_expression()]).is_err());
    }

    #[test]
    fn unrotated_chain_propagates_root_translation() {
        let psi = psi();
        let theta = vec![Vector3::zeros(); 4];
        let x = skinning_transforms(&psi.joints, &theta, &Vector3::zeros(), &psi.parents).unwrap();
        assert!(x.iter().all(|t| *t == RigidTransform::identity()));
        let t = Vector3::new(1.0, -2.0, 3.0);
        let x = skinning_transforms(&psi.joints, &theta, &t, &psi.parents).unwrap();
        assert!(x.iter().all(|s| *s == RigidTransform::from_translation(t)));
    }

    #[test]
    fn child_rotation_does_not_move_ancestors() {
        let psi = psi();
        let mut theta = vec![Vector3::zeros(); 4];
        let base = skinning_transforms(&psi.joints, &theta, &Vector3::zeros(), &psi.parents).unwrap();
        theta[JAW] = Vector3::new(0.4, 0.0, 0.1);
        let moved = skinning_transforms(&psi.joints, &theta, &Vector3::zeros(), &psi.parents).unwrap();
        assert_eq!(base[HEAD], moved[HEAD]);
        assert_ne!(base[JAW], moved[JAW]);
    }

    #[test]
    fn cyclic_hierarchy_is_rejected() {
        let psi = psi();
        let theta = vec![Vector3::zeros(); 4];
        let parents = vec![None, Some(2), Some(1), Some(2)];
        assert!(matches!(
            skinning_transforms(&psi.joints, &theta, &Vector3::zeros(), &parents),
            Err(Error::InvalidHierarchy { .. })
        ));
    }

    #[test]
    fn lbs_cases() {
        let psi = psi();
        let ident = vec![RigidTransform::identity(); 4];
        assert_eq!(lbs(&psi.template, &ident, &psi.skin_weights), psi.template);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = sample_random_rigid(0.5, 20.0, &mut rng);
        let same = vec![s; 4];
        let moved = lbs(&psi.template, &same, &psi.skin_weights);
        assert!(moved.frobenius_distance(&s.apply(&psi.template)) < 1e-9);

        // one-hot weights pick a single transform
        let v = VertexBlock(vec![nalgebra::Point3::new(3.0, 4.0, 5.0)]);
        let xs: Vec<_> = (0..4).map(|_| sample_random_rigid(0.5, 10.0, &mut rng)).collect();
        let w = vec![vec![0.0], vec![0.0], vec![1.0], vec![0.0]];
        let out = lbs(&v, &xs, &w);
        assert!((out[0] - xs[2].transform_point(&v[0])).norm() < 1e-12);
    }

    #[test]
    fn forward_is_deterministic_and_translation_passes_through() {
        let psi = psi();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_params(psi, &mut rng);
        assert_eq!(model_forward(psi, &p).unwrap(), model_forward(psi, &p).unwrap());

        let mut q = ModelParams::zeros(psi);
        q.tau = Vector3::new(4.0, 5.0, -6.0);
        let out = model_forward(psi, &q).unwrap();
        let expected = RigidTransform::from_translation(q.tau).apply(&psi.template);
        assert!(out.frobenius_distance(&expected) < 1e-12);
    }

    #[test]
    fn skull_ignores_expression() {
        let psi = psi();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = random_params(psi, &mut rng);
        let b = random_params(psi, &mut rng);
        let skull_a = skull_forward(psi, &a).unwrap();
        a.phi = b.phi.clone();
        assert_eq!(skull_a, skull_forward(psi, &a).unwrap());
    }

    #[test]
    fn root_motion_moves_skin_and_skull_rigidly() {
        let psi = psi();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let mut p = random_params(psi, &mut rng);
            p.theta.iter_mut().for_each(|t| *t = Vector3::zeros());
            p.tau = Vector3::zeros();
            let rest_skin = model_forward(psi, &p).unwrap();
            let rest_skull = skull_forward(psi, &p).unwrap();

            let z = sample_random_rigid(0.4, 30.0, &mut rng);
            let (rot, tau) = root_params_for(psi, &p.beta, &z).unwrap();
            p.theta[0] = rot;
            p.tau = tau;
            let skin = model_forward(psi, &p).unwrap();
            let skull = skull_forward(psi, &p).unwrap();
            assert!(skin.frobenius_distance(&z.apply(&rest_skin)) / (skin.len() as f64).sqrt() < 1e-9);
            assert!(skull.frobenius_distance(&z.apply(&rest_skull)) / (skull.len() as f64).sqrt() < 1e-9);
        }
    }
}
