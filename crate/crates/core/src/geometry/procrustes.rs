//! Closed-form rigid alignment of corresponded point sets.
//!
//! Both routes reduce to the Kabsch solution: the rotation comes from the SVD
//! of the cross-covariance of the centered clouds, with the sign of the
//! smallest singular direction flipped when needed so the result is never a
//! reflection. No scale is estimated.

use nalgebra::{Matrix3, Point3, Vector3};

use super::transform::{RigidTransform, VertexBlock};
use crate::error::{Error, Result};

/// Relative size of the second singular value below which the
/// cross-covariance is treated as rank deficient (collinear clouds).
const RANK_TOLERANCE: f64 = 1e-12;

/// Rigid transform `S` minimizing `||S x - y||_F`.
pub fn procrustes_transform(x: &VertexBlock, y: &VertexBlock) -> Result<RigidTransform> {
    check_counts(x, y)?;
    kabsch(x.points(), y.points(), |_| 1.0)
}

/// `x` rigidly aligned onto `y`.
pub fn procrustes_align(x: &VertexBlock, y: &VertexBlock) -> Result<VertexBlock> {
    Ok(procrustes_transform(x, y)?.apply(x))
}

/// Rigid alignment of the weighted homogeneous blocks `W (.) us` onto
/// `W (.) ut`, where every homogeneous coordinate of point `i` is scaled by
/// `w[i]`.
///
/// Applying a rigid 4x4 matrix to a column `w_i [p_i; 1]` gives
/// `w_i [R p_i + t; 1]`, so the Frobenius objective is
/// `sum_i w_i^2 |R p_i + t - q_i|^2`: the minimizer is Kabsch with per-point
/// weights `w_i^2`.
pub fn weighted_procrustes(
    us: &VertexBlock,
    ut: &VertexBlock,
    w: &[f64],
) -> Result<RigidTransform> {
    check_counts(us, ut)?;
    if w.len() != us.len() {
        return Err(Error::CountMismatch {
            left: us.len(),
            right: w.len(),
        });
    }
    if !w.iter().any(|&wi| wi != 0.0) {
        return Err(Error::ZeroWeights);
    }
    kabsch(us.points(), ut.points(), |i| w[i] * w[i])
}

/// Objective `||S (W (.) us) - W (.) ut||_F^2` of [`weighted_procrustes`] for a
/// given transform.
pub fn weighted_residual(s: &RigidTransform, us: &VertexBlock, ut: &VertexBlock, w: &[f64]) -> f64 {
    us.iter()
        .zip(ut.iter())
        .zip(w)
        .map(|((p, q), wi)| wi * wi * (s.transform_point(p) - q).norm_squared())
        .sum()
}

fn check_counts(x: &VertexBlock, y: &VertexBlock) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::CountMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::TooFewPoints(x.len()));
    }
    Ok(())
}

fn kabsch(
    x: &[Point3<f64>],
    y: &[Point3<f64>],
    weight: impl Fn(usize) -> f64,
) -> Result<RigidTransform> {
    let mut total = 0.0;
    let mut cx = Vector3::zeros();
    let mut cy = Vector3::zeros();
    for (i, (p, q)) in x.iter().zip(y).enumerate() {
        let w = weight(i);
        total += w;
        cx += p.coords * w;
        cy += q.coords * w;
    }
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    cx /= total;
    cy /= total;

    let mut h = Matrix3::zeros();
    for (i, (p, q)) in x.iter().zip(y).enumerate() {
        let w = weight(i);
        if w != 0.0 {
            h += (p.coords - cx) * ((q.coords - cy) * w).transpose();
        }
    }

    let svd = h.svd(true, true);
    let mut sv = [
        svd.singular_values[0],
        svd.singular_values[1],
        svd.singular_values[2],
    ];
    sv.sort_by(|a, b| b.total_cmp(a));
    if !sv.iter().all(|s| s.is_finite()) || !(sv[1] > RANK_TOLERANCE * sv[0]) {
        return Err(Error::RankDeficient(sv));
    }

    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        // nalgebra does not order singular values; flip the smallest.
        let smallest = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("three singular values");
        d[(smallest, smallest)] = -1.0;
    }
    let r = v * d * u.transpose();
    let t = cy - r * cx;
    Ok(RigidTransform::from_parts_unchecked(r, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> VertexBlock {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                )
            })
            .collect()
    }

    fn random_rigid(rng: &mut ChaCha8Rng) -> RigidTransform {
        let t = Vector3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
        );
        RigidTransform::new(random_rotation(rng), t).unwrap()
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_cloud(&mut rng, 40);
        let s = procrustes_transform(&x, &x).unwrap();
        assert!(s.max_abs_diff(&RigidTransform::identity()) < 1e-9);
        assert!(procrustes_align(&x, &x).unwrap().frobenius_distance(&x) < 1e-9);
    }

    #[test]
    fn recovers_known_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = random_cloud(&mut rng, 30);
            let z = random_rigid(&mut rng);
            let y = z.apply(&x);
            let s = procrustes_transform(&x, &y).unwrap();
            assert!(s.max_abs_diff(&z) < 1e-6);
            // align(Z x, x) = x
            assert!(procrustes_align(&y, &x).unwrap().frobenius_distance(&x) < 1e-6);
        }
    }

    #[test]
    fn reflection_is_never_returned() {
        let tetra = VertexBlock(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ]);
        let mirrored: VertexBlock = tetra.iter().map(|p| Point3::new(p.x, p.y, -p.z)).collect();
        let s = procrustes_transform(&tetra, &mirrored).unwrap();
        assert!((s.rotation().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn alignment_never_increases_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let x = random_cloud(&mut rng, 20);
            let y = random_cloud(&mut rng, 20);
            let aligned = procrustes_align(&x, &y).unwrap();
            assert!(aligned.frobenius_distance(&y) <= x.frobenius_distance(&y) + 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let two = VertexBlock(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]);
        assert!(matches!(
            procrustes_transform(&two, &two),
            Err(Error::TooFewPoints(2))
        ));
        let line: VertexBlock = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            procrustes_transform(&line, &line),
            Err(Error::RankDeficient(_))
        ));
        let three = VertexBlock(vec![Point3::origin(); 3]);
        let four = VertexBlock(vec![Point3::origin(); 4]);
        assert!(matches!(
            procrustes_transform(&three, &four),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn unit_weights_reduce_to_plain_procrustes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_cloud(&mut rng, 25);
        let y = random_cloud(&mut rng, 25);
        let plain = procrustes_transform(&x, &y).unwrap();
        let ones = weighted_procrustes(&x, &y, &[1.0; 25]).unwrap();
        let halves = weighted_procrustes(&x, &y, &[0.5; 25]).unwrap();
        assert!(plain.max_abs_diff(&ones) < 1e-12);
        assert!(ones.max_abs_diff(&halves) < 1e-9);
    }

    #[test]
    fn zero_weights_mask_out_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_cloud(&mut rng, 30);
        let z = random_rigid(&mut rng);
        let mut y = z.apply(&x);
        let mut w = vec![1.0; 30];
        for i in 20..30 {
            y.0[i] += Vector3::new(5.0, -7.0, 3.0);
            w[i] = 0.0;
        }
        let s = weighted_procrustes(&x, &y, &w).unwrap();
        assert!(s.max_abs_diff(&z) < 1e-6);
        assert!(matches!(
            weighted_procrustes(&x, &y, &[0.0; 30]),
            Err(Error::ZeroWeights)
        ));
    }

    #[test]
    fn weighted_solution_is_a_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_cloud(&mut rng, 25);
        let y = random_cloud(&mut rng, 25);
        let w: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let s = weighted_procrustes(&x, &y, &w).unwrap();
        let best = weighted_residual(&s, &x, &y, &w);
        for _ in 0..200 {
            let small = crate::geometry::sample_random_rigid(0.01, 0.5, &mut rng);
            let probe = small.compose(&s);
            assert!(weighted_residual(&probe, &x, &y, &w) >= best - 1e-9);
        }
    }
}
