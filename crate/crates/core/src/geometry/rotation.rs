//! Angle-axis and 6D rotation encodings.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

/// Relative threshold below which 6D columns are considered degenerate.
const DEGENERATE_6D: f64 = 1e-9;

/// Rodrigues' formula. The axis is normalized internally.
pub fn angle_axis_to_matrix(angle: f64, axis: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = axis.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroAxis);
    }
    let a = axis / norm;
    let (s, c) = angle.sin_cos();
    let k = a.cross_matrix();
    Ok(Matrix3::identity() + k * s + k * k * (1.0 - c))
}

/// Rotation vector (axis scaled by angle) to matrix; the zero vector maps to
/// the identity.
pub fn rotation_vector_to_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    let angle = v.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    angle_axis_to_matrix(angle, v).expect("nonzero axis")
}

/// Inverse of [`rotation_vector_to_matrix`] for angles in `[0, pi]`.
pub fn matrix_to_rotation_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// A rotation encoded by its first two matrix columns, `[c1; c2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub fn encode(r: &Matrix3<f64>) -> Self {
        Rotation6D([
            r[(0, 0)],
            r[(1, 0)],
            r[(2, 0)],
            r[(0, 1)],
            r[(1, 1)],
            r[(2, 1)],
        ])
    }

    /// Gram-Schmidt orthonormalization of the two columns; the third column
    /// is their cross product.
    pub fn decode(&self) -> Result<Matrix3<f64>> {
        let frame = GramSchmidt::new(&self.0)?;
        Ok(frame.matrix())
    }
}

/// Intermediate values of the 6D decode, kept for backpropagation.
#[derive(Debug, Clone, Copy)]
pub struct GramSchmidt {
    a1_norm: f64,
    u2_norm: f64,
    a2: Vector3<f64>,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
}

impl GramSchmidt {
    pub fn new(raw: &[f64; 6]) -> Result<Self> {
        let a1 = Vector3::new(raw[0], raw[1], raw[2]);
        let a2 = Vector3::new(raw[3], raw[4], raw[5]);
        if !raw.iter().all(|x| x.is_finite()) {
            return Err(Error::DegenerateRotation6D(format!("non-finite input {raw:?}")));
        }
        let a1_norm = a1.norm();
        if a1_norm <= f64::MIN_POSITIVE {
            return Err(Error::DegenerateRotation6D(format!(
                "first column is zero ({raw:?})"
            )));
        }
        let b1 = a1 / a1_norm;
        let u2 = a2 - b1 * b1.dot(&a2);
        let u2_norm = u2.norm();
        if u2_norm <= DEGENERATE_6D * a2.norm() || u2_norm <= f64::MIN_POSITIVE {
            return Err(Error::DegenerateRotation6D(format!(
                "columns are parallel or second is zero ({raw:?})"
            )));
        }
        let b2 = u2 / u2_norm;
        let b3 = b1.cross(&b2);
        Ok(Self {
            a1_norm,
            u2_norm,
            a2,
            b1,
            b2,
            b3,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.b1, self.b2, self.b3])
    }

    /// Pulls a gradient with respect to the decoded matrix back onto the six
    /// raw inputs.
    pub fn backward(&self, grad_r: &Matrix3<f64>) -> [f64; 6] {
        let g1 = grad_r.column(0).into_owned();
        let g2 = grad_r.column(1).into_owned();
        let g3 = grad_r.column(2).into_owned();

        // b3 = b1 x b2
        let mut g_b1 = g1 + self.b2.cross(&g3);
        let g_b2 = g2 + g3.cross(&self.b1);

        // b2 = u2 / |u2|
        let g_u2 = (g_b2 - self.b2 * self.b2.dot(&g_b2)) / self.u2_norm;

        // u2 = a2 - (b1 . a2) b1
        let proj = self.b1.dot(&self.a2);
        let g_a2 = g_u2 - self.b1 * self.b1.dot(&g_u2);
        g_b1 -= g_u2 * proj + self.a2 * g_u2.dot(&self.b1);

        // b1 = a1 / |a1|
        let g_a1 = (g_b1 - self.b1 * self.b1.dot(&g_b1)) / self.a1_norm;

        [g_a1.x, g_a1.y, g_a1.z, g_a2.x, g_a2.y, g_a2.z]
    }
}

/// Uniformly distributed random rotation.
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let q = nalgebra::Quaternion::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    Unit::new_normalize(q).to_rotation_matrix().into_inner()
}
