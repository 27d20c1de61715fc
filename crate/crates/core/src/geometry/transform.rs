use std::ops::{Index, Mul};

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance used when validating that a matrix is a proper rotation.
pub const RIGID_TOLERANCE: f64 = 1e-6;

/// A proper rigid motion `x -> R x + t` in millimeters.
///
/// Serialized as the 16 entries of the homogeneous 4x4 matrix in row-major
/// order with bottom row `(0, 0, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is orthonormal with
    /// determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::NotRigid("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform without validation. Callers guarantee `rotation`
    /// comes from a construction that is orthonormal by design.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Result<Self> {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn apply(&self, block: &VertexBlock) -> VertexBlock {
        VertexBlock(block.0.iter().map(|p| self.transform_point(p)).collect())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::NotRigid(format!("bottom row {bottom:?}")));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// The 16 homogeneous entries in row-major order.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self> {
        Self::from_homogeneous(&Matrix4::from_row_slice(values))
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    /// Largest absolute entry-wise difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.to_homogeneous() - other.to_homogeneous()).amax()
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::NotRigid("non-finite rotation".into()));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    if ortho > RIGID_TOLERANCE {
        return Err(Error::NotRigid(format!("orthonormality error {ortho:e}")));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > RIGID_TOLERANCE {
        return Err(Error::NotRigid(format!("determinant {det}")));
    }
    Ok(())
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = <[f64; 16]>::deserialize(deserializer)?;
        RigidTransform::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// An ordered set of 3D points in millimeters. The homogeneous coordinate is
/// implicit and always 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VertexBlock(pub Vec<Point3<f64>>);

impl VertexBlock {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self(points)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3<f64>> {
        self.0.iter()
    }

    /// Picks the points at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> VertexBlock {
        VertexBlock(indices.iter().map(|&i| self.0[i]).collect())
    }

    pub fn centroid(&self) -> Point3<f64> {
        let n = self.0.len().max(1) as f64;
        let sum = self
            .0
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / n)
    }

    /// Frobenius distance between two equally sized blocks.
    pub fn frobenius_distance(&self, other: &VertexBlock) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Flat `x0 y0 z0 x1 ...` coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(values: &[f64]) -> VertexBlock {
        VertexBlock(
            values
                .chunks_exact(3)
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    /// Coordinates rounded to single precision, as stored on disk.
    pub fn round_f32(&self) -> VertexBlock {
        self.iter()
            .map(|p| Point3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64))
            .collect()
    }
}

impl Index<usize> for VertexBlock {
    type Output = Point3<f64>;

    fn index(&self, i: usize) -> &Point3<f64> {
        &self.0[i]
    }
}

impl FromIterator<Point3<f64>> for VertexBlock {
    fn from_iter<I: IntoIterator<Item = Point3<f64>>>(iter: I) -> Self {
        VertexBlock(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation::angle_axis_to_matrix;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_identity_and_inverse() {
        let i = RigidTransform::identity();
        assert_eq!(i.compose(&i), i);

        let r = angle_axis_to_matrix(0.7, &Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let s = RigidTransform::new(r, Vector3::new(3.0, -1.0, 8.0)).unwrap();
        assert!(s.compose(&s.inverse()).max_abs_diff(&i) < 1e-9);
        assert!(s.inverse().compose(&s).max_abs_diff(&i) < 1e-9);
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let z = Vector3::z();
        let rz90 = RigidTransform::from_rotation(angle_axis_to_matrix(FRAC_PI_2, &z).unwrap())
            .unwrap();
        // Rz(180) written out by hand.
        let rz180 = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        let got = rz90 * rz90;
        assert!((got.rotation() - rz180).amax() < 1e-12);
    }

    #[test]
    fn inverse_of_translation() {
        let t = Vector3::new(1.0, 2.0, -3.0);
        let inv = RigidTransform::from_translation(t).inverse();
        assert_eq!(*inv.translation(), -t);
        assert_eq!(*inv.rotation(), Matrix3::identity());
    }

    #[test]
    fn apply_translation_to_origin() {
        let s = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let v = VertexBlock(vec![Point3::origin()]);
        assert_eq!(s.apply(&v)[0], Point3::new(1.0, 0.0, 0.0));
        assert_eq!(RigidTransform::identity().apply(&v), v);
    }

    #[test]
    fn rejects_non_rigid_matrices() {
        let scaled = Matrix3::identity() * 2.0;
        assert!(RigidTransform::new(scaled, Vector3::zeros()).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflection, Vector3::zeros()).is_err());
        let mut m = Matrix4::identity();
        m[(3, 0)] = 0.1;
        assert!(RigidTransform::from_homogeneous(&m).is_err());
    }

    #[test]
    fn serde_is_row_major_sixteen() {
        let s = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            "[1.0,0.0,0.0,1.0,0.0,1.0,0.0,2.0,0.0,0.0,1.0,3.0,0.0,0.0,0.0,1.0]"
        );
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
