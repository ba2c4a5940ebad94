use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Unit};
use serde::{Deserialize, Serialize};

use super::Point3;
use crate::{Error, Result};

/// Tolerance for orthonormality and unit determinant of a rotation block.
pub const SO3_TOL: f64 = 1e-9;

/// Rigid transform `x ↦ R·x + t` with `R ∈ SO(3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Point3,
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
            translation: Point3::zeros(),
        }
    }

    /// Validates that `rotation` lies in SO(3) within [`SO3_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Point3) -> Result<Self> {
        check_so3(&rotation, SO3_TOL)?;
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Point3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Point3, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self {
            rotation: *r.matrix(),
            translation: Point3::zeros(),
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: Point3::zeros(),
        }
    }

    /// Rotation vector (axis · angle) exponential map.
    pub fn from_scaled_axis(axis_angle: Point3, translation: Point3) -> Self {
        Self {
            rotation: *Rotation3::new(axis_angle).matrix(),
            translation,
        }
    }

    pub fn with_translation(mut self, translation: Point3) -> Self {
        self.translation = translation;
        self
    }

    /// Builds a transform from a homogeneous matrix. The rotation block must be in SO(3)
    /// within `tol`. Blocks that miss the strict tolerance are projected onto SO(3);
    /// exact rotations pass through unchanged.
    pub fn from_matrix4(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation("pose contains non-finite values".into()));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Validation(format!(
                "last pose row must be 0 0 0 1, got {bottom:?}"
            )));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        check_so3(&r, tol)?;
        let rotation = if check_so3(&r, SO3_TOL).is_ok() { r } else { project_to_so3(&r) };
        Ok(Self {
            rotation,
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Point3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
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

    /// Geodesic angle between the rotation blocks of two transforms.
    pub fn rotation_error(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose()))
    }

    pub fn translation_error(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Same transform expressed in coordinates scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation,
            translation: self.translation * factor,
        }
    }
}

/// Rotation angle of a rotation matrix in `[0, π]`.
///
/// Equal to `acos((tr R − 1) / 2)` but evaluated with `atan2` so that angles near zero
/// keep full precision.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = 0.5 * (r.trace() - 1.0);
    let sin = 0.5
        * Point3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm();
    sin.atan2(cos)
}

fn check_so3(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !(ortho <= tol) || !((det - 1.0).abs() <= tol) {
        return Err(Error::Validation(format!(
            "rotation is not in SO(3): max |RᵀR − I| = {ortho:.3e}, det = {det:.9}"
        )));
    }
    Ok(())
}

fn project_to_so3(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        RawTransform {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: t.translation.into(),
        }
    }
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = Error;

    fn try_from(raw: RawTransform) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| raw.rotation[i][j]);
        // Serialized poses carry full precision, so the strict tolerance applies.
        RigidTransform::new(r, Point3::from(raw.translation))
    }
}
