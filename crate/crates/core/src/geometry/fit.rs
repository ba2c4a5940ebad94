use nalgebra::Matrix3;

use super::{Point3, RigidTransform};
use crate::{Error, Result};

/// Relative rank threshold on the cross-covariance singular values.
const RANK_TOL: f64 = 1e-10;

/// Least-squares rigid transform mapping `source[i]` onto `target[i]`.
///
/// Centroids are subtracted and the 3×3 cross-covariance is decomposed by SVD. When the
/// resulting orthogonal matrix is a reflection, the singular direction with the smallest
/// singular value is flipped.
pub fn fit_rigid(source: &[Point3], target: &[Point3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "fit_rigid needs equal lengths, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: source.len(),
        });
    }
    let n = source.len() as f64;
    let cs = source.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let ct = target.iter().fold(Point3::zeros(), |a, p| a + p) / n;

    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }

    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (s_max, s_mid) = (sv[order[0]], sv[order[1]]);
    if !(s_max > 0.0) || !(s_mid > RANK_TOL * s_max) {
        return Err(Error::Degenerate(format!(
            "cross-covariance is rank deficient (singular values {:.3e}, {:.3e}, {:.3e})",
            sv[order[0]], sv[order[1]], sv[order[2]]
        )));
    }

    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let mut rotation = v * u.transpose();
    if rotation.determinant() < 0.0 {
        let mut v_fixed = v;
        let weakest = order[2];
        v_fixed.column_mut(weakest).neg_mut();
        rotation = v_fixed * u.transpose();
    }
    let translation = ct - rotation * cs;
    RigidTransform::new(rotation, translation)
}
