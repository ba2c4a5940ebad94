use rayon::prelude::*;

use super::{Point3, RigidTransform};
use crate::{Error, Result};

const NORMAL_UNIT_TOL: f64 = 1e-6;

/// Ordered list of 3D points with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Point3>>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            normals: None,
        })
    }

    /// Builds a cloud with normals. Normals must match the point count and have unit length.
    pub fn with_normals(points: Vec<Point3>, normals: Vec<Point3>) -> Result<Self> {
        check_finite(&points)?;
        if normals.len() != points.len() {
            return Err(Error::DimMismatch {
                expected: points.len(),
                found: normals.len(),
            });
        }
        for (i, n) in normals.iter().enumerate() {
            if !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > NORMAL_UNIT_TOL {
                return Err(Error::Validation(format!(
                    "normal {i} is not unit length (|n| = {})",
                    n.norm()
                )));
            }
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    /// Sub-cloud made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Applies `R·p + t` to every point; normals are rotated only.
    pub fn transformed(&self, transform: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| transform.transform_point(p))
                .collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| transform.rotation() * v).collect()),
        }
    }

    /// Multiplies every coordinate by `factor` about the origin. Normals are unchanged.
    pub fn scaled(&self, factor: f64) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p * factor).collect(),
            normals: self.normals.clone(),
        }
    }

    /// Replaces coordinates in place without re-validating normals.
    pub(crate) fn from_parts_unchecked(points: Vec<Point3>, normals: Option<Vec<Point3>>) -> Self {
        Self { points, normals }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Point3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }
}

fn check_finite(points: &[Point3]) -> Result<()> {
    match points
        .iter()
        .position(|p| !p.iter().all(|c| c.is_finite()))
    {
        Some(i) => Err(Error::Validation(format!(
            "point {i} has a non-finite coordinate"
        ))),
        None => Ok(()),
    }
}

/// Maximum pairwise distance, computed exhaustively.
pub fn diameter(cloud: &PointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("diameter of an empty cloud"));
    }
    let pts = cloud.points();
    let max_sq = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let p = pts[i];
            pts[i + 1..]
                .iter()
                .map(|q| (p - q).norm_squared())
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(max_sq.sqrt())
}

/// Applies a rigid transform to a cloud.
pub fn apply(transform: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    cloud.transformed(transform)
}
