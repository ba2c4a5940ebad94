//! Ground-truth correspondences from target to query, and feature transfer through them.
//!
//! Given the ground-truth pose, every target point is assigned the query point that lands
//! closest to it once the query is moved into the target frame. Copying query features
//! through that map yields target supervision without evaluating a teacher on the target.

use rayon::prelude::*;

use crate::descriptors::{nearest_rows, DescriptorSet};
use crate::geometry::{diameter, PointCloud, RigidTransform, SpatialIndex};
use crate::{Error, Result};

/// Per-target-point index into the query cloud, with the metric residual of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    target_to_query: Vec<usize>,
    residuals: Vec<f64>,
    query_len: usize,
}

impl CorrespondenceMap {
    /// Builds a map from explicit indices. Residuals default to zero when not known.
    pub fn new(target_to_query: Vec<usize>, residuals: Vec<f64>, query_len: usize) -> Result<Self> {
        if residuals.len() != target_to_query.len() {
            return Err(Error::DimMismatch {
                expected: target_to_query.len(),
                found: residuals.len(),
            });
        }
        if let Some(&bad) = target_to_query.iter().find(|&&i| i >= query_len) {
            return Err(Error::Consistency(format!(
                "query index {bad} out of range for {query_len} points"
            )));
        }
        if residuals.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Validation("residuals must be finite and non-negative".into()));
        }
        Ok(Self {
            target_to_query,
            residuals,
            query_len,
        })
    }

    pub fn len(&self) -> usize {
        self.target_to_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_to_query.is_empty()
    }

    pub fn target_to_query(&self) -> &[usize] {
        &self.target_to_query
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn query_len(&self) -> usize {
        self.query_len
    }
}

/// For each target point, the query point minimizing `‖gt·q − p‖`. Ties go to the lowest
/// query index.
pub fn build_gamma(query: &PointCloud, target: &PointCloud, gt: &RigidTransform) -> Result<CorrespondenceMap> {
    if query.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("correspondences need two non-empty clouds"));
    }
    let index = SpatialIndex::new(&query.transformed(gt));
    let (target_to_query, residuals): (Vec<usize>, Vec<f64>) = target
        .points()
        .par_iter()
        .map(|p| index.nearest(p).expect("index is non-empty"))
        .unzip();
    Ok(CorrespondenceMap {
        target_to_query,
        residuals,
        query_len: query.len(),
    })
}

/// Copies query descriptors onto target points: row `i` of the result is row `gamma[i]`.
pub fn transfer_features(gamma: &CorrespondenceMap, query_features: &DescriptorSet) -> Result<DescriptorSet> {
    query_features.gather(gamma.target_to_query())
}

/// Fraction of target points whose feature-space nearest query point lies, after moving the
/// query by `gt`, within `tau1_fraction · diameter(query)` of the target point.
pub fn matchable_fraction(
    query_features: &DescriptorSet,
    target_features: &DescriptorSet,
    query: &PointCloud,
    target: &PointCloud,
    gt: &RigidTransform,
    tau1_fraction: f64,
) -> Result<f64> {
    if query_features.dim() != target_features.dim() {
        return Err(Error::DimMismatch {
            expected: query_features.dim(),
            found: target_features.dim(),
        });
    }
    check_rows(query_features, query, "query")?;
    check_rows(target_features, target, "target")?;
    let tau = tau1_fraction * diameter(query)?;
    let nn = nearest_rows(query_features, target_features)?;
    let hits = nn
        .iter()
        .zip(target.points())
        .filter(|((qi, _), p)| (gt.transform_point(&query.point(*qi)) - *p).norm() <= tau)
        .count();
    Ok(hits as f64 / target.len() as f64)
}

pub(crate) fn check_rows(features: &DescriptorSet, cloud: &PointCloud, what: &str) -> Result<()> {
    if features.len() != cloud.len() {
        return Err(Error::Consistency(format!(
            "{} {what} descriptors for {} points",
            features.len(),
            cloud.len()
        )));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput("empty cloud"));
    }
    Ok(())
}
