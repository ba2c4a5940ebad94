//! Feature-quality metrics (RON, FMR) and pose-error metrics with recall aggregation.
//!
//! RON is the fraction of query points whose feature-space nearest target point is within
//! `τ₁` of the ground-truth location. FMR is the fraction of query/target pairs whose RON
//! exceeds `τ₂`. The recall surrogate averages MSSD recall over diameter-relative thresholds;
//! it needs no renderer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::check_rows;
use crate::descriptors::{nearest_rows, DescriptorSet};
use crate::geometry::{diameter, PointCloud, RigidTransform, SpatialIndex};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricThresholds {
    /// RON distance threshold as a fraction of the query diameter.
    pub tau1_fraction: f64,
    /// FMR threshold on RON.
    pub tau2: f64,
    /// MSSD recall thresholds as fractions of the model diameter, ascending.
    pub recall_thresholds: Vec<f64>,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            tau1_fraction: 0.03,
            tau2: 0.05,
            recall_thresholds: default_recall_thresholds(),
        }
    }
}

impl MetricThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1_fraction > 0.0 && self.tau2 > 0.0) {
            return Err(Error::InvalidArgument("tau thresholds must be positive".into()));
        }
        if self.recall_thresholds.is_empty()
            || self.recall_thresholds.iter().any(|&t| !(t > 0.0))
            || self.recall_thresholds.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::InvalidArgument(
                "recall thresholds must be positive and sorted ascending".into(),
            ));
        }
        Ok(())
    }
}

/// 0.05, 0.10, …, 0.50.
pub fn default_recall_thresholds() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.05).collect()
}

/// Ratio of query points whose feature-space nearest target point lies within
/// `tau1_fraction · diameter(query)` of the ground-truth-transformed query point.
pub fn ron(
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
    let nn = nearest_rows(target_features, query_features)?;
    let hits = nn
        .iter()
        .zip(query.points())
        .filter(|((tj, _), q)| (gt.transform_point(q) - target.point(*tj)).norm() <= tau)
        .count();
    Ok(hits as f64 / query.len() as f64)
}

/// Fraction of RON values strictly above `tau2`.
pub fn fmr(ron_values: &[f64], tau2: f64) -> Result<f64> {
    if ron_values.is_empty() {
        return Err(Error::EmptyInput("FMR over zero pairs"));
    }
    let above = ron_values.iter().filter(|&&r| r > tau2).count();
    Ok(above as f64 / ron_values.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    /// Relative rotation error in radians.
    pub rre: f64,
    /// Relative translation error.
    pub rte: f64,
    pub add: f64,
    pub add_s: f64,
    pub mssd: f64,
}

/// Pose errors of `est` against `gt` on the model points.
///
/// `symmetries` are model-frame transforms under which the object looks the same; the
/// identity is always considered even when absent from the list.
pub fn pose_errors(
    est: &RigidTransform,
    gt: &RigidTransform,
    model: &PointCloud,
    symmetries: &[RigidTransform],
) -> Result<PoseErrors> {
    if model.is_empty() {
        return Err(Error::EmptyInput("pose errors need model points"));
    }
    let pts = model.points();
    let n = pts.len() as f64;
    let est_pts: Vec<_> = pts.iter().map(|x| est.transform_point(x)).collect();
    let gt_pts: Vec<_> = pts.iter().map(|x| gt.transform_point(x)).collect();

    let add = est_pts.iter().zip(&gt_pts).map(|(a, b)| (a - b).norm()).sum::<f64>() / n;

    let gt_index = SpatialIndex::from_points(gt_pts.clone());
    let add_s = est_pts
        .par_iter()
        .map(|p| gt_index.nearest(p).expect("non-empty").1)
        .collect::<Vec<_>>()
        .iter()
        .sum::<f64>()
        / n;

    let max_disp = |sym: &RigidTransform| -> f64 {
        let moved = gt.compose(sym);
        est_pts
            .iter()
            .zip(pts)
            .map(|(e, x)| (e - moved.transform_point(x)).norm())
            .fold(0.0, f64::max)
    };
    let mssd = symmetries
        .iter()
        .map(max_disp)
        .fold(max_disp(&RigidTransform::identity()), f64::min);

    Ok(PoseErrors {
        rre: est.rotation_error(gt),
        rte: est.translation_error(gt),
        add,
        add_s,
        mssd,
    })
}

/// One evaluated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: String,
    pub ron: f64,
    pub errors: PoseErrors,
    /// Diameter of the model in the units of `errors`.
    pub model_diameter: f64,
    /// `mssd < θ · model_diameter` for each recall threshold θ.
    pub success: Vec<bool>,
}

impl EvalRecord {
    pub fn new(scene_id: impl Into<String>, ron: f64, errors: PoseErrors, model_diameter: f64, thresholds: &[f64]) -> Self {
        let success = thresholds
            .iter()
            .map(|t| errors.mssd < t * model_diameter)
            .collect();
        Self {
            scene_id: scene_id.into(),
            ron,
            errors,
            model_diameter,
            success,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallStatistic {
    Mssd,
}

/// Mean over thresholds θ of the fraction of records with error below `θ · diameter`.
pub fn average_recall(records: &[EvalRecord], thresholds: &[f64], statistic: RecallStatistic) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("average recall over zero records"));
    }
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("average recall needs thresholds"));
    }
    let value = |r: &EvalRecord| match statistic {
        RecallStatistic::Mssd => r.errors.mssd,
    };
    let total: f64 = thresholds
        .iter()
        .map(|t| {
            let hits = records.iter().filter(|r| value(r) < t * r.model_diameter).count();
            hits as f64 / records.len() as f64
        })
        .sum();
    Ok(total / thresholds.len() as f64)
}
