//! Feature matching and pose solving: feature-space nearest neighbors, triplet RANSAC with
//! edge-length consistency rejection, least-squares fitting, and ICP refinement.

mod icp;
mod ransac;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{nearest_rows, DescriptorSet};
use crate::geometry::RigidTransform;
use crate::preprocess::ScenePair;
use crate::{Error, Result};

pub use icp::{estimate_normals, icp_refine, IcpConfig, IcpVariant};
pub use ransac::{
    evaluate_hypothesis, ransac_register, triplet_consistent, Hypothesis, HypothesisOutcome,
    RansacConfig,
};

/// A putative match between query point `query` and target point `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub query: usize,
    pub target: usize,
    /// Feature-space distance of the pair.
    pub distance: f64,
}

/// Wall-clock seconds spent in each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub matching: f64,
    pub ransac: f64,
    pub icp: f64,
}

/// Outcome of a registration stage or of the full pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pose: RigidTransform,
    pub inlier_ratio: f64,
    pub inlier_count: usize,
    pub correspondence_count: usize,
    pub ransac_iterations_run: usize,
    pub icp_iterations_run: usize,
    pub icp_rmse: f64,
    /// Mean objective over the current correspondences, one entry per ICP iteration.
    #[serde(skip)]
    pub icp_objective_history: Vec<f64>,
    pub timings: StageTimings,
}

impl MatchReport {
    pub(crate) fn from_pose(pose: RigidTransform) -> Self {
        Self {
            pose,
            inlier_ratio: 0.0,
            inlier_count: 0,
            correspondence_count: 0,
            ransac_iterations_run: 0,
            icp_iterations_run: 0,
            icp_rmse: 0.0,
            icp_objective_history: Vec::new(),
            timings: StageTimings::default(),
        }
    }
}

/// For every query row, its nearest target row in feature space (ties → lowest index).
pub fn match_features(query_features: &DescriptorSet, target_features: &DescriptorSet) -> Result<Vec<Correspondence>> {
    if query_features.is_empty() || target_features.is_empty() {
        return Err(Error::EmptyInput("feature matching needs non-empty descriptor sets"));
    }
    let nn = nearest_rows(target_features, query_features)?;
    Ok(nn
        .into_par_iter()
        .enumerate()
        .map(|(q, (t, d2))| Correspondence {
            query: q,
            target: t,
            distance: d2.sqrt(),
        })
        .collect())
}

/// Feature matching, RANSAC and ICP on a preprocessed pair.
pub fn estimate_pose(
    pair: &ScenePair,
    query_features: &DescriptorSet,
    target_features: &DescriptorSet,
    ransac: &RansacConfig,
    icp: &IcpConfig,
) -> Result<MatchReport> {
    if pair.query.is_empty() || pair.target.is_empty() {
        return Err(Error::EmptyInput("pose estimation needs non-empty clouds"));
    }
    crate::correspondence::check_rows(query_features, &pair.query, "query")?;
    crate::correspondence::check_rows(target_features, &pair.target, "target")?;

    let start = Instant::now();
    let correspondences = match_features(query_features, target_features)?;
    let matching = start.elapsed().as_secs_f64();

    let coarse = ransac_register(&correspondences, &pair.query, &pair.target, ransac)?;
    let fine = icp_refine(&coarse.pose, &pair.query, &pair.target, icp)?;

    Ok(MatchReport {
        pose: fine.pose,
        icp_iterations_run: fine.icp_iterations_run,
        icp_rmse: fine.icp_rmse,
        icp_objective_history: fine.icp_objective_history,
        timings: StageTimings {
            matching,
            ransac: coarse.timings.ransac,
            icp: fine.timings.icp,
        },
        ..coarse
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::{build_gamma, transfer_features};
    use crate::descriptors::SourceTag;
    use crate::geometry::{Point3, PointCloud};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> DescriptorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DescriptorSet::new((0..n * d).map(|_| rng.random::<f64>()).collect(), d, SourceTag::Toy).unwrap()
    }

    #[test]
    fn self_match_is_identity() {
        let f = random_rows(50, 8, 1);
        let m = match_features(&f, &f).unwrap();
        for (i, c) in m.iter().enumerate() {
            assert_eq!((c.query, c.target, c.distance), (i, i, 0.0));
        }
    }

    #[test]
    fn single_target_row() {
        let q = random_rows(10, 4, 2);
        let t = random_rows(1, 4, 3);
        assert!(match_features(&q, &t).unwrap().iter().all(|c| c.target == 0));
        assert!(match_features(&q, &random_rows(1, 5, 3)).is_err());
    }

    #[test]
    fn ideal_features_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let query = PointCloud::new(
            (0..400)
                .map(|_| Point3::new(rng.random(), rng.random::<f64>() * 0.6, rng.random::<f64>() * 0.3))
                .collect(),
        )
        .unwrap();
        let gt = RigidTransform::from_axis_angle(&Point3::new(1.0, 0.3, -0.2), 1.3)
            .with_translation(Point3::new(0.2, 0.4, -0.6));
        let target = query.transformed(&gt);
        let qf = random_rows(400, 32, 5);
        let tf = transfer_features(&build_gamma(&query, &target, &gt).unwrap(), &qf).unwrap();
        let pair = ScenePair::new(query, target, Some(gt)).unwrap();
        let ransac = RansacConfig {
            iterations: 1000,
            ..RansacConfig::default()
        };
        let report = estimate_pose(&pair, &qf, &tf, &ransac, &IcpConfig::default()).unwrap();
        assert!(report.pose.rotation_error(&gt) < 1e-6);
        assert_eq!(report.inlier_ratio, 1.0);
    }

    #[test]
    fn empty_target_is_rejected() {
        let q = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let pair = ScenePair {
            query: q,
            target: PointCloud::default(),
            gt_pose: None,
            query_diameter: 1.0,
        };
        let f = random_rows(2, 4, 0);
        let empty = DescriptorSet::new(Vec::new(), 4, SourceTag::Toy).unwrap();
        assert!(matches!(
            estimate_pose(&pair, &f, &empty, &RansacConfig::default(), &IcpConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }
}
