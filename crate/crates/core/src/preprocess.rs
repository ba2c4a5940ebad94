//! Point sampling, statistical outlier removal and diameter normalization.
//!
//! The chain is fixed: sample both clouds, remove outliers from the target only, then scale
//! both clouds by the inverse of the query diameter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{diameter, PointCloud, RigidTransform, SpatialIndex};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub sample_count: usize,
    pub outlier_k: usize,
    pub outlier_std_ratio: f64,
    pub rng_seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            sample_count: 4000,
            outlier_k: 20,
            outlier_std_ratio: 2.0,
            rng_seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 || self.outlier_k == 0 {
            return Err(Error::InvalidArgument(
                "sample_count and outlier_k must be positive".into(),
            ));
        }
        if !(self.outlier_std_ratio > 0.0) {
            return Err(Error::InvalidArgument(
                "outlier_std_ratio must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A query/target pair with an optional ground-truth pose mapping query to target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub query: PointCloud,
    pub target: PointCloud,
    pub gt_pose: Option<RigidTransform>,
    /// Query diameter before normalization, in the original model units.
    pub query_diameter: f64,
}

impl ScenePair {
    /// Wraps raw clouds; `query_diameter` is measured from the query.
    pub fn new(query: PointCloud, target: PointCloud, gt_pose: Option<RigidTransform>) -> Result<Self> {
        let query_diameter = diameter(&query)?;
        Ok(Self {
            query,
            target,
            gt_pose,
            query_diameter,
        })
    }
}

/// Uniform sampling without replacement. Clouds no larger than `count` are returned as is;
/// otherwise the kept points stay in their original relative order.
pub fn sample_points(cloud: &PointCloud, count: usize, seed: u64) -> Result<PointCloud> {
    Ok(cloud.select(&sample_indices(cloud, count, seed, 0)?))
}

fn sample_indices(cloud: &PointCloud, count: usize, seed: u64, stream: u64) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot sample an empty cloud"));
    }
    if cloud.len() <= count {
        return Ok((0..cloud.len()).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut picked = rand::seq::index::sample(&mut rng, cloud.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Mean distance from each point to its `k` nearest neighbors, excluding the point itself.
pub fn mean_knn_distances(cloud: &PointCloud, k: usize) -> Vec<f64> {
    let index = SpatialIndex::new(cloud);
    cloud
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut nn = index.knn(p, k + 1);
            match nn.iter().position(|&(j, _)| j == i) {
                Some(pos) => {
                    nn.remove(pos);
                }
                None => {
                    nn.pop();
                }
            }
            nn.iter().map(|&(_, d)| d).sum::<f64>() / k as f64
        })
        .collect()
}

/// Removes points whose mean k-NN distance exceeds `mean + std_ratio · std` of those means.
/// Nothing is removed when the spread is zero. Returns the kept cloud and kept indices.
pub fn remove_statistical_outliers(
    cloud: &PointCloud,
    k: usize,
    std_ratio: f64,
) -> Result<(PointCloud, Vec<usize>)> {
    if k == 0 || cloud.len() <= k {
        return Err(Error::InvalidArgument(format!(
            "outlier removal needs more than k = {k} points, got {}",
            cloud.len()
        )));
    }
    if !(std_ratio > 0.0) {
        return Err(Error::InvalidArgument("std_ratio must be positive".into()));
    }
    let means = mean_knn_distances(cloud, k);
    let n = means.len() as f64;
    let global_mean = means.iter().sum::<f64>() / n;
    let global_std = (means.iter().map(|m| (m - global_mean).powi(2)).sum::<f64>() / n).sqrt();

    let kept: Vec<usize> = if global_std == 0.0 {
        (0..cloud.len()).collect()
    } else {
        let limit = global_mean + std_ratio * global_std;
        (0..cloud.len()).filter(|&i| means[i] <= limit).collect()
    };
    Ok((cloud.select(&kept), kept))
}

/// Scales both clouds and the ground-truth translation by `1 / diameter(query)` about the
/// origin. The rotation is unchanged and `query_diameter` records the pre-scale value.
pub fn normalize_pair(pair: &ScenePair) -> Result<ScenePair> {
    let d = diameter(&pair.query)?;
    if !(d > 0.0) {
        return Err(Error::Degenerate("query diameter is zero".into()));
    }
    let s = 1.0 / d;
    Ok(ScenePair {
        query: pair.query.scaled(s),
        target: pair.target.scaled(s),
        gt_pose: pair.gt_pose.map(|t| t.scaled(s)),
        query_diameter: d,
    })
}

/// Full chain: sample both clouds, remove target outliers, normalize.
pub fn preprocess_pair(pair: &ScenePair, config: &PreprocessConfig) -> Result<ScenePair> {
    config.validate()?;
    let query = pair
        .query
        .select(&sample_indices(&pair.query, config.sample_count, config.rng_seed, 0)?);
    let target = pair
        .target
        .select(&sample_indices(&pair.target, config.sample_count, config.rng_seed, 1)?);
    let target = if target.len() > config.outlier_k {
        remove_statistical_outliers(&target, config.outlier_k, config.outlier_std_ratio)?.0
    } else {
        target
    };
    normalize_pair(&ScenePair {
        query,
        target,
        gt_pose: pair.gt_pose,
        query_diameter: pair.query_diameter,
    })
}
