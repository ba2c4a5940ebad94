//! Seeded augmentations: uniform random rotation, Gaussian jitter and point dropout.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::{Error, Result};

/// Minimum number of points a dropout keeps.
pub const MIN_KEPT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rotation: bool,
    pub jitter_sigma: f64,
    pub dropout_prob: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation: true,
            jitter_sigma: 0.005,
            dropout_prob: 0.2,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidArgument("jitter sigma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidArgument("dropout probability must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Rotation drawn uniformly over SO(3): a normalized 4D Gaussian is a uniform unit quaternion.
pub fn random_rotation(seed: u64) -> RigidTransform {
    let mut r = rng(seed, 0);
    loop {
        let c: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut r));
        let q = Quaternion::new(c[0], c[1], c[2], c[3]);
        if q.norm() > 1e-12 {
            return RigidTransform::from_quaternion(&UnitQuaternion::from_quaternion(q));
        }
    }
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `sigma` to every coordinate.
pub fn jitter(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument("jitter sigma must be non-negative".into()));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut r = rng(seed, 1);
    let points = cloud
        .points()
        .iter()
        .map(|p| p + Point3::from_fn(|_, _| normal.sample(&mut r)))
        .collect();
    Ok(PointCloud::from_parts_unchecked(
        points,
        cloud.normals().map(<[Point3]>::to_vec),
    ))
}

/// Keeps each point with probability `1 − prob`, preserving order.
pub fn point_dropout(cloud: &PointCloud, prob: f64, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    if !(0.0..1.0).contains(&prob) {
        return Err(Error::InvalidArgument("dropout probability must lie in [0, 1)".into()));
    }
    let mut r = rng(seed, 2);
    let mask: Vec<bool> = (0..cloud.len()).map(|_| r.random::<f64>() >= prob).collect();
    Ok(apply_dropout_mask(cloud, &mask))
}

/// Keeps the points flagged in `mask`. When fewer than three survive, the three
/// lowest-index points are kept instead.
pub fn apply_dropout_mask(cloud: &PointCloud, mask: &[bool]) -> (PointCloud, Vec<usize>) {
    let mut kept: Vec<usize> = (0..cloud.len()).filter(|&i| mask[i]).collect();
    if kept.len() < MIN_KEPT {
        kept = (0..cloud.len().min(MIN_KEPT)).collect();
    }
    (cloud.select(&kept), kept)
}

/// Applies the enabled augmentations in order: rotation, jitter, dropout.
/// Returns the augmented cloud, the rotation applied, and the kept source indices.
pub fn augment(cloud: &PointCloud, config: &AugmentConfig) -> Result<(PointCloud, RigidTransform, Vec<usize>)> {
    config.validate()?;
    let rotation = if config.rotation {
        random_rotation(config.rng_seed)
    } else {
        RigidTransform::identity()
    };
    let rotated = cloud.transformed(&rotation);
    let jittered = jitter(&rotated, config.jitter_sigma, config.rng_seed)?;
    let (dropped, kept) = point_dropout(&jittered, config.dropout_prob, config.rng_seed)?;
    Ok((dropped, rotation, kept))
}
