//! Per-point descriptor sets and the backends that produce them.
//!
//! Two backends exist: [`PrecomputedBackend`] reads teacher or student features from the
//! binary cache written by [`crate::store`], and [`ToyBackend`] computes a 10-value
//! covariance-shape signature per point, zero-padded to 32 dimensions. The toy backend uses
//! the same dimensionality and support radius convention as cached learned features, so the
//! two are interchangeable downstream.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud, SpatialIndex};
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.3;

/// Number of non-padding values in a toy descriptor.
pub const TOY_FEATURES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Precomputed,
    Toy,
}

/// Row-major `N × D` matrix of per-point feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    data: Vec<f64>,
    dim: usize,
    source: SourceTag,
}

impl DescriptorSet {
    pub fn new(data: Vec<f64>, dim: usize, source: SourceTag) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("descriptor dim must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Consistency(format!(
                "{} values do not fill rows of width {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite descriptor value in row {}",
                i / dim
            )));
        }
        Ok(Self { data, dim, source })
    }

    pub fn from_rows(rows: &[Vec<f64>], source: SourceTag) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyInput("no rows"))?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(rows.concat(), dim, source)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows picked by index, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Result<DescriptorSet> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Consistency(format!(
                    "row index {i} out of range for {} descriptors",
                    self.len()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(DescriptorSet {
            data,
            dim: self.dim,
            source: self.source,
        })
    }
}

/// Produces one descriptor per point, deterministically.
pub trait DescriptorBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, cloud: &PointCloud) -> Result<DescriptorSet>;
}

/// Covariance-shape descriptor over a fixed-radius neighborhood.
#[derive(Debug, Clone, Copy)]
pub struct ToyBackend {
    /// Neighborhood radius in normalized (unit query diameter) coordinates.
    pub radius_fraction: f64,
}

impl Default for ToyBackend {
    fn default() -> Self {
        Self {
            radius_fraction: DEFAULT_RADIUS_FRACTION,
        }
    }
}

impl DescriptorBackend for ToyBackend {
    fn name(&self) -> &str {
        "toy"
    }

    fn dim(&self) -> usize {
        DEFAULT_DIM
    }

    fn extract(&self, cloud: &PointCloud) -> Result<DescriptorSet> {
        extract_toy(cloud, self.radius_fraction)
    }
}

/// Loads features for a cloud from a cache file.
#[derive(Debug, Clone)]
pub struct PrecomputedBackend {
    pub path: PathBuf,
    pub expected_dim: usize,
}

impl DescriptorBackend for PrecomputedBackend {
    fn name(&self) -> &str {
        "precomputed"
    }

    fn dim(&self) -> usize {
        self.expected_dim
    }

    fn extract(&self, cloud: &PointCloud) -> Result<DescriptorSet> {
        let set = load_precomputed(&self.path, self.expected_dim)?;
        if set.len() != cloud.len() {
            return Err(Error::Consistency(format!(
                "{} cached descriptors for a cloud of {} points",
                set.len(),
                cloud.len()
            )));
        }
        Ok(set)
    }
}

/// Toy descriptors with the neighborhood radius given in normalized coordinates
/// (`radius_fraction` of a unit query diameter).
///
/// Per point: the normalized covariance eigenvalues, linearity, planarity, sphericity,
/// anisotropy, omnivariance, and mean and standard deviation of neighbor distances over the
/// radius. The 10 values are zero-padded to 32 and L2-normalized. Points with fewer than 3
/// neighbors (self included) get `e₀`.
///
/// No neighbor-count term is included: a count relative to cloud size shifts with the
/// visible fraction of a partial target, and matching against the full query degrades.
pub fn extract_toy(cloud: &PointCloud, radius_fraction: f64) -> Result<DescriptorSet> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("toy descriptors of an empty cloud"));
    }
    if !(radius_fraction > 0.0 && radius_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "radius fraction must lie in (0, 1], got {radius_fraction}"
        )));
    }
    let radius = radius_fraction;
    let index = SpatialIndex::new(cloud);
    let points = cloud.points();

    let rows: Vec<[f64; DEFAULT_DIM]> = points
        .par_iter()
        .map(|center| {
            let neighbors = index.within_radius(center, radius);
            toy_row(points, center, &neighbors, radius)
        })
        .collect();

    let mut data = Vec::with_capacity(rows.len() * DEFAULT_DIM);
    for r in &rows {
        data.extend_from_slice(r);
    }
    DescriptorSet::new(data, DEFAULT_DIM, SourceTag::Toy)
}

fn toy_row(
    points: &[Point3],
    center: &Point3,
    neighbors: &[usize],
    radius: f64,
) -> [f64; DEFAULT_DIM] {
    let mut row = [0.0; DEFAULT_DIM];
    if neighbors.len() < 3 {
        row[0] = 1.0;
        return row;
    }
    let k = neighbors.len() as f64;
    let centroid = neighbors
        .iter()
        .fold(Point3::zeros(), |a, &j| a + points[j])
        / k;
    let mut cov = Matrix3::zeros();
    for &j in neighbors {
        let d = points[j] - centroid;
        cov += d * d.transpose();
    }
    cov /= k;

    let mut ev: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let sum: f64 = ev.iter().sum();
    let (l1, l2, l3) = if sum > 0.0 {
        (ev[0] / sum, ev[1] / sum, ev[2] / sum)
    } else {
        (0.0, 0.0, 0.0)
    };
    let (linearity, planarity, sphericity, anisotropy) = if l1 > 0.0 {
        ((l1 - l2) / l1, (l2 - l3) / l1, l3 / l1, (l1 - l3) / l1)
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    let omnivariance = (l1 * l2 * l3).cbrt();

    let dists: Vec<f64> = neighbors
        .iter()
        .map(|&j| (points[j] - center).norm())
        .filter(|&d| d > 0.0)
        .collect();
    let (mean_d, std_d) = if dists.is_empty() {
        (0.0, 0.0)
    } else {
        let m = dists.iter().sum::<f64>() / dists.len() as f64;
        let v = dists.iter().map(|d| (d - m).powi(2)).sum::<f64>() / dists.len() as f64;
        (m, v.sqrt())
    };

    let values = [
        l1,
        l2,
        l3,
        linearity,
        planarity,
        sphericity,
        anisotropy,
        omnivariance,
        mean_d / radius,
        std_d / radius,
    ];
    row[..TOY_FEATURES].copy_from_slice(&values);
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    } else {
        row = [0.0; DEFAULT_DIM];
        row[0] = 1.0;
    }
    row
}

/// Reads a feature cache file and checks its dimension.
pub fn load_precomputed(path: impl AsRef<Path>, expected_dim: usize) -> Result<DescriptorSet> {
    let (set, _) = crate::store::read_cache(path.as_ref(), expected_dim)?;
    Ok(set)
}

/// Euclidean distance between two feature vectors.
pub fn feature_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(squared_distance(a, b).sqrt())
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exhaustive feature-space nearest neighbor of `needle` among the rows of `haystack`,
/// as `(row index, squared distance)`. Ties go to the lowest row index.
pub fn nearest_row(haystack: &DescriptorSet, needle: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, row) in haystack.rows().enumerate() {
        // Partial sums only grow, so a candidate can be abandoned once it exceeds the best.
        let mut d2 = 0.0;
        let mut pruned = false;
        for (x, y) in row.iter().zip(needle) {
            d2 += (x - y) * (x - y);
            if d2 > best.1 {
                pruned = true;
                break;
            }
        }
        if !pruned && d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

/// Feature-space nearest neighbor in `haystack` for every row of `needles`.
pub fn nearest_rows(haystack: &DescriptorSet, needles: &DescriptorSet) -> Result<Vec<(usize, f64)>> {
    if haystack.dim() != needles.dim() {
        return Err(Error::DimMismatch {
            expected: needles.dim(),
            found: haystack.dim(),
        });
    }
    if haystack.is_empty() {
        return Err(Error::EmptyInput("no candidate descriptors"));
    }
    Ok((0..needles.len())
        .into_par_iter()
        .map(|i| nearest_row(haystack, needles.row(i)))
        .collect())
}
