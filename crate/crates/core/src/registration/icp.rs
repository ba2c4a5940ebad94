use std::time::Instant;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MatchReport;
use crate::geometry::{fit_rigid, Point3, PointCloud, RigidTransform, SpatialIndex};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpVariant {
    PointToPoint,
    /// Needs target normals.
    PointToPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub max_correspondence_distance: f64,
    pub convergence_eps: f64,
    pub variant: IcpVariant,
    /// Keep only pairs that are mutual nearest neighbors. Suppresses pairs between unseen
    /// query points and the target boundary when the target is a partial view.
    #[serde(default)]
    pub reciprocal: bool,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            max_correspondence_distance: 0.05,
            convergence_eps: 1e-8,
            variant: IcpVariant::PointToPoint,
            reciprocal: false,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("ICP needs at least one iteration".into()));
        }
        if !(self.max_correspondence_distance > 0.0 && self.convergence_eps > 0.0) {
            return Err(Error::InvalidArgument("ICP distances must be positive".into()));
        }
        Ok(())
    }
}

struct Pairs {
    query: Vec<Point3>,
    target: Vec<usize>,
    sq_residuals: Vec<f64>,
}

fn correspond(
    pose: &RigidTransform,
    query: &PointCloud,
    target: &PointCloud,
    index: &SpatialIndex,
    max_dist: f64,
    reciprocal: bool,
) -> Pairs {
    let moved = query.transformed(pose);
    let back = reciprocal.then(|| SpatialIndex::new(&moved));
    let found: Vec<Option<(Point3, usize, f64)>> = moved
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (j, d) = index.nearest(p)?;
            if let Some(back) = &back {
                if back.nearest(&target.point(j))?.0 != i {
                    return None;
                }
            }
            (d <= max_dist).then_some((query.point(i), j, d * d))
        })
        .collect();
    let mut pairs = Pairs {
        query: Vec::new(),
        target: Vec::new(),
        sq_residuals: Vec::new(),
    };
    for (q, j, d2) in found.into_iter().flatten() {
        pairs.query.push(q);
        pairs.target.push(j);
        pairs.sq_residuals.push(d2);
    }
    pairs
}

/// Signed point-to-plane residuals `(T·q − p)·n`.
fn plane_residuals(pose: &RigidTransform, pairs: &Pairs, target: &PointCloud, normals: &[Point3]) -> Vec<f64> {
    pairs
        .query
        .iter()
        .zip(&pairs.target)
        .map(|(q, &j)| (pose.transform_point(q) - target.point(j)).dot(&normals[j]))
        .collect()
}

/// One Gauss-Newton step on the linearized point-to-plane objective.
fn point_to_plane_step(
    pose: &RigidTransform,
    pairs: &Pairs,
    target: &PointCloud,
    normals: &[Point3],
) -> Option<RigidTransform> {
    let mut jtj = Matrix6::<f64>::zeros();
    let mut jtr = Vector6::<f64>::zeros();
    for (q, &j) in pairs.query.iter().zip(&pairs.target) {
        let s = pose.transform_point(q);
        let n = normals[j];
        let r = (s - target.point(j)).dot(&n);
        let c = s.cross(&n);
        let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
        jtj += row * row.transpose();
        jtr += row * r;
    }
    let x = jtj.cholesky()?.solve(&(-jtr));
    let delta = RigidTransform::from_scaled_axis(
        Point3::new(x[0], x[1], x[2]),
        Point3::new(x[3], x[4], x[5]),
    );
    Some(delta.compose(pose))
}

/// Iterative closest point from `initial`, moving the query onto the target.
///
/// Each iteration pairs every transformed query point with its nearest target point within
/// `max_correspondence_distance`, optionally keeping mutual nearest neighbors only, records
/// the mean objective over those pairs, and refits.
/// Iteration stops once the RMSE improves by less than `convergence_eps`.
pub fn icp_refine(
    initial: &RigidTransform,
    query: &PointCloud,
    target: &PointCloud,
    config: &IcpConfig,
) -> Result<MatchReport> {
    config.validate()?;
    if query.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("ICP needs non-empty clouds"));
    }
    let normals = match config.variant {
        IcpVariant::PointToPoint => None,
        IcpVariant::PointToPlane => Some(target.normals().ok_or_else(|| {
            Error::InvalidArgument("point-to-plane ICP needs target normals".into())
        })?),
    };

    let start = Instant::now();
    let index = SpatialIndex::new(target);
    let max_dist = config.max_correspondence_distance;
    let objective = |pose: &RigidTransform, pairs: &Pairs| -> f64 {
        let sum: f64 = match normals {
            None => pairs.sq_residuals.iter().sum(),
            Some(n) => plane_residuals(pose, pairs, target, n).iter().map(|r| r * r).sum(),
        };
        sum / pairs.query.len() as f64
    };

    let mut pose = *initial;
    let mut history = Vec::new();
    let mut prev_rmse: Option<f64> = None;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        let pairs = correspond(&pose, query, target, &index, max_dist, config.reciprocal);
        if pairs.query.is_empty() {
            if iterations == 0 {
                return Err(Error::NoOverlap { max_distance: max_dist });
            }
            break;
        }
        let obj = objective(&pose, &pairs);
        history.push(obj);
        let rmse = obj.sqrt();
        if let Some(prev) = prev_rmse {
            if prev - rmse < config.convergence_eps {
                converged = true;
                break;
            }
        }
        prev_rmse = Some(rmse);

        let next = match normals {
            None => {
                let dst: Vec<Point3> = pairs.target.iter().map(|&j| target.point(j)).collect();
                fit_rigid(&pairs.query, &dst).ok()
            }
            Some(n) => point_to_plane_step(&pose, &pairs, target, n),
        };
        match next {
            Some(p) => pose = p,
            None => break,
        }
        iterations += 1;
    }

    // Residual of the pose actually returned.
    let final_pairs = correspond(&pose, query, target, &index, max_dist, config.reciprocal);
    let icp_rmse = if final_pairs.query.is_empty() {
        f64::INFINITY
    } else if converged {
        history.last().copied().unwrap_or(0.0).sqrt()
    } else {
        let obj = objective(&pose, &final_pairs);
        history.push(obj);
        obj.sqrt()
    };

    let mut report = MatchReport::from_pose(pose);
    report.icp_iterations_run = iterations;
    report.icp_rmse = icp_rmse;
    report.icp_objective_history = history;
    report.timings.icp = start.elapsed().as_secs_f64();
    Ok(report)
}

/// PCA normals from the `k` nearest neighbors, oriented away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if cloud.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: cloud.len(),
        });
    }
    let k = k.clamp(3, cloud.len());
    let index = SpatialIndex::new(cloud);
    let centroid = cloud.centroid().expect("non-empty");
    let pts = cloud.points();
    let normals: Vec<Point3> = pts
        .par_iter()
        .map(|p| {
            let nn = index.knn(p, k);
            let mean = nn.iter().fold(Point3::zeros(), |a, &(j, _)| a + pts[j]) / nn.len() as f64;
            let mut cov = Matrix3::zeros();
            for &(j, _) in &nn {
                let d = pts[j] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let n = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
            let n = if n.norm() > 0.0 { n.normalize() } else { Point3::z() };
            if n.dot(&(p - centroid)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    PointCloud::with_normals(pts.to_vec(), normals)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Points on the surface of the unit cube centered at the origin, with outward normals.
    fn cube_surface(per_side: usize) -> PointCloud {
        let mut pts = Vec::new();
        let mut normals = Vec::new();
        let step = 1.0 / (per_side - 1) as f64;
        for axis in 0..3 {
            for sign in [-0.5, 0.5] {
                for i in 0..per_side {
                    for j in 0..per_side {
                        let (u, v) = (i as f64 * step - 0.5, j as f64 * step - 0.5);
                        let mut p = Point3::zeros();
                        p[axis] = sign;
                        p[(axis + 1) % 3] = u * 0.9;
                        p[(axis + 2) % 3] = v * 0.9;
                        let mut n = Point3::zeros();
                        n[axis] = sign * 2.0;
                        pts.push(p);
                        normals.push(n);
                    }
                }
            }
        }
        // Faces are shrunk slightly so that the rim points do not coincide.
        let pts = pts.iter().map(|p| Point3::new(p.x, p.y * 0.8, p.z * 0.6)).collect();
        PointCloud::with_normals(pts, normals).unwrap()
    }

    #[test]
    fn exact_pose_is_a_fixed_point() {
        let q = cube_surface(12);
        let gt = RigidTransform::from_axis_angle(&Point3::new(0.1, 0.9, 0.3), 0.7)
            .with_translation(Point3::new(0.2, -0.1, 0.05));
        let t = q.transformed(&gt);
        let r = icp_refine(&gt, &q, &t, &IcpConfig::default()).unwrap();
        assert!(r.icp_rmse < 1e-12);
        assert!(r.pose.rotation_error(&gt) < 1e-9);
        assert!(r.pose.translation_error(&gt) < 1e-9);
    }

    #[test]
    fn converges_from_small_perturbation() {
        let q = cube_surface(20);
        let gt = RigidTransform::from_axis_angle(&Point3::new(1.0, -0.5, 0.2), 1.1)
            .with_translation(Point3::new(0.3, 0.1, -0.2));
        let t = q.transformed(&gt);
        let nudge = RigidTransform::from_axis_angle(&Point3::new(0.3, 1.0, -0.6), 2f64.to_radians())
            .with_translation(Point3::new(0.01, 0.0, 0.0));
        let init = nudge.compose(&gt);
        for variant in [IcpVariant::PointToPoint, IcpVariant::PointToPlane] {
            let cfg = IcpConfig {
                variant,
                ..Default::default()
            };
            let r = icp_refine(&init, &q, &t, &cfg).unwrap();
            assert!(r.pose.rotation_error(&gt) < 1e-4, "{variant:?}: {}", r.pose.rotation_error(&gt));
        }
    }

    #[test]
    fn objective_is_non_increasing_without_distance_cap() {
        let q = cube_surface(15);
        let gt = RigidTransform::from_axis_angle(&Point3::new(0.0, 0.0, 1.0), 0.3);
        let t = q.transformed(&gt);
        let init = RigidTransform::from_axis_angle(&Point3::new(1.0, 1.0, 0.0), 0.15);
        let cfg = IcpConfig {
            max_correspondence_distance: 10.0,
            ..Default::default()
        };
        let r = icp_refine(&init, &q, &t, &cfg).unwrap();
        assert!(r.icp_objective_history.len() > 2);
        for w in r.icp_objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn reciprocal_pairs_on_a_partial_target() {
        let q = cube_surface(20);
        let gt = RigidTransform::from_axis_angle(&Point3::new(0.4, -1.0, 0.3), 0.9)
            .with_translation(Point3::new(0.1, 0.2, -0.1));
        let half: Vec<Point3> = q.points().iter().filter(|p| p.x + 0.3 * p.y > 0.1).copied().collect();
        let t = PointCloud::new(half).unwrap().transformed(&gt);
        let init = RigidTransform::from_axis_angle(&Point3::new(0.3, 1.0, -0.6), 1f64.to_radians()).compose(&gt);
        let err = |reciprocal| {
            let cfg = IcpConfig {
                max_correspondence_distance: 0.2,
                reciprocal,
                ..Default::default()
            };
            icp_refine(&init, &q, &t, &cfg).unwrap().pose.rotation_error(&gt)
        };
        let (plain, mutual) = (err(false), err(true));
        assert!(mutual < 1e-6, "{mutual}");
        assert!(mutual < plain, "{mutual} vs {plain}");
    }

    #[test]
    fn disjoint_clouds_do_not_overlap() {
        let q = cube_surface(5);
        let t = q.transformed(&RigidTransform::from_translation(Point3::new(10.0, 0.0, 0.0)));
        assert!(matches!(
            icp_refine(&RigidTransform::identity(), &q, &t, &IcpConfig::default()),
            Err(Error::NoOverlap { .. })
        ));
    }

    #[test]
    fn point_to_plane_requires_normals() {
        let q = PointCloud::new(cube_surface(5).points().to_vec()).unwrap();
        let cfg = IcpConfig {
            variant: IcpVariant::PointToPlane,
            ..Default::default()
        };
        assert!(matches!(
            icp_refine(&RigidTransform::identity(), &q, &q, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn estimated_normals_on_a_plane() {
        let pts: Vec<Point3> = (0..100)
            .map(|i| Point3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.0))
            .collect();
        let c = estimate_normals(&PointCloud::new(pts).unwrap(), 8).unwrap();
        for n in c.normals().unwrap() {
            assert!((n.z.abs() - 1.0).abs() < 1e-9);
        }
    }
}
