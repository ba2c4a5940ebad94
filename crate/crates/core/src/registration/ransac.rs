use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Correspondence, MatchReport};
use crate::geometry::{fit_rigid, Point3, PointCloud, RigidTransform};
use crate::{Error, Result};

/// Edges shorter than this make a triplet degenerate.
const MIN_EDGE: f64 = 1e-9;

/// Iterations evaluated between early-stopping checks. Fixed so that results never depend
/// on the thread schedule.
const BLOCK: usize = 4096;

/// Residuals beyond this many robust standard deviations are trimmed from the final refit.
const TRIM_SCALES: f64 = 3.0;
/// Median absolute residual to standard deviation for Gaussian errors.
const MAD_TO_SIGMA: f64 = 1.4826;
/// Trimming never cuts below this fraction of the inlier threshold.
const TRIM_FLOOR: f64 = 1e-3;
const MAX_TRIM_ROUNDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier distance in normalized (unit query diameter) coordinates.
    pub inlier_threshold: f64,
    /// Relative edge-length tolerance for triplet consistency.
    pub triplet_consistency_tol: f64,
    pub rng_seed: u64,
    /// Stop early once this confidence of having drawn an all-inlier triplet is reached,
    /// checked every 4096 iterations. `None` always runs every iteration.
    pub early_stop_confidence: Option<f64>,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            inlier_threshold: 0.05,
            triplet_consistency_tol: 0.1,
            rng_seed: 0,
            early_stop_confidence: None,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("RANSAC needs at least one iteration".into()));
        }
        if !(self.inlier_threshold > 0.0 && self.triplet_consistency_tol > 0.0) {
            return Err(Error::InvalidArgument("RANSAC thresholds must be positive".into()));
        }
        if let Some(c) = self.early_stop_confidence {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidArgument(format!("confidence must lie in (0, 1), got {c}")));
            }
        }
        Ok(())
    }
}

/// True iff every edge of the two triangles has a length within `tol` (relative to the longer
/// of the pair) and no edge is shorter than 1e-9.
pub fn triplet_consistent(q: &[Point3; 3], t: &[Point3; 3], tol: f64) -> bool {
    const EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
    EDGES.iter().all(|&(i, j)| {
        let lq = (q[i] - q[j]).norm();
        let lt = (t[i] - t[j]).norm();
        lq >= MIN_EDGE && lt >= MIN_EDGE && (lq - lt).abs() <= tol * lq.max(lt)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub iteration: usize,
    pub sample: [usize; 3],
    pub pose: RigidTransform,
    pub inlier_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HypothesisOutcome {
    /// The sampled triplet failed the edge-length consistency test.
    Rejected,
    /// The triplet passed but the rigid fit was rank deficient.
    Degenerate,
    Accepted(Hypothesis),
}

struct Problem<'a> {
    src: Vec<Point3>,
    dst: Vec<Point3>,
    config: &'a RansacConfig,
}

impl Problem<'_> {
    fn sample(&self, iteration: usize) -> [usize; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        rng.set_stream(iteration as u64);
        let picked = rand::seq::index::sample(&mut rng, self.src.len(), 3);
        [picked.index(0), picked.index(1), picked.index(2)]
    }

    fn count_inliers(&self, pose: &RigidTransform) -> usize {
        let th2 = self.config.inlier_threshold * self.config.inlier_threshold;
        self.src
            .iter()
            .zip(&self.dst)
            .filter(|(s, d)| (pose.transform_point(s) - *d).norm_squared() < th2)
            .count()
    }

    fn inliers(&self, pose: &RigidTransform) -> Vec<usize> {
        let th2 = self.config.inlier_threshold * self.config.inlier_threshold;
        (0..self.src.len())
            .filter(|&i| (pose.transform_point(&self.src[i]) - self.dst[i]).norm_squared() < th2)
            .collect()
    }

    /// Least-squares refit on `inliers`, then repeatedly drops members whose residual exceeds
    /// `TRIM_SCALES` robust standard deviations and refits on the rest.
    fn refit(&self, mut inliers: Vec<usize>) -> Option<RigidTransform> {
        let fit = |idx: &[usize]| {
            let s: Vec<Point3> = idx.iter().map(|&i| self.src[i]).collect();
            let d: Vec<Point3> = idx.iter().map(|&i| self.dst[i]).collect();
            fit_rigid(&s, &d).ok()
        };
        if inliers.len() < 3 {
            return None;
        }
        let mut pose = fit(&inliers)?;
        let floor = TRIM_FLOOR * self.config.inlier_threshold;
        let min_keep = (inliers.len() / 2).max(3);
        for _ in 0..MAX_TRIM_ROUNDS {
            let residual = |i: usize| (pose.transform_point(&self.src[i]) - self.dst[i]).norm();
            let mut r: Vec<f64> = inliers.iter().map(|&i| residual(i)).collect();
            r.sort_by(f64::total_cmp);
            let cutoff = (TRIM_SCALES * MAD_TO_SIGMA * r[r.len() / 2]).max(floor);
            let kept: Vec<usize> = inliers.iter().copied().filter(|&i| residual(i) <= cutoff).collect();
            if kept.len() == inliers.len() || kept.len() < min_keep {
                break;
            }
            match fit(&kept) {
                Some(p) => pose = p,
                None => break,
            }
            inliers = kept;
        }
        Some(pose)
    }

    fn evaluate(&self, iteration: usize) -> HypothesisOutcome {
        let sample = self.sample(iteration);
        let q = sample.map(|i| self.src[i]);
        let t = sample.map(|i| self.dst[i]);
        if !triplet_consistent(&q, &t, self.config.triplet_consistency_tol) {
            return HypothesisOutcome::Rejected;
        }
        match fit_rigid(&q, &t) {
            Ok(pose) => HypothesisOutcome::Accepted(Hypothesis {
                iteration,
                sample,
                inlier_count: self.count_inliers(&pose),
                pose,
            }),
            Err(_) => HypothesisOutcome::Degenerate,
        }
    }
}

fn problem<'a>(
    correspondences: &[Correspondence],
    query: &PointCloud,
    target: &PointCloud,
    config: &'a RansacConfig,
) -> Result<Problem<'a>> {
    config.validate()?;
    if correspondences.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: correspondences.len(),
        });
    }
    let mut src = Vec::with_capacity(correspondences.len());
    let mut dst = Vec::with_capacity(correspondences.len());
    for c in correspondences {
        if c.query >= query.len() || c.target >= target.len() {
            return Err(Error::Consistency(format!(
                "correspondence ({}, {}) out of range",
                c.query, c.target
            )));
        }
        src.push(query.point(c.query));
        dst.push(target.point(c.target));
    }
    Ok(Problem { src, dst, config })
}

/// Replays a single RANSAC iteration. Exposed so callers can audit the selection.
pub fn evaluate_hypothesis(
    correspondences: &[Correspondence],
    query: &PointCloud,
    target: &PointCloud,
    config: &RansacConfig,
    iteration: usize,
) -> Result<HypothesisOutcome> {
    Ok(problem(correspondences, query, target, config)?.evaluate(iteration))
}

#[derive(Default)]
struct BlockSummary {
    best: Option<Hypothesis>,
    rejected: usize,
    degenerate: usize,
}

fn prefer(a: Option<Hypothesis>, b: Option<Hypothesis>) -> Option<Hypothesis> {
    match (a, b) {
        (Some(a), Some(b)) => {
            let b_wins = b.inlier_count > a.inlier_count
                || (b.inlier_count == a.inlier_count && b.iteration < a.iteration);
            Some(if b_wins { b } else { a })
        }
        (a, None) => a,
        (None, b) => b,
    }
}

fn merge(a: BlockSummary, b: BlockSummary) -> BlockSummary {
    BlockSummary {
        best: prefer(a.best, b.best),
        rejected: a.rejected + b.rejected,
        degenerate: a.degenerate + b.degenerate,
    }
}

/// Iterations needed to draw one all-inlier triplet with the given confidence.
fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let p_good = inlier_ratio.powi(3);
    if p_good >= 1.0 {
        return 1.0;
    }
    if p_good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - p_good).ln()
}

/// Triplet RANSAC over putative correspondences.
///
/// Iteration `i` draws three distinct correspondences from a ChaCha8 stream keyed by
/// `(seed, i)`, discards triplets whose edge lengths disagree, fits a rigid transform and
/// counts correspondences with residual below the inlier threshold. The hypothesis with the
/// most inliers wins, earliest iteration first on ties. The final pose is refit on its
/// inliers after trimming gross residual outliers; reported counts are those of the winner.
pub fn ransac_register(
    correspondences: &[Correspondence],
    query: &PointCloud,
    target: &PointCloud,
    config: &RansacConfig,
) -> Result<MatchReport> {
    let start = Instant::now();
    let problem = problem(correspondences, query, target, config)?;

    let mut total = BlockSummary::default();
    let mut run = 0;
    while run < config.iterations {
        let end = (run + BLOCK).min(config.iterations);
        let block = (run..end)
            .into_par_iter()
            .map(|i| match problem.evaluate(i) {
                HypothesisOutcome::Rejected => BlockSummary {
                    rejected: 1,
                    ..Default::default()
                },
                HypothesisOutcome::Degenerate => BlockSummary {
                    degenerate: 1,
                    ..Default::default()
                },
                HypothesisOutcome::Accepted(h) => BlockSummary {
                    best: Some(h),
                    ..Default::default()
                },
            })
            .reduce(BlockSummary::default, merge);
        total = merge(total, block);
        run = end;

        if let (Some(conf), Some(best)) = (config.early_stop_confidence, &total.best) {
            let ratio = best.inlier_count as f64 / problem.src.len() as f64;
            if run as f64 >= required_iterations(ratio, conf) {
                break;
            }
        }
    }

    let best = total.best.ok_or(Error::NoHypothesis {
        iterations: run,
        rejected: total.rejected,
        degenerate: total.degenerate,
    })?;

    let inliers = problem.inliers(&best.pose);
    let pose = problem.refit(inliers).unwrap_or(best.pose);

    let mut report = MatchReport::from_pose(pose);
    report.inlier_count = best.inlier_count;
    report.correspondence_count = correspondences.len();
    report.inlier_ratio = best.inlier_count as f64 / correspondences.len() as f64;
    report.ransac_iterations_run = run;
    report.timings.ransac = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [Point3; 3] {
        [Point3::from(a), Point3::from(b), Point3::from(c)]
    }

    #[test]
    fn consistency_rules() {
        let q = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let g = RigidTransform::from_axis_angle(&Point3::new(1.0, 1.0, 1.0), 0.8)
            .with_translation(Point3::new(3.0, 0.0, -1.0));
        let moved = q.map(|p| g.transform_point(&p));
        assert!(triplet_consistent(&q, &moved, 0.1));
        let scaled = q.map(|p| p * 2.0);
        assert!(!triplet_consistent(&q, &scaled, 0.1));
        let repeated = tri([0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!(!triplet_consistent(&repeated, &repeated, 0.1));
    }

    fn scene(n_exact: usize, n_random: usize, seed: u64) -> (Vec<Correspondence>, PointCloud, PointCloud, RigidTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_exact + n_random;
        let query: Vec<Point3> = (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()) - Point3::repeat(0.5))
            .collect();
        let gt = RigidTransform::from_axis_angle(
            &Point3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1),
            rng.random_range(0.1..3.0),
        )
        .with_translation(Point3::new(rng.random(), rng.random(), rng.random()));
        let mut target: Vec<Point3> = query.iter().map(|p| gt.transform_point(p)).collect();
        for p in target.iter_mut().skip(n_exact) {
            *p = gt.transform_point(&(Point3::new(rng.random(), rng.random(), rng.random()) - Point3::repeat(0.5)));
        }
        let corr = (0..n)
            .map(|i| Correspondence {
                query: i,
                target: i,
                distance: 0.0,
            })
            .collect();
        (corr, PointCloud::new(query).unwrap(), PointCloud::new(target).unwrap(), gt)
    }

    #[test]
    fn exact_correspondences() {
        let (c, q, t, gt) = scene(100, 0, 1);
        let cfg = RansacConfig {
            iterations: 1000,
            ..Default::default()
        };
        let r = ransac_register(&c, &q, &t, &cfg).unwrap();
        assert!(r.pose.rotation_error(&gt) < 1e-6);
        assert_eq!(r.inlier_ratio, 1.0);
        assert_eq!(r.ransac_iterations_run, 1000);
    }

    #[test]
    fn near_miss_outlier_is_trimmed_from_the_refit() {
        let (mut c, q, t, gt) = scene(30, 0, 2);
        let mut qp = q.points().to_vec();
        let mut tp = t.points().to_vec();
        qp.push(Point3::new(0.5, 0.5, 0.5));
        tp.push(gt.transform_point(&Point3::new(0.5, 0.5, 0.5)) + Point3::new(0.04, 0.0, 0.0));
        c.push(Correspondence {
            query: 30,
            target: 30,
            distance: 0.0,
        });
        let (q, t) = (PointCloud::new(qp).unwrap(), PointCloud::new(tp).unwrap());
        let cfg = RansacConfig {
            iterations: 500,
            ..Default::default()
        };
        let r = ransac_register(&c, &q, &t, &cfg).unwrap();
        assert_eq!(r.inlier_count, 31);
        assert!(r.pose.rotation_error(&gt) < 1e-9, "{}", r.pose.rotation_error(&gt));
        assert!(r.pose.translation_error(&gt) < 1e-9);
    }

    #[test]
    fn too_few_correspondences() {
        let (c, q, t, _) = scene(2, 0, 1);
        assert!(matches!(
            ransac_register(&c, &q, &t, &RansacConfig::default()),
            Err(Error::InsufficientData { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn all_rejected_reports_diagnostics() {
        // Target triangle is the query scaled by 3, so every triplet fails consistency.
        let q = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let t = q.scaled(3.0);
        let c: Vec<_> = (0..3).map(|i| Correspondence { query: i, target: i, distance: 0.0 }).collect();
        let cfg = RansacConfig {
            iterations: 50,
            ..Default::default()
        };
        match ransac_register(&c, &q, &t, &cfg) {
            Err(Error::NoHypothesis { iterations, rejected, .. }) => {
                assert_eq!(iterations, 50);
                assert_eq!(rejected, 50);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn selection_beats_every_replayed_hypothesis() {
        let (c, q, t, _) = scene(30, 70, 3);
        let cfg = RansacConfig {
            iterations: 3000,
            rng_seed: 11,
            ..Default::default()
        };
        let r = ransac_register(&c, &q, &t, &cfg).unwrap();
        let mut best = 0;
        for i in 0..cfg.iterations {
            if let HypothesisOutcome::Accepted(h) = evaluate_hypothesis(&c, &q, &t, &cfg, i).unwrap() {
                best = best.max(h.inlier_count);
            }
        }
        assert_eq!(r.inlier_count, best);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (c, q, t, _) = scene(30, 70, 5);
        let cfg = RansacConfig {
            iterations: 20_000,
            rng_seed: 9,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ransac_register(&c, &q, &t, &cfg).unwrap())
        };
        let (a, b) = (run(1), run(8));
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.inlier_count, b.inlier_count);
        assert_eq!(a.ransac_iterations_run, b.ransac_iterations_run);
    }

    #[test]
    fn early_stop_is_deterministic() {
        let (c, q, t, gt) = scene(60, 40, 6);
        let cfg = RansacConfig {
            iterations: 100_000,
            early_stop_confidence: Some(0.999),
            ..Default::default()
        };
        let a = ransac_register(&c, &q, &t, &cfg).unwrap();
        let b = ransac_register(&c, &q, &t, &cfg).unwrap();
        assert_eq!(a, MatchReport { timings: a.timings, ..b });
        assert!(a.ransac_iterations_run < 100_000);
        assert!(a.pose.rotation_error(&gt) < 1e-6);
    }

    #[test]
    fn equivariant_under_common_motion() {
        let (c, q, t, gt) = scene(50, 0, 8);
        let g = RigidTransform::from_axis_angle(&Point3::new(-0.3, 0.8, 0.1), 2.2)
            .with_translation(Point3::new(-1.0, 0.5, 2.0));
        let cfg = RansacConfig {
            iterations: 200,
            ..Default::default()
        };
        let p = ransac_register(&c, &q, &t, &cfg).unwrap().pose;
        let p2 = ransac_register(&c, &q.transformed(&g), &t.transformed(&g), &cfg).unwrap().pose;
        let expected = g.compose(&p).compose(&g.inverse());
        assert!(p2.rotation_error(&expected) < 1e-6);
        assert!(p2.translation_error(&expected) < 1e-6);
        assert!(p.rotation_error(&gt) < 1e-9);
    }
}
