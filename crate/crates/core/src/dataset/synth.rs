//! Synthetic scenes: surface samples of simple primitives, a random pose, a half-space crop
//! and Gaussian noise.

use std::f64::consts::{FRAC_PI_6, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::preprocess::ScenePair;
use crate::{Error, Result};

/// Fewest target points a crop may leave.
pub const MIN_TARGET_POINTS: usize = 10;
/// Half-space draws before giving up.
pub const MAX_CROP_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere,
    Box,
    Cylinder,
    /// A box, a sphere and a cylinder fused into an object with no symmetry.
    Composite,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Sphere, Shape::Box, Shape::Cylinder, Shape::Composite];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Box => "box",
            Shape::Cylinder => "cylinder",
            Shape::Composite => "composite",
        }
    }

    /// Discrete model-frame symmetries, identity included. Continuous symmetries are
    /// sampled: the cylinder every 30° about its axis, the sphere not at all.
    pub fn symmetries(self) -> Vec<RigidTransform> {
        let x = Vector3::x();
        let y = Vector3::y();
        let z = Vector3::z();
        match self {
            Shape::Sphere | Shape::Composite => vec![RigidTransform::identity()],
            Shape::Box => vec![
                RigidTransform::identity(),
                RigidTransform::from_axis_angle(&x, PI),
                RigidTransform::from_axis_angle(&y, PI),
                RigidTransform::from_axis_angle(&z, PI),
            ],
            Shape::Cylinder => {
                let flip = RigidTransform::from_axis_angle(&x, PI);
                (0..12)
                    .flat_map(|k| {
                        let spin = RigidTransform::from_axis_angle(&z, k as f64 * FRAC_PI_6);
                        [spin, spin.compose(&flip)]
                    })
                    .collect()
            }
        }
    }

    fn primitives(self) -> Vec<Primitive> {
        match self {
            Shape::Sphere => vec![Primitive::Sphere {
                center: Point3::zeros(),
                radius: 0.5,
            }],
            Shape::Box => vec![Primitive::Cuboid {
                center: Point3::zeros(),
                half: Vector3::new(0.4, 0.25, 0.15),
            }],
            Shape::Cylinder => vec![Primitive::Cylinder {
                center: Point3::zeros(),
                radius: 0.25,
                half_height: 0.4,
            }],
            Shape::Composite => vec![
                Primitive::Cuboid {
                    center: Point3::zeros(),
                    half: Vector3::new(0.35, 0.2, 0.1),
                },
                Primitive::Sphere {
                    center: Point3::new(0.3, 0.15, 0.12),
                    radius: 0.15,
                },
                Primitive::Cylinder {
                    center: Point3::new(-0.2, -0.05, 0.22),
                    radius: 0.08,
                    half_height: 0.2,
                },
            ],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Primitive {
    Sphere { center: Point3, radius: f64 },
    Cuboid { center: Point3, half: Vector3<f64> },
    /// Axis along z.
    Cylinder { center: Point3, radius: f64, half_height: f64 },
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Cuboid { half: h, .. } => 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z),
            Primitive::Cylinder {
                radius, half_height, ..
            } => 2.0 * PI * radius * (2.0 * half_height) + 2.0 * PI * radius * radius,
        }
    }

    /// Strictly inside the solid.
    fn contains(&self, p: &Point3) -> bool {
        match *self {
            Primitive::Sphere { center, radius } => (p - center).norm_squared() < radius * radius,
            Primitive::Cuboid { center, half } => {
                let d = p - center;
                (0..3).all(|i| d[i].abs() < half[i])
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let d = p - center;
                d.z.abs() < half_height && d.x * d.x + d.y * d.y < radius * radius
            }
        }
    }

    /// Uniform surface sample with its outward normal.
    fn sample<R: Rng>(&self, rng: &mut R) -> (Point3, Point3) {
        match *self {
            Primitive::Sphere { center, radius } => {
                let n = loop {
                    let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
                    let len: f64 = v.norm();
                    if len > 1e-12 {
                        break v / len;
                    }
                };
                (center + n * radius, n)
            }
            Primitive::Cuboid { center, half: h } => {
                let faces = [h.y * h.z, h.x * h.z, h.x * h.y];
                let axis = pick(rng, &faces);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut local = Vector3::from_fn(|i, _| rng.random_range(-h[i]..=h[i]));
                local[axis] = sign * h[axis];
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (center + local, n)
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let side = 2.0 * radius * half_height;
                let cap = 0.5 * radius * radius;
                let theta = rng.random_range(0.0..2.0 * PI);
                let (s, c) = theta.sin_cos();
                if pick(rng, &[side, cap]) == 0 {
                    let z = rng.random_range(-half_height..=half_height);
                    (center + Vector3::new(radius * c, radius * s, z), Vector3::new(c, s, 0.0))
                } else {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let r = radius * rng.random::<f64>().sqrt();
                    (
                        center + Vector3::new(r * c, r * s, sign * half_height),
                        Vector3::new(0.0, 0.0, sign),
                    )
                }
            }
        }
    }
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub shape: Shape,
    pub point_count: usize,
    /// Fraction of the target's extent along the crop direction that is kept.
    pub partial_fraction: f64,
    /// RMS length of the noise displacement added to each target point.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shape: Shape::Composite,
            point_count: 4000,
            partial_fraction: 0.6,
            noise_sigma: 0.005,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.point_count < MIN_TARGET_POINTS {
            return Err(Error::InvalidArgument(format!(
                "point count must be at least {MIN_TARGET_POINTS}, got {}",
                self.point_count
            )));
        }
        if !(self.partial_fraction > 0.0 && self.partial_fraction <= 1.0) {
            return Err(Error::InvalidArgument("partial fraction must lie in (0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise sigma must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn sample_surface(shape: Shape, count: usize, seed: u64) -> Result<PointCloud> {
    let parts = shape.primitives();
    let areas: Vec<f64> = parts.iter().map(Primitive::area).collect();
    let mut r = rng(seed, 0);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    while points.len() < count {
        let k = pick(&mut r, &areas);
        let (p, n) = parts[k].sample(&mut r);
        let buried = parts.iter().enumerate().any(|(j, other)| j != k && other.contains(&p));
        if !buried {
            points.push(p);
            normals.push(n);
        }
    }
    PointCloud::with_normals(points, normals)
}

fn random_pose(seed: u64) -> RigidTransform {
    let mut r = rng(seed, 1);
    let q = loop {
        let c: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut r));
        let q = Quaternion::new(c[0], c[1], c[2], c[3]);
        if q.norm() > 1e-12 {
            break UnitQuaternion::from_quaternion(q);
        }
    };
    let t = Vector3::from_fn(|_, _| r.random_range(-1.0..=1.0));
    RigidTransform::from_quaternion(&q).with_translation(t)
}

/// Indices of the points at or below `fraction` of the extent along a random direction.
fn crop(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..cloud.len()).collect();
    if fraction >= 1.0 {
        return Ok(all);
    }
    let mut r = rng(seed, 2);
    for _ in 0..MAX_CROP_ATTEMPTS {
        let u = Vector3::<f64>::from_fn(|_, _| StandardNormal.sample(&mut r));
        if u.norm() < 1e-12 {
            continue;
        }
        let u = u.normalize();
        let proj: Vec<f64> = cloud.points().iter().map(|p| p.dot(&u)).collect();
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cut = lo + fraction * (hi - lo);
        let kept: Vec<usize> = all.iter().copied().filter(|&i| proj[i] <= cut).collect();
        if kept.len() >= MIN_TARGET_POINTS {
            return Ok(kept);
        }
    }
    Err(Error::Generation(format!(
        "no half-space kept {MIN_TARGET_POINTS} points in {MAX_CROP_ATTEMPTS} attempts"
    )))
}

/// Generates a query, a cropped noisy target and the pose relating them.
pub fn synth_scene(config: &SynthConfig) -> Result<ScenePair> {
    config.validate()?;
    let seed = config.rng_seed;
    let query = sample_surface(config.shape, config.point_count, seed)?;
    let gt = random_pose(seed);
    let posed = query.transformed(&gt);
    let kept = crop(&posed, config.partial_fraction, seed)?;
    let mut target = posed.select(&kept);
    if config.noise_sigma > 0.0 {
        // Per-axis deviation sigma/√3 gives an RMS displacement of sigma.
        let normal = Normal::new(0.0, config.noise_sigma / 3f64.sqrt())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut r = rng(seed, 3);
        let points: Vec<Point3> = target
            .points()
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| normal.sample(&mut r)))
            .collect();
        target = match target.normals() {
            Some(n) => PointCloud::with_normals(points, n.to_vec())?,
            None => PointCloud::new(points)?,
        };
    }
    ScenePair::new(query, target, Some(gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::build_gamma;
    use proptest::prelude::*;

    fn config(shape: Shape, n: usize, partial: f64, noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            shape,
            point_count: n,
            partial_fraction: partial,
            noise_sigma: noise,
            rng_seed: seed,
        }
    }

    #[test]
    fn clean_full_scene_is_the_posed_query() {
        let pair = synth_scene(&config(Shape::Composite, 500, 1.0, 0.0, 3)).unwrap();
        let gt = pair.gt_pose.unwrap();
        assert_eq!(pair.target.points(), pair.query.transformed(&gt).points());
        let gamma = build_gamma(&pair.query, &pair.target, &gt).unwrap();
        assert!(gamma.target_to_query().iter().enumerate().all(|(i, &j)| i == j));
    }

    #[test]
    fn half_sphere_crop_band() {
        for seed in 0..10 {
            let pair = synth_scene(&config(Shape::Sphere, 4000, 0.5, 0.0, seed)).unwrap();
            let n = pair.target.len();
            assert!((1400..=2600).contains(&n), "seed {seed}: {n}");
        }
    }

    #[test]
    fn deterministic() {
        let c = config(Shape::Box, 800, 0.6, 0.01, 11);
        assert_eq!(synth_scene(&c).unwrap(), synth_scene(&c).unwrap());
        let other = synth_scene(&SynthConfig { rng_seed: 12, ..c }).unwrap();
        assert_ne!(synth_scene(&c).unwrap(), other);
    }

    /// Exact signed distance to a primitive's surface, negative inside.
    fn sdf(prim: &Primitive, p: &Point3) -> f64 {
        match *prim {
            Primitive::Sphere { center, radius } => (p - center).norm() - radius,
            Primitive::Cuboid { center, half } => {
                let q = (p - center).abs() - half;
                q.sup(&Vector3::zeros()).norm() + q.max().min(0.0)
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let d = p - center;
                let a = (d.x * d.x + d.y * d.y).sqrt() - radius;
                let b = d.z.abs() - half_height;
                (a.max(0.0).powi(2) + b.max(0.0).powi(2)).sqrt() + a.max(b).min(0.0)
            }
        }
    }

    fn on_surface(shape: Shape, p: &Point3) -> bool {
        let d: Vec<f64> = shape.primitives().iter().map(|s| sdf(s, p)).collect();
        d.iter().any(|x| x.abs() < 1e-9) && d.iter().all(|&x| x > -1e-9)
    }

    #[test]
    fn surface_points_lie_on_the_shape() {
        for shape in Shape::ALL {
            let q = sample_surface(shape, 2000, 1).unwrap();
            assert!(q.points().iter().all(|p| on_surface(shape, p)), "{shape}");
        }
    }

    #[test]
    fn symmetries_map_the_shape_onto_itself() {
        for shape in Shape::ALL {
            let q = sample_surface(shape, 300, 2).unwrap();
            for s in shape.symmetries() {
                assert!(q.points().iter().all(|p| on_surface(shape, &s.transform_point(p))), "{shape}");
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(synth_scene(&config(Shape::Box, 9, 1.0, 0.0, 0)).is_err());
        assert!(synth_scene(&config(Shape::Box, 100, 0.0, 0.0, 0)).is_err());
        assert!(synth_scene(&config(Shape::Box, 100, 1.5, 0.0, 0)).is_err());
        assert!(matches!(
            synth_scene(&config(Shape::Sphere, 10, 1e-6, 0.0, 0)),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn shape_names_round_trip() {
        for s in Shape::ALL {
            assert_eq!(s.name().parse::<Shape>().unwrap(), s);
        }
        assert!("torus".parse::<Shape>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn residuals_bounded_by_noise(
            seed in any::<u64>(),
            shape_ix in 0usize..4,
            partial in 0.3f64..=1.0,
            noise in 0.001f64..0.02,
        ) {
            let pair = synth_scene(&config(Shape::ALL[shape_ix], 600, partial, noise, seed)).unwrap();
            let gamma = build_gamma(&pair.query, &pair.target, &pair.gt_pose.unwrap()).unwrap();
            let within = gamma.residuals().iter().filter(|&&r| r <= 3.0 * noise).count();
            prop_assert!(within as f64 >= 0.99 * gamma.len() as f64);
        }
    }
}
