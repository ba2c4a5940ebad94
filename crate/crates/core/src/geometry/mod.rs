//! Core 3D types, rigid transforms, spatial indexing and least-squares rigid fitting.

mod cloud;
mod fit;
mod index;
mod transform;

pub use cloud::{apply, diameter, PointCloud};
pub use fit::fit_rigid;
pub use index::SpatialIndex;
pub use transform::{rotation_angle, RigidTransform};

/// A point or direction in 3D.
pub type Point3 = nalgebra::Vector3<f64>;
