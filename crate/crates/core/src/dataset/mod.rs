//! Point-cloud files, scene bundles and the synthetic scene generator.

mod ply;
mod scene;
mod synth;

pub use ply::{load_ply, parse_ply, save_ply, save_ply_with, write_ply, PlyFormat};
pub use scene::{load_bundle, load_scene, read_pose, save_scene, write_pose, SceneBundle, SceneMeta, META_FILE, POSE_FILE, POSE_TOL, QUERY_FILE, TARGET_FILE};
pub use synth::{synth_scene, Shape, SynthConfig};
