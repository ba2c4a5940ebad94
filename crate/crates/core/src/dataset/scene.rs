use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::ply::{load_ply, save_ply};
use crate::geometry::{diameter, RigidTransform};
use crate::preprocess::ScenePair;
use crate::{Error, Result};

/// Tolerance on the pose rotation block when reading a pose file.
pub const POSE_TOL: f64 = 1e-6;

pub const QUERY_FILE: &str = "query.ply";
pub const TARGET_FILE: &str = "target.ply";
pub const POSE_FILE: &str = "pose.txt";
pub const META_FILE: &str = "meta.json";

/// Optional per-scene metadata stored next to the clouds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    #[serde(default)]
    pub object_id: String,
    #[serde(default)]
    pub units: String,
    /// Set once the clouds have been sampled, filtered and normalized.
    #[serde(default)]
    pub preprocessed: bool,
    /// Query diameter before normalization; absent for raw scenes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_diameter: Option<f64>,
    /// Model-frame symmetry transforms used by MSSD.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub symmetries: Vec<RigidTransform>,
}

/// A scene directory: `query.ply`, `target.ply`, `pose.txt` and optionally `meta.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub dir: PathBuf,
    pub query_path: PathBuf,
    pub target_path: PathBuf,
    pub pose_path: PathBuf,
    pub meta: SceneMeta,
}

impl SceneBundle {
    pub fn object_id(&self) -> &str {
        &self.meta.object_id
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::NotFound(path))
    }
}

/// Parses a pose file: 16 whitespace-separated numbers forming a row-major 4×4 matrix.
pub fn read_pose(path: impl AsRef<Path>) -> Result<RigidTransform> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::storage(path, e)
        }
    })?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("bad pose value {t:?} in {}", path.display()))))
        .collect::<Result<_>>()?;
    if values.len() != 16 {
        return Err(Error::Format(format!(
            "{} holds {} numbers, expected 16",
            path.display(),
            values.len()
        )));
    }
    RigidTransform::from_matrix4(&Matrix4::from_row_slice(&values), POSE_TOL)
}

pub fn write_pose(path: impl AsRef<Path>, pose: &RigidTransform) -> Result<()> {
    let path = path.as_ref();
    let m = pose.to_matrix4();
    let mut text = String::new();
    for i in 0..4 {
        let row: Vec<String> = (0..4).map(|j| format!("{:?}", m[(i, j)])).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::storage(path, e))
}

/// Reads a scene directory and its clouds.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<(SceneBundle, ScenePair)> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let query_path = require(dir.join(QUERY_FILE))?;
    let target_path = require(dir.join(TARGET_FILE))?;
    let pose_path = require(dir.join(POSE_FILE))?;
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::storage(&meta_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?
    } else {
        SceneMeta::default()
    };

    let gt = read_pose(&pose_path)?;
    let query = load_ply(&query_path)?;
    let target = load_ply(&target_path)?;
    let query_diameter = match meta.query_diameter {
        Some(d) => d,
        None => diameter(&query)?,
    };
    let bundle = SceneBundle {
        dir: dir.to_path_buf(),
        query_path,
        target_path,
        pose_path,
        meta,
    };
    Ok((
        bundle,
        ScenePair {
            query,
            target,
            gt_pose: Some(gt),
            query_diameter,
        },
    ))
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<ScenePair> {
    Ok(load_bundle(dir)?.1)
}

/// Writes a scene directory. The pair must carry a ground-truth pose.
pub fn save_scene(dir: impl AsRef<Path>, pair: &ScenePair, meta: &SceneMeta) -> Result<()> {
    let dir = dir.as_ref();
    let gt = pair
        .gt_pose
        .ok_or_else(|| Error::InvalidArgument("a scene bundle needs a ground-truth pose".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
    save_ply(dir.join(QUERY_FILE), &pair.query)?;
    save_ply(dir.join(TARGET_FILE), &pair.target)?;
    write_pose(dir.join(POSE_FILE), &gt)?;
    let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
    text.push('\n');
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, text).map_err(|e| Error::storage(&meta_path, e))
}
