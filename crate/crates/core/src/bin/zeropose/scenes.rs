use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use zeropose::correspondence::{build_gamma, transfer_features};
use zeropose::dataset::{load_bundle, SceneMeta, QUERY_FILE};
use zeropose::descriptors::{extract_toy, DescriptorSet};
use zeropose::preprocess::{preprocess_pair, PreprocessConfig, ScenePair};
use zeropose::store::CacheManifest;
use zeropose::{Error, Result, RigidTransform};

use crate::{CacheDirArg, FeatureArgs, FeatureSource, PrepArgs};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A scene ready for the pipeline: preprocessed clouds plus model-frame symmetries in the
/// same normalized units.
pub struct Prepared {
    pub id: String,
    pub pair: ScenePair,
    pub gt: RigidTransform,
    pub meta: SceneMeta,
}

/// Scene directories (those holding a query cloud), sorted by name.
pub fn discover(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(root).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(root.to_path_buf()),
        _ => Error::Storage {
            path: root.to_path_buf(),
            source: e,
        },
    })?;
    let mut scenes = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Storage {
            path: root.to_path_buf(),
            source: e,
        })?;
        let path = entry.path();
        if path.join(QUERY_FILE).is_file() {
            scenes.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    scenes.sort();
    Ok(scenes)
}

impl PrepArgs {
    pub fn config(&self) -> PreprocessConfig {
        PreprocessConfig {
            sample_count: self.samples,
            outlier_k: self.outlier_k,
            outlier_std_ratio: self.outlier_std,
            rng_seed: self.seed,
        }
    }
}

pub fn prepare(id: &str, dir: &Path, prep: &PrepArgs) -> Result<Prepared> {
    let (bundle, raw) = load_bundle(dir)?;
    let mut meta = bundle.meta;
    let pair = if meta.preprocessed {
        raw
    } else {
        let pair = preprocess_pair(&raw, &prep.config())?;
        let s = 1.0 / pair.query_diameter;
        meta.symmetries = meta.symmetries.iter().map(|t| t.scaled(s)).collect();
        meta.query_diameter = Some(pair.query_diameter);
        meta.preprocessed = true;
        pair
    };
    let gt = pair
        .gt_pose
        .ok_or_else(|| Error::Validation(format!("scene {id} has no ground-truth pose")))?;
    Ok(Prepared {
        id: id.to_string(),
        pair,
        gt,
        meta,
    })
}

impl CacheDirArg {
    pub fn resolve(&self, scenes: &Path) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| scenes.join(".cache"))
    }
}

pub fn cache_key(scene: &str, role: &str) -> String {
    format!("{scene}/{role}")
}

pub fn cache_file(scene: &str, role: &str) -> String {
    format!("{scene}.{role}.dgdf")
}

/// Loads the manifest of a cache directory, empty when the directory is new.
pub fn load_manifest(dir: &Path) -> Result<CacheManifest> {
    match CacheManifest::load(dir.join(MANIFEST_FILE)) {
        Err(Error::NotFound(_)) => Ok(CacheManifest::default()),
        other => other,
    }
}

/// Query and target descriptors for a prepared scene.
pub fn features(
    scene: &Prepared,
    args: &FeatureArgs,
    cache: Option<(&Path, &CacheManifest)>,
) -> Result<(DescriptorSet, DescriptorSet)> {
    let cached = |role: &str| -> Result<DescriptorSet> {
        let (dir, manifest) = cache.ok_or_else(|| Error::InvalidArgument("no feature cache".into()))?;
        Ok(manifest.load_entry(dir, &cache_key(&scene.id, role))?.0)
    };
    let pair = &scene.pair;
    match args.features {
        FeatureSource::Toy => Ok((
            extract_toy(&pair.query, args.radius)?,
            extract_toy(&pair.target, args.radius)?,
        )),
        FeatureSource::Transferred => {
            let q = extract_toy(&pair.query, args.radius)?;
            let t = transfer_features(&build_gamma(&pair.query, &pair.target, &scene.gt)?, &q)?;
            Ok((q, t))
        }
        FeatureSource::Cached => Ok((cached("query")?, cached("target")?)),
        FeatureSource::CachedTransferred => Ok((cached("query")?, cached("transferred")?)),
    }
}

pub fn needs_cache(source: FeatureSource) -> bool {
    matches!(source, FeatureSource::Cached | FeatureSource::CachedTransferred)
}

/// Runs `f` on every scene in the current pool; the output keeps the input order.
pub fn per_scene<T: Send>(
    scenes: &[(String, PathBuf)],
    f: impl Fn(&str, &Path) -> T + Sync,
) -> Vec<T> {
    scenes.par_iter().map(|(id, dir)| f(id, dir)).collect()
}
