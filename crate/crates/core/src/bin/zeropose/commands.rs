use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::Matrix4;
use serde_json::json;

use zeropose::correspondence::{build_gamma, transfer_features};
use zeropose::dataset::{load_ply, save_scene, synth_scene, SceneMeta, SynthConfig, POSE_TOL};
use zeropose::descriptors::extract_toy;
use zeropose::geometry::diameter;
use zeropose::metrics::{pose_errors, ron, EvalRecord, MetricThresholds};
use zeropose::registration::{estimate_pose, IcpConfig, IcpVariant, RansacConfig};
use zeropose::store::{
    cache_file_len, fnv1a64, read_cache, reduction_ratio, storage_report, write_cache, FeatureCacheHeader,
    ManifestEntry, HEADER_LEN,
};
use zeropose::{Error, Result, RigidTransform};

use crate::report::{
    emit, read_json, summarize, summary_csv, to_json, EvalRun, MatchRun, ReportRun, RunSummary, SceneEval,
    SceneMatch, Status, Timings, SCHEMA_VERSION, TOOL_VERSION,
};
use crate::scenes::{
    cache_file, cache_key, discover, features, load_manifest, needs_cache, per_scene, prepare, Prepared,
    MANIFEST_FILE,
};
use crate::{
    CacheCommand, EvalArgs, ExtractArgs, IcpVariantArg, MatchArgs, Outcome, PreprocessArgs, ReportArgs,
    StorageArgs, SynthArgs, TransferArgs,
};

fn storage_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Storage {
        path: path.to_path_buf(),
        source: e,
    }
}

fn outcome(any_failed: bool) -> Outcome {
    if any_failed {
        Outcome::SceneFailures
    } else {
        Outcome::Success
    }
}

/// Status lines for commands whose product is files on disk.
fn status_report(command: &str, results: &[(String, Result<()>)]) -> Result<Outcome> {
    let scenes: Vec<_> = results
        .iter()
        .map(|(id, r)| match r {
            Ok(()) => json!({ "scene_id": id, "status": "ok" }),
            Err(e) => json!({ "scene_id": id, "status": "failed", "error": e.to_string() }),
        })
        .collect();
    emit(None, &to_json(&json!({ "command": command, "scenes": scenes })))?;
    Ok(outcome(results.iter().any(|(_, r)| r.is_err())))
}

/// Seed of the `index`-th scene generated from `seed`.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn synth(args: &SynthArgs) -> Result<Outcome> {
    fs::create_dir_all(&args.out).map_err(storage_err(&args.out))?;
    let ids: Vec<(String, std::path::PathBuf)> = (0..args.count)
        .map(|i| {
            let id = format!("scene_{i:04}");
            let dir = args.out.join(&id);
            (id, dir)
        })
        .collect();
    let results = per_scene(&ids, |id, dir| {
        let index: u64 = id["scene_".len()..].parse().expect("generated id");
        let config = SynthConfig {
            shape: args.shape,
            point_count: args.points,
            partial_fraction: args.partial,
            noise_sigma: args.noise,
            rng_seed: scene_seed(args.seed, index),
        };
        let meta = SceneMeta {
            object_id: args.shape.name().to_string(),
            units: "synthetic".into(),
            symmetries: args.shape.symmetries(),
            ..Default::default()
        };
        (id.to_string(), synth_scene(&config).and_then(|pair| save_scene(dir, &pair, &meta)))
    });
    status_report("synth", &results)
}

pub fn preprocess(args: &PreprocessArgs) -> Result<Outcome> {
    let scenes = discover(&args.scenes)?;
    fs::create_dir_all(&args.out).map_err(storage_err(&args.out))?;
    let results = per_scene(&scenes, |id, dir| {
        let r = prepare(id, dir, &args.prep).and_then(|p| save_scene(args.out.join(id), &p.pair, &p.meta));
        (id.to_string(), r)
    });
    status_report("preprocess", &results)
}

fn manifest_entry(file: &str, features: &zeropose::descriptors::DescriptorSet, diameter: f64, checksum: u64) -> ManifestEntry {
    ManifestEntry {
        path: file.into(),
        dim: features.dim(),
        point_count: features.len(),
        query_diameter: diameter,
        checksum,
    }
}

/// Writes per-scene cache entries, then merges them into the manifest in scene order.
fn cache_scenes(
    command: &str,
    cache_dir: &Path,
    scenes: &[(String, std::path::PathBuf)],
    f: impl Fn(&str, &Path) -> Result<Vec<(String, ManifestEntry)>> + Sync,
) -> Result<Outcome> {
    fs::create_dir_all(cache_dir).map_err(storage_err(cache_dir))?;
    let produced = per_scene(scenes, |id, dir| (id.to_string(), f(id, dir)));
    let mut manifest = load_manifest(cache_dir)?;
    let mut results = Vec::with_capacity(produced.len());
    for (id, r) in produced {
        results.push((
            id,
            r.map(|entries| manifest.entries.extend(entries)),
        ));
    }
    manifest.save(cache_dir.join(MANIFEST_FILE))?;
    status_report(command, &results)
}

pub fn extract(args: &ExtractArgs) -> Result<Outcome> {
    let scenes = discover(&args.scenes)?;
    let cache_dir = args.cache.resolve(&args.scenes);
    cache_scenes("extract", &cache_dir, &scenes, |id, dir| {
        let p = prepare(id, dir, &args.prep)?;
        let mut entries = Vec::new();
        for (role, cloud) in [("query", &p.pair.query), ("target", &p.pair.target)] {
            let f = extract_toy(cloud, args.radius)?;
            let file = cache_file(id, role);
            let checksum = write_cache(cache_dir.join(&file), &f, Some(cloud))?;
            entries.push((cache_key(id, role), manifest_entry(&file, &f, p.pair.query_diameter, checksum)));
        }
        Ok(entries)
    })
}

pub fn transfer(args: &TransferArgs) -> Result<Outcome> {
    let scenes = discover(&args.scenes)?;
    let cache_dir = args.cache.resolve(&args.scenes);
    let manifest = load_manifest(&cache_dir)?;
    cache_scenes("transfer", &cache_dir, &scenes, |id, dir| {
        let p = prepare(id, dir, &args.prep)?;
        let (qf, _) = manifest.load_entry(&cache_dir, &cache_key(id, "query"))?;
        let gamma = build_gamma(&p.pair.query, &p.pair.target, &p.gt)?;
        let tf = transfer_features(&gamma, &qf)?;
        let file = cache_file(id, "transferred");
        let checksum = write_cache(cache_dir.join(&file), &tf, Some(&p.pair.target))?;
        Ok(vec![(
            cache_key(id, "transferred"),
            manifest_entry(&file, &tf, p.pair.query_diameter, checksum),
        )])
    })
}

pub fn cache(command: CacheCommand) -> Result<Outcome> {
    match command {
        CacheCommand::Write {
            cloud,
            out,
            radius,
            no_coords,
        } => {
            let points = load_ply(&cloud)?;
            let f = extract_toy(&points, radius)?;
            let checksum = write_cache(&out, &f, (!no_coords).then_some(&points))?;
            emit(
                None,
                &to_json(&json!({
                    "path": out,
                    "point_count": f.len(),
                    "dim": f.dim(),
                    "checksum": format!("{checksum:016x}"),
                })),
            )?;
            Ok(Outcome::Success)
        }
        CacheCommand::Read { file, dim } => {
            let (f, coords) = read_cache(&file, dim)?;
            let rows: Vec<&[f64]> = f.rows().collect();
            emit(
                None,
                &to_json(&json!({
                    "point_count": f.len(),
                    "dim": f.dim(),
                    "has_coords": coords.is_some(),
                    "rows": rows,
                })),
            )?;
            Ok(Outcome::Success)
        }
        CacheCommand::Info { file } => {
            let bytes = fs::read(&file).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound(file.clone()),
                _ => Error::Storage {
                    path: file.clone(),
                    source: e,
                },
            })?;
            let h = FeatureCacheHeader::parse(&bytes)?;
            let expected = cache_file_len(h.point_count as usize, h.dim as usize, h.has_coords());
            emit(
                None,
                &to_json(&json!({
                    "version": h.version,
                    "point_count": h.point_count,
                    "dim": h.dim,
                    "has_coords": h.has_coords(),
                    "file_len": bytes.len(),
                    "expected_len": expected,
                    "checksum": format!("{:016x}", fnv1a64(&bytes[HEADER_LEN.min(bytes.len())..])),
                })),
            )?;
            Ok(outcome(bytes.len() != expected))
        }
        CacheCommand::Verify { cache_dir } => {
            let manifest = zeropose::store::CacheManifest::load(cache_dir.join(MANIFEST_FILE))?;
            let results: Vec<(String, Result<()>)> = manifest
                .entries
                .keys()
                .map(|id| (id.clone(), manifest.load_entry(&cache_dir, id).map(|_| ())))
                .collect();
            let entries: Vec<_> = results
                .iter()
                .map(|(id, r)| match r {
                    Ok(()) => json!({ "entry": id, "status": "ok" }),
                    Err(e) => json!({ "entry": id, "status": "failed", "error": e.to_string() }),
                })
                .collect();
            emit(None, &to_json(&json!({ "command": "cache verify", "entries": entries })))?;
            Ok(outcome(results.iter().any(|(_, r)| r.is_err())))
        }
    }
}

fn config_echo<T: serde::Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn matrix_rows(t: &RigidTransform) -> [[f64; 4]; 4] {
    let m = t.to_matrix4();
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn load_scene_cache(source: crate::FeatureSource, args_cache: &crate::CacheDirArg, scenes: &Path) -> Result<Option<(std::path::PathBuf, zeropose::store::CacheManifest)>> {
    if !needs_cache(source) {
        return Ok(None);
    }
    let dir = args_cache.resolve(scenes);
    let manifest = zeropose::store::CacheManifest::load(dir.join(MANIFEST_FILE))?;
    Ok(Some((dir, manifest)))
}

fn match_scene(args: &MatchArgs, cache: Option<(&Path, &zeropose::store::CacheManifest)>, p: &Prepared) -> Result<SceneMatch> {
    let start = Instant::now();
    let (qf, tf) = features(p, &args.features, cache)?;
    let extraction = start.elapsed().as_secs_f64();
    let ransac = RansacConfig {
        iterations: args.ransac_iters,
        inlier_threshold: args.inlier_threshold,
        triplet_consistency_tol: args.consistency_tol,
        rng_seed: args.prep.seed,
        early_stop_confidence: None,
    };
    let icp = IcpConfig {
        max_iterations: args.icp_iters,
        max_correspondence_distance: args.icp_distance,
        variant: match args.icp_variant {
            IcpVariantArg::PointToPoint => IcpVariant::PointToPoint,
            IcpVariantArg::PointToPlane => IcpVariant::PointToPlane,
        },
        reciprocal: args.icp_reciprocal,
        ..IcpConfig::default()
    };
    let r = estimate_pose(&p.pair, &qf, &tf, &ransac, &icp)?;
    Ok(SceneMatch {
        scene_id: p.id.clone(),
        status: Status::Ok,
        error: None,
        pose: Some(matrix_rows(&r.pose)),
        rotation_error: Some(r.pose.rotation_error(&p.gt)),
        translation_error: Some(r.pose.translation_error(&p.gt)),
        inlier_ratio: r.inlier_ratio,
        inlier_count: r.inlier_count,
        correspondence_count: r.correspondence_count,
        ransac_iterations_run: r.ransac_iterations_run,
        icp_iterations_run: r.icp_iterations_run,
        icp_rmse: r.icp_rmse,
        timings: Timings {
            extraction,
            matching: r.timings.matching,
            ransac: r.timings.ransac,
            icp: r.timings.icp,
        },
    })
}

pub fn run_match(args: &MatchArgs) -> Result<Outcome> {
    let scenes = discover(&args.scenes)?;
    let cache = load_scene_cache(args.features.features, &args.features.cache, &args.scenes)?;
    let cache_ref = cache.as_ref().map(|(d, m)| (d.as_path(), m));
    let rows = per_scene(&scenes, |id, dir| {
        prepare(id, dir, &args.prep)
            .and_then(|p| match_scene(args, cache_ref, &p))
            .unwrap_or_else(|e| SceneMatch::failed(id, &e))
    });
    let any_failed = rows.iter().any(|r| r.status == Status::Failed);
    let run = MatchRun {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.into(),
        command: "match".into(),
        config: config_echo(args),
        timings: Timings::mean(rows.iter().filter(|r| r.status == Status::Ok).map(|r| r.timings)),
        scenes: rows,
    };
    emit(args.out.as_deref(), &to_json(&run))?;
    Ok(outcome(any_failed))
}

fn eval_scene(
    args: &EvalArgs,
    thresholds: &MetricThresholds,
    cache: Option<(&Path, &zeropose::store::CacheManifest)>,
    estimates: Option<&BTreeMap<String, SceneMatch>>,
    p: &Prepared,
) -> Result<SceneEval> {
    let (qf, tf) = features(p, &args.features, cache)?;
    let ron_value = ron(&qf, &tf, &p.pair.query, &p.pair.target, &p.gt, thresholds.tau1_fraction)?;
    let model_diameter = diameter(&p.pair.query)?;
    let failed = |error: String| SceneEval {
        scene_id: p.id.clone(),
        status: Status::Failed,
        error: Some(error),
        ron: Some(ron_value),
        errors: None,
        model_diameter,
        success: vec![false; thresholds.recall_thresholds.len()],
    };
    let est = match estimates {
        None => p.gt,
        Some(map) => match map.get(&p.id) {
            None => return Ok(failed("scene missing from the match report".into())),
            Some(m) => match (&m.status, m.pose) {
                (Status::Ok, Some(rows)) => {
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    RigidTransform::from_matrix4(&Matrix4::from_row_slice(&flat), POSE_TOL)?
                }
                _ => return Ok(failed(m.error.clone().unwrap_or_else(|| "matching failed".into()))),
            },
        },
    };
    let errors = pose_errors(&est, &p.gt, &p.pair.query, &p.meta.symmetries)?;
    let record = EvalRecord::new(&p.id, ron_value, errors, model_diameter, &thresholds.recall_thresholds);
    Ok(SceneEval {
        scene_id: record.scene_id,
        status: Status::Ok,
        error: None,
        ron: Some(record.ron),
        errors: Some(record.errors),
        model_diameter: record.model_diameter,
        success: record.success,
    })
}

pub fn eval(args: &EvalArgs) -> Result<Outcome> {
    let thresholds = MetricThresholds {
        tau1_fraction: args.tau1,
        tau2: args.tau2,
        ..MetricThresholds::default()
    };
    thresholds.validate()?;
    let scenes = discover(&args.scenes)?;
    let cache = load_scene_cache(args.features.features, &args.features.cache, &args.scenes)?;
    let cache_ref = cache.as_ref().map(|(d, m)| (d.as_path(), m));
    let matches: Option<MatchRun> = args.matches.as_deref().map(read_json).transpose()?;
    let estimates: Option<BTreeMap<String, SceneMatch>> = matches
        .as_ref()
        .map(|m| m.scenes.iter().map(|s| (s.scene_id.clone(), s.clone())).collect());

    let rows = per_scene(&scenes, |id, dir| {
        prepare(id, dir, &args.prep)
            .and_then(|p| eval_scene(args, &thresholds, cache_ref, estimates.as_ref(), &p))
            .unwrap_or_else(|e| SceneEval {
                scene_id: id.to_string(),
                status: Status::Failed,
                error: Some(e.to_string()),
                ron: None,
                errors: None,
                model_diameter: 0.0,
                success: vec![false; thresholds.recall_thresholds.len()],
            })
    });
    let run = EvalRun {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.into(),
        command: "eval".into(),
        config: config_echo(args),
        tau2: thresholds.tau2,
        recall_thresholds: thresholds.recall_thresholds.clone(),
        summary: summarize(&rows, thresholds.tau2)?,
        timings: matches.map(|m| m.timings).unwrap_or_default(),
        scenes: rows,
    };
    emit(args.out.as_deref(), &to_json(&run))?;
    Ok(outcome(run.summary.failed > 0))
}

pub fn report(args: &ReportArgs) -> Result<Outcome> {
    let evals: Vec<EvalRun> = args.inputs.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let tau2 = evals[0].tau2;
    if evals.iter().any(|e| e.tau2 != tau2 || e.recall_thresholds != evals[0].recall_thresholds) {
        return Err(Error::Consistency("inputs were evaluated with different thresholds".into()));
    }
    let runs: Vec<RunSummary> = args
        .inputs
        .iter()
        .zip(&evals)
        .map(|(path, e)| {
            Ok(RunSummary {
                run: path.display().to_string(),
                summary: summarize(&e.scenes, tau2)?,
            })
        })
        .collect::<Result<_>>()?;
    let all_rows: Vec<SceneEval> = evals.iter().flat_map(|e| e.scenes.iter().cloned()).collect();
    let total = summarize(&all_rows, tau2)?;
    let out = ReportRun {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.into(),
        command: "report".into(),
        runs,
        total,
    };
    emit(args.out_json.as_deref(), &to_json(&out))?;
    if let Some(csv_path) = &args.out_csv {
        emit(Some(csv_path), &summary_csv(&out.runs, &out.total)?)?;
    }
    Ok(outcome(total.failed > 0))
}

pub fn storage(args: &StorageArgs) -> Result<Outcome> {
    let value = match (args.full_bytes, args.query_bytes) {
        (Some(full), Some(query)) => json!({
            "full_bytes": full,
            "query_only_bytes": query,
            "reduction_ratio": reduction_ratio(full, query),
        }),
        _ => {
            let q = args
                .query_objects
                .ok_or_else(|| Error::InvalidArgument("--query-objects or --full-bytes is required".into()))?;
            let points = args
                .points
                .ok_or_else(|| Error::InvalidArgument("--points is required".into()))?;
            let r = storage_report(q, args.target_instances, points, args.dim, args.bytes_per_value)?;
            serde_json::to_value(r).expect("report serializes")
        }
    };
    emit(None, &to_json(&value))?;
    Ok(Outcome::Success)
}
