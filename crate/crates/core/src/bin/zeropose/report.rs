//! Report schema. Every wall-clock value lives under a `timings` key so reruns can be
//! compared after stripping those keys.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use zeropose::metrics::{fmr, PoseErrors};
use zeropose::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_HEADER: [&str; 9] = [
    "run", "scenes", "evaluated", "failed", "mean_ron", "fmr", "ar", "mean_rre", "mean_rte",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub extraction: f64,
    pub matching: f64,
    pub ransac: f64,
    pub icp: f64,
}

impl Timings {
    pub fn mean(items: impl IntoIterator<Item = Timings>) -> Timings {
        let mut sum = Timings::default();
        let mut n = 0usize;
        for t in items {
            sum.extraction += t.extraction;
            sum.matching += t.matching;
            sum.ransac += t.ransac;
            sum.icp += t.icp;
            n += 1;
        }
        if n > 0 {
            let k = n as f64;
            sum.extraction /= k;
            sum.matching /= k;
            sum.ransac /= k;
            sum.icp /= k;
        }
        sum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMatch {
    pub scene_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Estimated pose, row-major 4×4, in normalized units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[[f64; 4]; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_error: Option<f64>,
    #[serde(default)]
    pub inlier_ratio: f64,
    #[serde(default)]
    pub inlier_count: usize,
    #[serde(default)]
    pub correspondence_count: usize,
    #[serde(default)]
    pub ransac_iterations_run: usize,
    #[serde(default)]
    pub icp_iterations_run: usize,
    #[serde(default)]
    pub icp_rmse: f64,
    #[serde(default)]
    pub timings: Timings,
}

impl SceneMatch {
    pub fn failed(scene_id: &str, error: &Error) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            status: Status::Failed,
            error: Some(error.to_string()),
            pose: None,
            rotation_error: None,
            translation_error: None,
            inlier_ratio: 0.0,
            inlier_count: 0,
            correspondence_count: 0,
            ransac_iterations_run: 0,
            icp_iterations_run: 0,
            icp_rmse: 0.0,
            timings: Timings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchRun {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub scenes: Vec<SceneMatch>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ron: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<PoseErrors>,
    #[serde(default)]
    pub model_diameter: f64,
    /// MSSD below each recall threshold; all false for a failed scene.
    pub success: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenes: usize,
    pub evaluated: usize,
    pub failed: usize,
    pub mean_ron: f64,
    pub fmr: f64,
    pub ar: f64,
    pub mean_rre: f64,
    pub mean_rte: f64,
}

/// Aggregates from per-scene rows. Failed scenes count as misses in the recall surrogate
/// and are left out of the RON and error means.
pub fn summarize(rows: &[SceneEval], tau2: f64) -> Result<Summary> {
    let rons: Vec<f64> = rows.iter().filter_map(|r| r.ron).collect();
    let errors: Vec<PoseErrors> = rows.iter().filter_map(|r| r.errors).collect();
    let width = rows.first().map_or(0, |r| r.success.len());
    if rows.iter().any(|r| r.success.len() != width) {
        return Err(Error::Consistency("rows use different recall thresholds".into()));
    }
    let hits: usize = rows.iter().map(|r| r.success.iter().filter(|&&s| s).count()).sum();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(Summary {
        scenes: rows.len(),
        evaluated: rows.iter().filter(|r| r.status == Status::Ok).count(),
        failed: rows.iter().filter(|r| r.status == Status::Failed).count(),
        mean_ron: mean(&rons),
        fmr: if rons.is_empty() { 0.0 } else { fmr(&rons, tau2)? },
        ar: if rows.is_empty() || width == 0 {
            0.0
        } else {
            hits as f64 / (rows.len() * width) as f64
        },
        mean_rre: mean(&errors.iter().map(|e| e.rre).collect::<Vec<_>>()),
        mean_rte: mean(&errors.iter().map(|e| e.rte).collect::<Vec<_>>()),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRun {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub tau2: f64,
    pub recall_thresholds: Vec<f64>,
    pub scenes: Vec<SceneEval>,
    pub summary: Summary,
    pub timings: Timings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRun {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub runs: Vec<RunSummary>,
    pub total: Summary,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

/// Writes to `path`, or to stdout when there is none.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Storage {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::Storage {
                    path: "<stdout>".into(),
                    source: e,
                })
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Storage {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn summary_csv(runs: &[RunSummary], total: &Summary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let all = RunSummary {
        run: "all".into(),
        summary: *total,
    };
    for r in runs.iter().chain(std::iter::once(&all)) {
        let s = &r.summary;
        w.write_record([
            r.run.clone(),
            s.scenes.to_string(),
            s.evaluated.to_string(),
            s.failed.to_string(),
            s.mean_ron.to_string(),
            s.fmr.to_string(),
            s.ar.to_string(),
            s.mean_rre.to_string(),
            s.mean_rte.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
