//! Benchmark commands behind the `coff` binary. Each writes its artifacts to
//! an output directory and returns what it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::SelectionStrategy;
use crate::io::manifest::{save_manifest, DatasetManifest};
use crate::metrics::{ecdf, feature_match_recall, linspace, metrics_csv, registration_recall, sweep_csv, threshold_sweep, write_text, SweepGrid, SweepInput, SweepRow};
use crate::pipeline::{run_manifest, PairOutcome};
use crate::subsets::{extract_subset, PlanarityConfig, PlaneAmbiguityReport};
use crate::synthetic::{generate, GeneratorParams, SceneKind};

/// Runs `f` on a pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Aggregate numbers over one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub pairs: usize,
    pub failures: usize,
    pub registered: usize,
    pub registration_recall: f64,
    pub feature_match_recall: f64,
    pub mean_inlier_ratio: f64,
    pub median_coarse_inlier_ratio: f64,
    /// Means over registered pairs.
    pub mean_re_deg: f64,
    pub mean_te_m: f64,
}

pub fn summarize(outcomes: &[PairOutcome], cfg: &PipelineConfig) -> Result<RunSummary> {
    let irs: Vec<f64> = outcomes.iter().map(|o| o.evaluation.inlier_ratio).collect();
    let rmses: Vec<f64> = outcomes.iter().map(|o| o.evaluation.rmse).collect();
    let cirs: Vec<f64> = outcomes.iter().map(|o| o.coarse_inlier_ratio).collect();
    let ok: Vec<&PairOutcome> = outcomes.iter().filter(|o| o.evaluation.registered).collect();
    let empty = outcomes.is_empty();
    Ok(RunSummary {
        pairs: outcomes.len(),
        failures: outcomes.iter().filter(|o| o.failure.is_some()).count(),
        registered: ok.len(),
        registration_recall: if empty { f64::NAN } else { registration_recall(&rmses, cfg.thresholds.rr_rmse)? },
        feature_match_recall: if empty { f64::NAN } else { feature_match_recall(&irs, cfg.thresholds.fmr_min_ir)? },
        mean_inlier_ratio: mean(&irs),
        median_coarse_inlier_ratio: median(&cirs),
        mean_re_deg: mean(&ok.iter().map(|o| o.evaluation.re_deg).collect::<Vec<_>>()),
        mean_te_m: mean(&ok.iter().map(|o| o.evaluation.te_m).collect::<Vec<_>>()),
    })
}

fn json_number(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn transforms_json(outcomes: &[PairOutcome]) -> String {
    let list: Vec<serde_json::Value> = outcomes
        .iter()
        .map(|o| {
            let m = o.transform.map(|t| {
                let m = t.to_matrix4();
                (0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect::<Vec<_>>()).collect::<Vec<_>>()
            });
            json!({
                "pair_id": o.evaluation.pair_id,
                "id_p": o.id_p,
                "id_q": o.id_q,
                "transform": m,
                "registered": o.evaluation.registered,
                "failure": o.failure,
            })
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&list).expect("plain data");
    s.push('\n');
    s
}

fn coarse_csv(outcomes: &[PairOutcome]) -> String {
    let mut s = String::from("pair_id,coarse_matches,coarse_ir,fine_matches,lgr_inliers\n");
    for o in outcomes {
        let _ = writeln!(s, "{},{},{},{},{}", o.evaluation.pair_id, o.coarse_matches, o.coarse_inlier_ratio, o.fine_matches, o.lgr_inliers);
    }
    s
}

fn ecdf_csv(outcomes: &[PairOutcome]) -> Result<String> {
    let mut s = String::from("metric,threshold,value\n");
    let columns: [(&str, fn(&PairOutcome) -> f64, Vec<f64>); 3] = [
        ("re_deg", |o| o.evaluation.re_deg, linspace(0.0, 10.0, 21)),
        ("te_m", |o| o.evaluation.te_m, linspace(0.0, 0.5, 21)),
        ("rmse", |o| o.evaluation.rmse, linspace(0.0, 0.5, 21)),
    ];
    for (name, get, grid) in columns {
        // unestimated pairs count as beyond every threshold
        let values: Vec<f64> = outcomes.iter().map(|o| if get(o).is_nan() { f64::INFINITY } else { get(o) }).collect();
        if values.is_empty() {
            continue;
        }
        for (t, v) in ecdf(&values, &grid)? {
            let _ = writeln!(s, "{name},{t},{v}");
        }
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct RegisterReport {
    pub outcomes: Vec<PairOutcome>,
    pub summary: RunSummary,
}

impl RegisterReport {
    pub fn has_failures(&self) -> bool {
        self.summary.failures > 0
    }
}

fn write_register_outputs(report: &RegisterReport, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let evals: Vec<_> = report.outcomes.iter().map(|o| o.evaluation.clone()).collect();
    write_text(out_dir.join("metrics.csv"), &metrics_csv(&evals))?;
    write_text(out_dir.join("coarse.csv"), &coarse_csv(&report.outcomes))?;
    write_text(out_dir.join("ecdf.csv"), &ecdf_csv(&report.outcomes)?)?;
    write_text(out_dir.join("transforms.json"), &transforms_json(&report.outcomes))?;
    let s = &report.summary;
    let summary = json!({
        "pairs": s.pairs,
        "failures": s.failures,
        "registered": s.registered,
        "registration_recall": json_number(s.registration_recall),
        "feature_match_recall": json_number(s.feature_match_recall),
        "mean_inlier_ratio": json_number(s.mean_inlier_ratio),
        "median_coarse_inlier_ratio": json_number(s.median_coarse_inlier_ratio),
        "mean_re_deg": json_number(s.mean_re_deg),
        "mean_te_m": json_number(s.mean_te_m),
    });
    write_text(out_dir.join("summary.json"), &format!("{}\n", serde_json::to_string_pretty(&summary).expect("plain data")))
}

/// Registers every pair, then writes `metrics.csv`, `coarse.csv`,
/// `ecdf.csv`, `transforms.json` and `summary.json`.
pub fn cmd_register(manifest: &DatasetManifest, cfg: &PipelineConfig, out_dir: &Path) -> Result<RegisterReport> {
    let outcomes = run_manifest(manifest, cfg)?;
    let summary = summarize(&outcomes, cfg)?;
    info!(
        "registered {}/{} pairs (RR {:.3}, FMR {:.3}, {} failures)",
        summary.registered, summary.pairs, summary.registration_recall, summary.feature_match_recall, summary.failures
    );
    let report = RegisterReport { outcomes, summary };
    write_register_outputs(&report, out_dir)?;
    Ok(report)
}

/// Writes a synthetic dataset below `out_dir`; returns the manifest path.
pub fn cmd_generate(kind: SceneKind, params: &GeneratorParams, out_dir: &Path) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let data = generate(kind, params)?;
    let path = data.write(out_dir)?;
    info!("wrote {} pairs of {kind} to {}", data.manifest.pairs.len(), path.display());
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct SubsetReport {
    pub selected: usize,
    pub total: usize,
    pub manifest_path: PathBuf,
    pub reports: Vec<PlaneAmbiguityReport>,
}

/// Writes `subset_manifest.json` with the planar pairs and `planarity.csv`
/// with every pair's score.
pub fn cmd_subset(manifest: &DatasetManifest, cfg: &PlanarityConfig, out_dir: &Path) -> Result<SubsetReport> {
    ensure_dir(out_dir)?;
    let (mut subset, reports) = extract_subset(manifest, cfg)?;
    // keep paths valid from the new location
    for c in subset.clouds.values_mut() {
        c.path = manifest.resolve(&c.path);
        for img in &mut c.images {
            img.path = manifest.resolve(&img.path);
            img.feature_raster = img.feature_raster.as_ref().map(|r| manifest.resolve(r));
        }
    }
    subset.base_dir = out_dir.to_path_buf();
    let manifest_path = out_dir.join("subset_manifest.json");
    save_manifest(&manifest_path, &subset)?;
    let mut csv = String::from("id_p,id_q,overlap_size,plane_inliers,r,is_planar\n");
    for (pair, r) in manifest.pairs.iter().zip(&reports) {
        let score = r.score.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(csv, "{},{},{},{},{},{}", pair.id_p, pair.id_q, r.overlap_size, r.plane_inliers, score, r.is_planar);
    }
    write_text(out_dir.join("planarity.csv"), &csv)?;
    let report = SubsetReport {
        selected: subset.pairs.len(),
        total: manifest.pairs.len(),
        manifest_path,
        reports,
    };
    info!("selected {}/{} pairs at tau1 {} tau2 {}", report.selected, report.total, cfg.tau1, cfg.tau2);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Features,
    Selection,
    NumImages,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(Self::Features),
            "selection" => Ok(Self::Selection),
            "num_images" => Ok(Self::NumImages),
            _ => Err(Error::InvalidArgument(format!("unknown ablation axis `{s}`"))),
        }
    }
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Features => "features",
            Self::Selection => "selection",
            Self::NumImages => "num_images",
        }
    }

    /// One labelled configuration per row of the comparison table.
    pub fn cells(self, base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
        let with = |f: &dyn Fn(&mut PipelineConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Self::Features => [("3d_only", false, false), ("pixel2d", true, false), ("patch2d", false, true), ("both", true, true)]
                .into_iter()
                .map(|(name, pixel, patch)| {
                    (
                        name.to_string(),
                        with(&|c| {
                            c.features.use_pixel2d = pixel;
                            c.features.use_patch2d = patch;
                        }),
                    )
                })
                .collect(),
            Self::Selection => [
                ("random", SelectionStrategy::Random(base.seed)),
                ("mean", SelectionStrategy::Mean),
                ("complement", SelectionStrategy::Complement),
            ]
            .into_iter()
            .map(|(name, s)| (name.to_string(), with(&|c| c.features.selection = s)))
            .collect(),
            Self::NumImages => (0..=5).map(|n| (n.to_string(), with(&|c| c.features.images_per_cloud = n))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: String,
    pub setting: String,
    pub summary: RunSummary,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("axis,setting,pairs,failures,rr,fmr,mean_ir,median_coarse_ir,mean_re_deg,mean_te_m\n");
    for r in rows {
        let m = &r.summary;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.axis,
            r.setting,
            m.pairs,
            m.failures,
            m.registration_recall,
            m.feature_match_recall,
            m.mean_inlier_ratio,
            m.median_coarse_inlier_ratio,
            m.mean_re_deg,
            m.mean_te_m
        );
    }
    s
}

/// Runs the pipeline once per cell of each axis and writes `ablation.csv`.
pub fn cmd_ablate(manifest: &DatasetManifest, base: &PipelineConfig, axes: &[AblationAxis], out_dir: &Path) -> Result<Vec<AblationRow>> {
    ensure_dir(out_dir)?;
    let mut rows = Vec::new();
    for &axis in axes {
        for (setting, cfg) in axis.cells(base) {
            let outcomes = run_manifest(manifest, &cfg)?;
            let summary = summarize(&outcomes, &cfg)?;
            info!("{} = {setting}: RR {:.3}", axis.name(), summary.registration_recall);
            rows.push(AblationRow {
                axis: axis.name().to_string(),
                setting,
                summary,
            });
        }
    }
    write_text(out_dir.join("ablation.csv"), &ablation_csv(&rows))?;
    Ok(rows)
}

/// Registers every pair once, then sweeps the metric thresholds over
/// `grid` and writes `sweep.csv`. Returns the rows and the run outcomes.
pub fn cmd_sweep(manifest: &DatasetManifest, cfg: &PipelineConfig, grid: &SweepGrid, out_dir: &Path) -> Result<(Vec<SweepRow>, Vec<PairOutcome>)> {
    ensure_dir(out_dir)?;
    let outcomes = run_manifest(manifest, cfg)?;
    let inputs: Vec<SweepInput> = manifest
        .pairs
        .iter()
        .zip(&outcomes)
        .map(|(pair, o)| SweepInput {
            correspondences: o.correspondences.clone(),
            gt: pair.gt,
            rmse: o.evaluation.rmse,
        })
        .collect();
    let rows = threshold_sweep(&inputs, grid, &cfg.thresholds, Some(cfg.ir_sample_size), cfg.seed)?;
    write_text(out_dir.join("sweep.csv"), &sweep_csv(&rows))?;
    Ok((rows, outcomes))
}
