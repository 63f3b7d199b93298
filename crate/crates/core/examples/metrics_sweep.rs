//! Registration metrics for a small benchmark and their threshold sweeps.

use coff::config::PipelineConfig;
use coff::io::manifest::load_manifest;
use coff::metrics::{ecdf, linspace, threshold_sweep, SweepGrid, SweepInput};
use coff::pipeline::run_manifest;
use coff::synthetic::{generate, GeneratorParams, SceneKind};

fn main() -> coff::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = generate(SceneKind::Cluttered, &GeneratorParams { pairs: 4, ..Default::default() })?;
    let manifest = load_manifest(data.write(dir.path())?)?;
    let cfg = PipelineConfig::default();
    let outcomes = run_manifest(&manifest, &cfg)?;

    println!("{:<36} IR     RMSE    RE(deg)  TE(m)   registered", "pair");
    for o in &outcomes {
        let e = &o.evaluation;
        println!("{:<36} {:.3}  {:.4}  {:7.3}  {:.4}  {}", e.pair_id, e.inlier_ratio, e.rmse, e.re_deg, e.te_m, e.registered);
    }

    let inputs: Vec<SweepInput> = manifest
        .pairs
        .iter()
        .zip(&outcomes)
        .map(|(pair, o)| SweepInput { correspondences: o.correspondences.clone(), gt: pair.gt, rmse: o.evaluation.rmse })
        .collect();
    let grid = SweepGrid {
        ir_radii: linspace(0.025, 0.2, 4),
        min_irs: linspace(0.0, 0.2, 3),
        rmse_thresholds: linspace(0.05, 0.2, 4),
    };
    for row in threshold_sweep(&inputs, &grid, &cfg.thresholds, Some(cfg.ir_sample_size), cfg.seed)? {
        println!("{:<22} {:.3} -> {:.2}", row.metric, row.threshold, row.value);
    }

    let rmses: Vec<f64> = outcomes.iter().map(|o| o.evaluation.rmse).collect();
    println!("RMSE ECDF: {:?}", ecdf(&rmses, &linspace(0.05, 0.2, 4))?);
    Ok(())
}
