//! Geometry-only versus fused features on flat textured scenes, where
//! geometry alone cannot localize the overlap.

use coff::config::PipelineConfig;
use coff::io::manifest::load_manifest;
use coff::pipeline::run_manifest;
use coff::synthetic::{generate, GeneratorParams, SceneKind};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> coff::Result<()> {
    let pairs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let dir = tempfile::tempdir().expect("temp dir");
    let data = generate(SceneKind::TexturedPlane, &GeneratorParams { pairs, ..Default::default() })?;
    let manifest = load_manifest(data.write(dir.path())?)?;

    let mut geometry_only = PipelineConfig::default();
    geometry_only.features.use_pixel2d = false;
    geometry_only.features.use_patch2d = false;
    for (name, cfg) in [("geometry only", geometry_only), ("fused", PipelineConfig::default())] {
        let start = std::time::Instant::now();
        let out = run_manifest(&manifest, &cfg)?;
        let rr = out.iter().filter(|o| o.evaluation.registered).count() as f64 / out.len() as f64;
        let cir = median(out.iter().map(|o| o.coarse_inlier_ratio).collect());
        let ir = median(out.iter().map(|o| o.evaluation.inlier_ratio).collect());
        println!("{name:>14}: RR {rr:.2}  median coarse IR {cir:.3}  median IR {ir:.3}  ({:.1?})", start.elapsed());
    }
    Ok(())
}
