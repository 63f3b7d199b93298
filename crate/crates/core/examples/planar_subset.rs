//! Scores how much of each pair's overlap lies on one plane and keeps the
//! pairs above the threshold.

use coff::io::manifest::load_manifest;
use coff::subsets::{extract_subset, PlanarityConfig};
use coff::synthetic::{generate, GeneratorParams, SceneKind};

fn main() -> coff::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = generate(SceneKind::MixedPlanarity, &GeneratorParams::default())?;
    let manifest = load_manifest(data.write(dir.path())?)?;

    for tau2 in [0.7, 0.8] {
        let cfg = PlanarityConfig { tau2, ..Default::default() };
        let (subset, reports) = extract_subset(&manifest, &cfg)?;
        println!("tau2 {tau2}: {}/{} pairs selected", subset.pairs.len(), manifest.pairs.len());
        for (pair, r) in manifest.pairs.iter().zip(&reports) {
            let score = r.score.map_or("-".to_string(), |s| format!("{s:.3}"));
            println!("  {:<24} overlap {:5}  plane inliers {:5}  r {score}  planar {}", pair.id_p, r.overlap_size, r.plane_inliers, r.is_planar);
        }
    }
    Ok(())
}
