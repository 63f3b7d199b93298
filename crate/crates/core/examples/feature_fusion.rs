//! Per-cloud feature extraction: geometric descriptors, pixel features
//! from the posed images, patch descriptors and the two fusion stages.

use coff::config::PipelineConfig;
use coff::io::manifest::load_manifest;
use coff::pipeline::{load_cloud_input, prepare_cloud};
use coff::synthetic::{generate, GeneratorParams, SceneKind};

fn main() -> coff::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = generate(SceneKind::TexturedPlane, &GeneratorParams { pairs: 1, ..Default::default() })?;
    let manifest = load_manifest(data.write(dir.path())?)?;
    let id = manifest.pairs[0].id_p.clone();

    for (name, pixel, patch) in [("3d only", false, false), ("pixel2d", true, false), ("patch2d", false, true), ("both", true, true)] {
        let mut cfg = PipelineConfig::default();
        cfg.features.use_pixel2d = pixel;
        cfg.features.use_patch2d = patch;
        let input = load_cloud_input(&manifest, &id, &cfg)?;
        let prepared = prepare_cloud(&input, &cfg)?;
        let valid = |m: &[bool]| m.iter().filter(|&&v| v).count();
        println!(
            "{name:>8}: {} images, dense {}x{}, superpoints {}x{}, patch rows with images {}/{}",
            input.images.len(),
            prepared.dense_features.rows(),
            prepared.dense_features.dim(),
            prepared.fused.rows(),
            prepared.fused.dim(),
            valid(prepared.patch_features.validity_mask()),
            prepared.patch_features.rows()
        );
    }
    Ok(())
}
