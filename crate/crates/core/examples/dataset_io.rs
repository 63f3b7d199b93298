//! Writes a synthetic dataset, reads every artifact back and checks the
//! round trip.

use coff::io::cloud::load_cloud;
use coff::io::manifest::{load_manifest, save_manifest};
use coff::io::ppm::load_ppm;
use coff::synthetic::{generate, GeneratorParams, SceneKind};

fn main() -> coff::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = generate(SceneKind::SymmetricPair, &GeneratorParams { pairs: 2, ..Default::default() })?;
    let path = data.write(dir.path())?;
    let manifest = load_manifest(&path)?;
    manifest.check_paths()?;
    println!("{}: {} clouds, {} pairs", path.display(), manifest.clouds.len(), manifest.pairs.len());

    for (id, entry) in &manifest.clouds {
        let cloud = load_cloud(manifest.resolve(&entry.path))?;
        assert_eq!(cloud.points, data.clouds[id].points);
        for img in &entry.images {
            let path = manifest.resolve(&img.path);
            assert_eq!(&load_ppm(&path)?, &data.images[&img.path]);
        }
        println!("  {id}: {} points, {} images match", cloud.len(), entry.images.len());
    }

    let copy = dir.path().join("copy.json");
    save_manifest(&copy, &manifest)?;
    let back = load_manifest(&copy)?;
    assert_eq!(back.pairs, manifest.pairs);
    assert_eq!(back.clouds, manifest.clouds);
    println!("manifest round trip is lossless; pair 0 GT:\n{}", back.pairs[0].gt.to_matrix4());
    Ok(())
}
