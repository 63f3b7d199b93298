//! Voxel pyramid over a synthetic cloud and the superpoint patches built
//! from it.

use coff::config::PipelineConfig;
use coff::sampling::{build_hierarchy, point_to_node_group, HierarchicalCloud};
use coff::synthetic::{generate, GeneratorParams, SceneKind};

fn main() -> coff::Result<()> {
    let data = generate(SceneKind::Cluttered, &GeneratorParams { pairs: 1, ..Default::default() })?;
    let cloud = data.clouds.values().next().expect("one cloud");
    let cfg = PipelineConfig::default().hierarchy;

    let h = build_hierarchy(&cloud.points, cfg.base_voxel, cfg.num_levels)?;
    println!("input: {} points", cloud.points.len());
    for (l, voxel) in h.voxel_sizes.iter().enumerate() {
        println!("level {l}: voxel {voxel:.3} m, {} points", h.points(l).len());
    }

    let patches = point_to_node_group(h.points(HierarchicalCloud::DENSE_LEVEL), h.superpoints(), cfg.patch_capacity)?;
    let sizes: Vec<usize> = patches.iter().map(|p| p.size()).collect();
    println!(
        "{} superpoint patches, sizes {}..{} (capacity {})",
        patches.len(),
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0),
        cfg.patch_capacity
    );
    Ok(())
}
