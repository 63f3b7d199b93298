//! Recovers a random rigid transform from noisy correspondences with
//! weighted Kabsch.

use coff::geometry::{kabsch, rotation_error, translation_error, weighted_residual, Point3, RigidTransform};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> coff::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = RigidTransform::random(&mut rng, 2.0);
    let src: Vec<Point3> = (0..200)
        .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();

    for sigma in [0.0, 0.005, 0.02] {
        let noise = Normal::new(0.0, sigma).unwrap();
        let dst: Vec<Point3> = src
            .iter()
            .map(|p| gt.apply(p) + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let w = vec![1.0; src.len()];
        let est = kabsch(&src, &dst, &w)?;
        println!(
            "sigma {sigma:.3}: RE {:.5} deg  TE {:.5} m  residual {:.5}",
            rotation_error(&est, &gt),
            translation_error(&est, &gt),
            weighted_residual(&est, &src, &dst, &w)
        );
    }
    Ok(())
}
