//! Local-to-global registration against a single global Kabsch fit and
//! seeded RANSAC when half of the correspondences are wrong.

use coff::estimation::{lgr, ransac_registration, EstimationConfig};
use coff::geometry::{kabsch, rotation_error, translation_error, Point3, RigidTransform};
use coff::matching::{FineMatch, FineMatches};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> coff::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gt = RigidTransform::random(&mut rng, 1.0);
    let (mut p, mut q, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for g in 0..10 {
        let center = Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5));
        let wrong = g * 4 + if g >= 5 { 4 } else { 0 };
        let mut group = Vec::new();
        for k in 0..40 {
            let x = Point3::from(center + Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3)));
            let y = if k < wrong {
                Point3::from(Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)))
            } else {
                gt.apply(&x)
            };
            group.push(FineMatch { p: p.len(), q: q.len(), confidence: rng.random_range(0.2..1.0) });
            p.push(x);
            q.push(y);
        }
        groups.push(group);
    }
    let cfg = EstimationConfig::default();
    let fine = FineMatches { groups };

    let report = |name: &str, t: &RigidTransform| {
        println!("{name:>14}: RE {:8.4} deg  TE {:.4} m", rotation_error(t, &gt), translation_error(t, &gt));
    };
    let r = lgr(&fine, &p, &q, &cfg)?;
    report("LGR", &r.transform);
    println!("{:>14}  {} candidates, inliers per round {:?}", "", r.candidate_count, r.inlier_history);
    report("global Kabsch", &kabsch(&p, &q, &vec![1.0; p.len()])?);
    report("RANSAC", &ransac_registration(&p, &q, &cfg, 0)?.transform);
    Ok(())
}
