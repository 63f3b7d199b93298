//! Training losses evaluated on hand-built features: the overlap-weighted
//! circle loss and the dense negative log-likelihood.

use coff::features::{FeatureMatrix, FeatureRole};
use coff::geometry::{Point3, RigidTransform};
use coff::losses::{circle_loss, dense_nll_loss, dense_supervision, CircleLossConfig};
use coff::matching::sinkhorn;
use nalgebra::DMatrix;

fn on_circle(angles: &[f64]) -> coff::Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
    FeatureMatrix::from_rows(FeatureRole::Patch2d, 2, &rows)
}

fn main() -> coff::Result<()> {
    let cfg = CircleLossConfig::default();
    let overlaps = DMatrix::from_row_slice(3, 3, &[0.8, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.05, 0.9]);
    let anchors = on_circle(&[0.0, 2.0, 4.0])?;
    for spread in [0.0, 0.05, 0.2, 0.5] {
        let targets = on_circle(&[spread, 2.0 + spread, 4.0 + spread])?;
        println!("positive offset {spread:.2} rad: circle loss {:.4}", circle_loss(&anchors, &targets, &overlaps, &cfg)?);
    }

    let pts: Vec<Point3> = (0..4).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
    let shifted: Vec<Point3> = pts[..3].iter().map(|p| p + nalgebra::Vector3::new(0.01, 0.0, 0.0)).collect();
    let sup = dense_supervision(&pts, &shifted, &RigidTransform::identity(), 0.05);
    println!("dense supervision: {} matched, unmatched p {:?}, unmatched q {:?}", sup.matched.len(), sup.unmatched_p, sup.unmatched_q);
    for sharp in [1.0, 4.0, 16.0] {
        let logits = DMatrix::from_fn(4, 3, |i, j| if i == j { sharp } else { 0.0 });
        let assign = sinkhorn(&logits, 0.0, 100)?;
        println!("diagonal logit {sharp:>4}: dense NLL {:.4}", dense_nll_loss(&assign, &sup)?);
    }
    Ok(())
}
