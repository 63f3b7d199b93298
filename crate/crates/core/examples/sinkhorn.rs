//! Coarse matching with dual normalization, then optimal transport with a
//! dustbin and mutual top-k selection.

use coff::features::{FeatureMatrix, FeatureRole};
use coff::matching::{dual_normalize, gaussian_correlation, mutual_topk, select_coarse, sinkhorn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn main() -> coff::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // q is a shuffled, slightly perturbed copy of p plus two distractors
    let p = random_features(&mut rng, 8, 16);
    let perm = [3usize, 0, 7, 1, 6, 2, 5, 4];
    let mut q: Vec<Vec<f64>> = perm.iter().map(|&i| p[i].iter().map(|v| v + rng.random_range(-0.05..0.05)).collect()).collect();
    q.extend(random_features(&mut rng, 2, 16));
    let mut fp = FeatureMatrix::from_rows(FeatureRole::Fused, 16, &p)?;
    let mut fq = FeatureMatrix::from_rows(FeatureRole::Fused, 16, &q)?;
    fp.normalize_rows();
    fq.normalize_rows();

    let scores = dual_normalize(&gaussian_correlation(&fp, &fq)?);
    let coarse = select_coarse(&scores, 8)?;
    println!("coarse matches (p -> q):");
    for m in &coarse.pairs {
        println!("  {} -> {}  score {:.3}", m.p, m.q, m.score);
    }

    let logits = DMatrix::from_fn(8, 10, |i, j| (0..16).map(|k| fp.row(i)[k] * fq.row(j)[k]).sum::<f64>() * 4.0);
    let assign = sinkhorn(&logits, 0.5, 100)?;
    let fine = mutual_topk(&assign, 1, 0.05)?;
    let correct = fine.iter().filter(|m| perm[m.q.min(7)] == m.p && m.q < 8).count();
    println!("sinkhorn + mutual top-1: {} matches, {correct} correct", fine.len());
    for j in 8..10 {
        println!("  distractor q{j}: dustbin mass {:.3}", assign.prob(8, j));
    }
    Ok(())
}
