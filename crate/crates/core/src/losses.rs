//! Training objectives as pure functions: overlap-aware circle loss on
//! superpoint (or patch) features, dense negative log-likelihood on fine
//! assignments, and their unweighted sum.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::geometry::{Point3, RigidTransform};
use crate::matching::AssignmentMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleLossConfig {
    pub delta_p: f64,
    pub delta_n: f64,
    pub gamma: f64,
    pub positive_overlap_min: f64,
}

impl Default for CircleLossConfig {
    fn default() -> Self {
        Self {
            delta_p: 0.1,
            delta_n: 1.4,
            gamma: 24.0,
            positive_overlap_min: 0.10,
        }
    }
}

fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_inputs(fp: &FeatureMatrix, fq: &FeatureMatrix, overlaps: &DMatrix<f64>, cfg: &CircleLossConfig) -> Result<()> {
    if fp.dim() != fq.dim() {
        return Err(Error::DimensionMismatch {
            what: "circle loss feature dim",
            expected: fp.dim(),
            got: fq.dim(),
        });
    }
    if overlaps.shape() != (fp.rows(), fq.rows()) {
        return Err(Error::DimensionMismatch {
            what: "overlap matrix entries",
            expected: fp.rows() * fq.rows(),
            got: overlaps.len(),
        });
    }
    if overlaps.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("overlap ratios must lie in [0, 1]".into()));
    }
    if !(cfg.delta_p < cfg.delta_n && cfg.gamma > 0.0) {
        return Err(Error::InvalidArgument("circle loss needs delta_p < delta_n and gamma > 0".into()));
    }
    Ok(())
}

/// One direction of the circle loss, with `P` as anchors:
///
/// `(1/n_c) Σ_i log(1 + Σ_pos exp(λ β_p (d − Δp)) · Σ_neg exp(β_n (Δn − d)))`
///
/// with `β_p = γ(d − Δp)`, `β_n = γ(Δn − d)` and `λ` the overlap ratio.
/// Positives have overlap above `positive_overlap_min`, negatives have
/// overlap zero, and `n_c` counts anchors with at least one positive.
pub fn circle_loss_one_way(fp: &FeatureMatrix, fq: &FeatureMatrix, overlaps: &DMatrix<f64>, cfg: &CircleLossConfig) -> Result<f64> {
    check_inputs(fp, fq, overlaps, cfg)?;
    let mut total = 0.0;
    let mut anchors = 0usize;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..fp.rows() {
        pos.clear();
        neg.clear();
        for j in 0..fq.rows() {
            let o = overlaps[(i, j)];
            let d = distance(fp.row(i), fq.row(j));
            if o > cfg.positive_overlap_min {
                let beta = cfg.gamma * (d - cfg.delta_p);
                pos.push(o * beta * (d - cfg.delta_p));
            } else if o == 0.0 {
                let beta = cfg.gamma * (cfg.delta_n - d);
                neg.push(beta * (cfg.delta_n - d));
            }
        }
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        total += softplus(logsumexp(&pos) + logsumexp(&neg));
    }
    Ok(if anchors == 0 { 0.0 } else { total / anchors as f64 })
}

/// `(L^P + L^Q) / 2`.
pub fn circle_loss(fp: &FeatureMatrix, fq: &FeatureMatrix, overlaps: &DMatrix<f64>, cfg: &CircleLossConfig) -> Result<f64> {
    let forward = circle_loss_one_way(fp, fq, overlaps, cfg)?;
    let backward = circle_loss_one_way(fq, fp, &overlaps.transpose(), cfg)?;
    Ok((forward + backward) / 2.0)
}

/// Circle loss on patch-wise image features.
pub fn patch_feature_loss(patch_p: &FeatureMatrix, patch_q: &FeatureMatrix, overlaps: &DMatrix<f64>, cfg: &CircleLossConfig) -> Result<f64> {
    circle_loss(patch_p, patch_q, overlaps, cfg)
}

/// Ground-truth labels for one coarse match: matched local index pairs and
/// the unmatched rows and columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseSupervision {
    pub matched: Vec<(usize, usize)>,
    pub unmatched_p: Vec<usize>,
    pub unmatched_q: Vec<usize>,
}

/// Pairs of patch points closer than `radius` under `gt`; points without
/// any such partner go to the dustbin.
pub fn dense_supervision(patch_p: &[Point3], patch_q: &[Point3], gt: &RigidTransform, radius: f64) -> DenseSupervision {
    let aligned: Vec<Point3> = patch_p.iter().map(|p| gt.apply(p)).collect();
    let mut sup = DenseSupervision::default();
    let mut q_hit = vec![false; patch_q.len()];
    for (x, a) in aligned.iter().enumerate() {
        let mut any = false;
        for (y, b) in patch_q.iter().enumerate() {
            if (a - b).norm() < radius {
                sup.matched.push((x, y));
                q_hit[y] = true;
                any = true;
            }
        }
        if !any {
            sup.unmatched_p.push(x);
        }
    }
    sup.unmatched_q = (0..patch_q.len()).filter(|&y| !q_hit[y]).collect();
    sup
}

/// `−Σ log s(x, y) − Σ_Φ log s(x, dustbin) − Σ_Ψ log s(dustbin, y)`.
pub fn dense_nll_loss(assign: &AssignmentMatrix, sup: &DenseSupervision) -> Result<f64> {
    let (m, n) = (assign.inner_rows(), assign.inner_cols());
    let mut total = 0.0;
    let mut add = |i: usize, j: usize| -> Result<()> {
        if i > m || j > n {
            return Err(Error::InvalidArgument(format!("assignment index ({i}, {j}) out of range")));
        }
        let log_s = assign.log[(i, j)];
        if !(log_s.exp() > 0.0) {
            return Err(Error::NonPositiveProbability { row: i, col: j });
        }
        total -= log_s;
        Ok(())
    };
    for &(x, y) in &sup.matched {
        add(x, y)?;
    }
    for &x in &sup.unmatched_p {
        add(x, n)?;
    }
    for &y in &sup.unmatched_q {
        add(m, y)?;
    }
    Ok(total)
}

pub const DENSE_LOSS_SAMPLES: usize = 100;

/// Mean dense loss over a seeded uniform subset of at most `samples` coarse
/// matches; zero when there are none.
pub fn dense_nll_aggregate(items: &[(AssignmentMatrix, DenseSupervision)], samples: usize, seed: u64) -> Result<f64> {
    if items.is_empty() || samples == 0 {
        return Ok(0.0);
    }
    let idx: Vec<usize> = if samples >= items.len() {
        (0..items.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, items.len(), samples).into_vec()
    };
    let mut sum = 0.0;
    for &i in &idx {
        sum += dense_nll_loss(&items[i].0, &items[i].1)?;
    }
    Ok(sum / idx.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub point: f64,
    pub patch: f64,
    pub dense: f64,
}

pub fn total_loss(parts: &LossParts) -> Result<f64> {
    if ![parts.point, parts.patch, parts.dense].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("loss parts"));
    }
    Ok(parts.point + parts.patch + parts.dense)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRole;
    use crate::matching::sinkhorn;
    use proptest::prelude::*;
    use rand::Rng;

    fn on_circle(angles: &[f64]) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
        FeatureMatrix::from_rows(FeatureRole::Point3d, 2, &rows).unwrap()
    }

    fn angle_for_chord(c: f64) -> f64 {
        2.0 * (c / 2.0).asin()
    }

    /// Direct translation of the formula with plain exponentials.
    fn oracle_one_way(fp: &FeatureMatrix, fq: &FeatureMatrix, o: &DMatrix<f64>, cfg: &CircleLossConfig) -> f64 {
        let mut total = 0.0;
        let mut n_c = 0;
        for i in 0..fp.rows() {
            let mut sp = 0.0;
            let mut sn = 0.0;
            let mut has_pos = false;
            for j in 0..fq.rows() {
                let d = distance(fp.row(i), fq.row(j));
                if o[(i, j)] > cfg.positive_overlap_min {
                    has_pos = true;
                    let bp = cfg.gamma * (d - cfg.delta_p);
                    sp += (o[(i, j)] * bp * (d - cfg.delta_p)).exp();
                }
                if o[(i, j)] == 0.0 {
                    let bn = cfg.gamma * (cfg.delta_n - d);
                    sn += (bn * (cfg.delta_n - d)).exp();
                }
            }
            if has_pos {
                n_c += 1;
                total += (1.0 + sp * sn).ln();
            }
        }
        if n_c == 0 {
            0.0
        } else {
            total / n_c as f64
        }
    }

    fn random_unit(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> FeatureMatrix {
        let mut m = FeatureMatrix::zeros(FeatureRole::Point3d, rows, dim);
        for i in 0..rows {
            m.row_mut(i).iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        m.normalize_rows();
        m
    }

    fn random_overlaps(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| match rng.random_range(0..3) {
            0 => 0.0,
            1 => rng.random_range(0.0..0.1),
            _ => rng.random_range(0.1..1.0),
        })
    }

    #[test]
    fn no_positives_is_zero() {
        let f = on_circle(&[0.0, 1.0]);
        let cfg = CircleLossConfig::default();
        assert_eq!(circle_loss(&f, &f, &DMatrix::zeros(2, 2), &cfg).unwrap(), 0.0);
        assert_eq!(patch_feature_loss(&f, &f, &DMatrix::zeros(2, 2), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn margins_give_ln2() {
        let cfg = CircleLossConfig::default();
        let (a, b) = (angle_for_chord(cfg.delta_p), angle_for_chord(cfg.delta_n));
        let fp = on_circle(&[0.0]);
        let fq = on_circle(&[a, b]);
        let o = DMatrix::from_row_slice(1, 2, &[0.5, 0.0]);
        let one = circle_loss_one_way(&fp, &fq, &o, &cfg).unwrap();
        assert!((one - 0.693147).abs() < 1e-6);
        // symmetric arrangement: every anchor on either side sees both margins
        let fp = on_circle(&[0.0, a + b]);
        let fq = on_circle(&[a, b]);
        let o = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert!((circle_loss(&fp, &fq, &o, &cfg).unwrap() - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn matches_direct_oracle() {
        let cfg = CircleLossConfig::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fp = random_unit(&mut rng, 6, 4);
            let fq = random_unit(&mut rng, 5, 4);
            let o = random_overlaps(&mut rng, 6, 5);
            let expected = (oracle_one_way(&fp, &fq, &o, &cfg) + oracle_one_way(&fq, &fp, &o.transpose(), &cfg)) / 2.0;
            let got = circle_loss(&fp, &fq, &o, &cfg).unwrap();
            assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
            assert_eq!(patch_feature_loss(&fp, &fq, &o, &cfg).unwrap(), got);
            assert!(got >= 0.0);
            let swapped = circle_loss(&fq, &fp, &o.transpose(), &cfg).unwrap();
            assert!((swapped - got).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = on_circle(&[0.0]);
        let cfg = CircleLossConfig::default();
        assert!(circle_loss(&f, &f, &DMatrix::from_element(1, 1, 1.5), &cfg).is_err());
        assert!(circle_loss(&f, &f, &DMatrix::zeros(2, 1), &cfg).is_err());
    }

    proptest! {
        #[test]
        fn closer_positive_lowers_loss(base in 0.3f64..1.8, step in 0.01f64..0.15, neg in 0.2f64..1.99) {
            // positive distances above the margin only
            let cfg = CircleLossConfig::default();
            let far = angle_for_chord(base);
            let near = angle_for_chord((base - step).max(cfg.delta_p + 1e-6));
            let n = angle_for_chord(neg);
            let o = DMatrix::from_row_slice(1, 2, &[0.6, 0.0]);
            let fp = on_circle(&[0.0]);
            let a = circle_loss(&fp, &on_circle(&[far, -n]), &o, &cfg).unwrap();
            let b = circle_loss(&fp, &on_circle(&[near, -n]), &o, &cfg).unwrap();
            prop_assert!(b < a);
        }
    }

    fn assignment(p: &[f64], m: usize, n: usize) -> AssignmentMatrix {
        AssignmentMatrix {
            log: DMatrix::from_row_slice(m + 1, n + 1, p).map(f64::ln),
        }
    }

    #[test]
    fn nll_closed_forms() {
        let ones = assignment(&[1.0; 9], 2, 2);
        let sup = DenseSupervision {
            matched: vec![(0, 0), (1, 1)],
            unmatched_p: vec![0],
            unmatched_q: vec![1],
        };
        assert_eq!(dense_nll_loss(&ones, &sup).unwrap(), 0.0);
        let mut p = [1.0; 9];
        p[0] = (-1.0f64).exp();
        let one = DenseSupervision {
            matched: vec![(0, 0)],
            ..Default::default()
        };
        assert!((dense_nll_loss(&assignment(&p, 2, 2), &one).unwrap() - 1.0).abs() < 1e-15);
        p[0] = 0.0;
        assert!(matches!(
            dense_nll_loss(&assignment(&p, 2, 2), &one),
            Err(Error::NonPositiveProbability { row: 0, col: 0 })
        ));
    }

    #[test]
    fn nll_matches_direct_sum_and_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-2.0..2.0));
        let a = sinkhorn(&logits, 0.5, 50).unwrap();
        let sup = DenseSupervision {
            matched: vec![(0, 1), (2, 2), (4, 0)],
            unmatched_p: vec![1, 3],
            unmatched_q: vec![3],
        };
        let p = a.log.map(f64::exp);
        let oracle = -(p[(0, 1)].ln() + p[(2, 2)].ln() + p[(4, 0)].ln() + p[(1, 4)].ln() + p[(3, 4)].ln() + p[(5, 3)].ln());
        assert!((dense_nll_loss(&a, &sup).unwrap() - oracle).abs() < 1e-12);
        // derivative with respect to the probability of one referenced entry
        let s = p[(2, 2)];
        let h = 1e-6;
        let mut plus = a.clone();
        plus.log[(2, 2)] = (s + h).ln();
        let mut minus = a.clone();
        minus.log[(2, 2)] = (s - h).ln();
        let fd = (dense_nll_loss(&plus, &sup).unwrap() - dense_nll_loss(&minus, &sup).unwrap()) / (2.0 * h);
        assert!((fd + 1.0 / s).abs() < 1e-5);
    }

    #[test]
    fn supervision_and_aggregation() {
        let p = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let q = vec![Point3::new(0.01, 0.0, 0.0), Point3::new(5.0, 0.0, 0.0)];
        let sup = dense_supervision(&p, &q, &RigidTransform::identity(), 0.05);
        assert_eq!(sup.matched, vec![(0, 0)]);
        assert_eq!(sup.unmatched_p, vec![1]);
        assert_eq!(sup.unmatched_q, vec![1]);
        let items: Vec<(AssignmentMatrix, DenseSupervision)> = (0..150)
            .map(|k| {
                let mut probs = [1.0; 9];
                probs[0] = (-(k as f64)).exp();
                (
                    assignment(&probs, 2, 2),
                    DenseSupervision {
                        matched: vec![(0, 0)],
                        ..Default::default()
                    },
                )
            })
            .collect();
        let all = dense_nll_aggregate(&items, 1000, 0).unwrap();
        assert!((all - 74.5).abs() < 1e-9);
        let a = dense_nll_aggregate(&items, DENSE_LOSS_SAMPLES, 9).unwrap();
        assert_eq!(a, dense_nll_aggregate(&items, DENSE_LOSS_SAMPLES, 9).unwrap());
        assert_eq!(dense_nll_aggregate(&[], DENSE_LOSS_SAMPLES, 9).unwrap(), 0.0);
    }

    #[test]
    fn total_is_plain_sum() {
        assert_eq!(total_loss(&LossParts::default()).unwrap(), 0.0);
        let parts = LossParts {
            point: 1.0,
            patch: 2.0,
            dense: 3.0,
        };
        assert_eq!(total_loss(&parts).unwrap(), 6.0);
        assert!(total_loss(&LossParts {
            point: f64::NAN,
            ..parts
        })
        .is_err());
    }
}
