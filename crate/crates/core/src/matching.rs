//! Coarse superpoint matching and fine dense matching.
//!
//! Coarse: Gaussian correlation of fused superpoint features, dual
//! normalization, global top-`N_c`. Fine: for every coarse pair, scaled
//! similarity of dense features inside the two patches, dustbin Sinkhorn and
//! mutual top-k extraction.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::sampling::SuperpointPatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchingConfig {
    pub num_coarse: usize,
    pub top_k: usize,
    pub sinkhorn_iters: usize,
    pub dustbin_score: f64,
    pub confidence_floor: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            num_coarse: 256,
            top_k: 3,
            sinkhorn_iters: 100,
            dustbin_score: 0.5,
            confidence_floor: 0.05,
        }
    }
}

/// Superpoint score matrix, `|P| × |Q|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub entries: DMatrix<f64>,
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseMatch {
    pub p: usize,
    pub q: usize,
    pub score: f64,
}

/// At most `capacity` superpoint pairs, scores nonincreasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoarseMatches {
    pub pairs: Vec<CoarseMatch>,
    pub capacity: usize,
}

/// Dense correspondence between level-1 point indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineMatch {
    pub p: usize,
    pub q: usize,
    pub confidence: f64,
}

/// One correspondence group per coarse match, in coarse order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FineMatches {
    pub groups: Vec<Vec<FineMatch>>,
}

impl FineMatches {
    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Union of all groups, in group order.
    pub fn flatten(&self) -> Vec<FineMatch> {
        self.groups.iter().flatten().copied().collect()
    }
}

/// Log-space assignment with the dustbin as last row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub log: DMatrix<f64>,
}

impl AssignmentMatrix {
    pub fn inner_rows(&self) -> usize {
        self.log.nrows() - 1
    }

    pub fn inner_cols(&self) -> usize {
        self.log.ncols() - 1
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.log[(i, j)].exp()
    }
}

/// `S(i, j) = exp(−‖p_i − q_j‖²)`.
pub fn gaussian_correlation(fp: &FeatureMatrix, fq: &FeatureMatrix) -> Result<ScoreMatrix> {
    if fp.dim() != fq.dim() {
        return Err(Error::DimensionMismatch {
            what: "correlated feature dim",
            expected: fp.dim(),
            got: fq.dim(),
        });
    }
    let (m, n) = (fp.rows(), fq.rows());
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let a = fp.row(i);
            (0..n)
                .map(|j| {
                    let d2: f64 = a.iter().zip(fq.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                    (-d2).exp()
                })
                .collect()
        })
        .collect();
    Ok(ScoreMatrix {
        entries: DMatrix::from_fn(m, n, |i, j| rows[i][j]),
        normalized: false,
    })
}

/// `S̃(i, j) = S(i, j)² / (Σ_k S(i, k) · Σ_k S(k, j))`.
pub fn dual_normalize(s: &ScoreMatrix) -> ScoreMatrix {
    let e = &s.entries;
    let row: Vec<f64> = e.row_iter().map(|r| r.sum()).collect();
    let col: Vec<f64> = e.column_iter().map(|c| c.sum()).collect();
    ScoreMatrix {
        entries: DMatrix::from_fn(e.nrows(), e.ncols(), |i, j| e[(i, j)] * e[(i, j)] / (row[i] * col[j])),
        normalized: true,
    }
}

/// Global top-`n_c` entries, descending, ties by `(row, col)`.
pub fn select_coarse(s: &ScoreMatrix, n_c: usize) -> Result<CoarseMatches> {
    if n_c == 0 {
        return Err(Error::InvalidArgument("num_coarse must be at least 1".into()));
    }
    let e = &s.entries;
    let mut all: Vec<CoarseMatch> = (0..e.nrows())
        .flat_map(|p| (0..e.ncols()).map(move |q| (p, q)))
        .map(|(p, q)| CoarseMatch { p, q, score: e[(p, q)] })
        .collect();
    let cmp = |a: &CoarseMatch, b: &CoarseMatch| b.score.total_cmp(&a.score).then((a.p, a.q).cmp(&(b.p, b.q)));
    if all.len() > n_c {
        all.select_nth_unstable_by(n_c - 1, cmp);
        all.truncate(n_c);
    }
    all.sort_by(cmp);
    Ok(CoarseMatches {
        pairs: all,
        capacity: n_c,
    })
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-space Sinkhorn on logits augmented with a constant dustbin row and
/// column. Row marginals are `(1, …, 1, n)`, column marginals `(1, …, 1, m)`.
pub fn sinkhorn(logits: &DMatrix<f64>, dustbin: f64, iters: usize) -> Result<AssignmentMatrix> {
    if iters == 0 {
        return Err(Error::InvalidArgument("sinkhorn needs at least one iteration".into()));
    }
    if !dustbin.is_finite() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn logits"));
    }
    let (m, n) = logits.shape();
    let z = DMatrix::from_fn(m + 1, n + 1, |i, j| if i < m && j < n { logits[(i, j)] } else { dustbin });
    let log_mu: Vec<f64> = (0..=m).map(|i| if i < m { 0.0 } else { (n as f64).ln() }).collect();
    let log_nu: Vec<f64> = (0..=n).map(|j| if j < n { 0.0 } else { (m as f64).ln() }).collect();
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; n + 1];
    for _ in 0..iters {
        for i in 0..=m {
            u[i] = log_mu[i] - logsumexp((0..=n).map(|j| z[(i, j)] + v[j]));
        }
        for j in 0..=n {
            v[j] = log_nu[j] - logsumexp((0..=m).map(|i| z[(i, j)] + u[i]));
        }
    }
    Ok(AssignmentMatrix {
        log: DMatrix::from_fn(m + 1, n + 1, |i, j| z[(i, j)] + u[i] + v[j]),
    })
}

fn top_k_indices(values: impl Iterator<Item = f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, f64)> = values.enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Pairs `(i, j)` of the inner block where `j` is among row `i`'s top-k and
/// `i` among column `j`'s top-k, with confidence at least `floor`. Indices
/// are local to the assignment; output is ordered by `(i, j)`.
pub fn mutual_topk(assign: &AssignmentMatrix, k: usize, floor: f64) -> Result<Vec<FineMatch>> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-k needs k ≥ 1".into()));
    }
    let (m, n) = (assign.inner_rows(), assign.inner_cols());
    let mut in_row = vec![false; m * n];
    for i in 0..m {
        for j in top_k_indices((0..n).map(|j| assign.log[(i, j)]), k) {
            in_row[i * n + j] = true;
        }
    }
    let mut in_col = vec![false; m * n];
    for j in 0..n {
        for i in top_k_indices((0..m).map(|i| assign.log[(i, j)]), k) {
            in_col[i * n + j] = true;
        }
    }
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let c = assign.prob(i, j);
            if in_row[i * n + j] && in_col[i * n + j] && c >= floor {
                out.push(FineMatch { p: i, q: j, confidence: c });
            }
        }
    }
    Ok(out)
}

/// Placeholder for feature refinement between encoding and correlation;
/// returns its input unchanged.
pub fn refine_features(features: &FeatureMatrix) -> FeatureMatrix {
    features.clone()
}

fn patch_block(feats: &FeatureMatrix, members: &[usize], scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(members.len(), feats.dim(), |r, c| feats.row(members[r])[c] * scale)
}

/// Fine matches inside one coarse pair, with indices mapped back to the
/// dense level.
pub fn match_patches(
    patch_p: &SuperpointPatch,
    patch_q: &SuperpointPatch,
    dense_p: &FeatureMatrix,
    dense_q: &FeatureMatrix,
    cfg: &MatchingConfig,
) -> Result<Vec<FineMatch>> {
    if patch_p.is_empty() || patch_q.is_empty() {
        return Ok(Vec::new());
    }
    let c = dense_p.dim() as f64;
    let a = patch_block(dense_p, &patch_p.member_indices, c.sqrt());
    let b = patch_block(dense_q, &patch_q.member_indices, c.sqrt());
    let logits = (&a * b.transpose()) / c.sqrt();
    let assign = sinkhorn(&logits, cfg.dustbin_score, cfg.sinkhorn_iters)?;
    Ok(mutual_topk(&assign, cfg.top_k, cfg.confidence_floor)?
        .into_iter()
        .map(|m| FineMatch {
            p: patch_p.member_indices[m.p],
            q: patch_q.member_indices[m.q],
            confidence: m.confidence,
        })
        .collect())
}

/// Full coarse-to-fine matching of one pair.
pub fn match_pair(
    fused_p: &FeatureMatrix,
    fused_q: &FeatureMatrix,
    patches_p: &[SuperpointPatch],
    patches_q: &[SuperpointPatch],
    dense_p: &FeatureMatrix,
    dense_q: &FeatureMatrix,
    cfg: &MatchingConfig,
) -> Result<(CoarseMatches, FineMatches)> {
    if patches_p.len() != fused_p.rows() || patches_q.len() != fused_q.rows() {
        return Err(Error::DimensionMismatch {
            what: "patches per superpoint",
            expected: fused_p.rows() + fused_q.rows(),
            got: patches_p.len() + patches_q.len(),
        });
    }
    if dense_p.dim() != dense_q.dim() {
        return Err(Error::DimensionMismatch {
            what: "dense feature dim",
            expected: dense_p.dim(),
            got: dense_q.dim(),
        });
    }
    let fp = refine_features(fused_p);
    let fq = refine_features(fused_q);
    let scores = dual_normalize(&gaussian_correlation(&fp, &fq)?);
    let coarse = select_coarse(&scores, cfg.num_coarse)?;
    let groups = coarse
        .pairs
        .par_iter()
        .map(|m| match_patches(&patches_p[m.p], &patches_q[m.q], dense_p, dense_q, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((coarse, FineMatches { groups }))
}
