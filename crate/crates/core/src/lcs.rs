//! Local Contribution Scores and top-m high-order neighbor masking.
//!
//! For hop `i ≥ 2` every stored entry `(v, u)` of the pure hop matrix gets the
//! score `softmax_u((W1 x_v)·(W2 x_u) / √d_f)` taken over row `v`'s support.
//! Scores are kept as a flat vector aligned with the hop matrix's stored
//! entries. Hop 1 is never masked.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dense::{dot, softmax_in_place, DenseMatrix};
use crate::error::{Error, Result};
use crate::hops::HopSet;
use crate::sparse::SparseMatrix;

/// Sentinel for "keep every neighbor" (used for hop 1).
pub const UNLIMITED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetentionRule {
    Fixed,
    #[default]
    ShrinkOnPlateau,
}

impl fmt::Display for RetentionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetentionRule::Fixed => "fixed",
            RetentionRule::ShrinkOnPlateau => "shrink_on_plateau",
        })
    }
}

impl FromStr for RetentionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(RetentionRule::Fixed),
            "shrink_on_plateau" => Ok(RetentionRule::ShrinkOnPlateau),
            other => Err(Error::Config(format!(
                "unknown retention rule {other:?} (expected fixed or shrink_on_plateau)"
            ))),
        }
    }
}

/// Per-hop neighbor budgets `m_1..m_K`; `m[0]` is always [`UNLIMITED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetentionSchedule {
    pub m: Vec<usize>,
    pub rule: RetentionRule,
    /// Epochs without validation improvement before a shrink.
    pub patience: usize,
    /// Amount subtracted from each `m_i` (i ≥ 2) on a plateau.
    pub step: usize,
}

impl RetentionSchedule {
    /// `budgets` lists `m_2..m_K`; a single value is broadcast to every hop.
    pub fn new(k: usize, budgets: &[usize], rule: RetentionRule, patience: usize, step: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        let high: Vec<usize> = match budgets.len() {
            _ if k == 1 => Vec::new(),
            1 => vec![budgets[0]; k - 1],
            l if l == k - 1 => budgets.to_vec(),
            l => {
                return Err(Error::Config(format!(
                    "retain list has {l} entries; expected 1 or K-1 = {}",
                    k - 1
                )))
            }
        };
        if high.iter().any(|&m| m < 1) {
            return Err(Error::Config("retention budgets must be >= 1".into()));
        }
        let mut m = vec![UNLIMITED];
        m.extend(high);
        Ok(Self {
            m,
            rule,
            patience,
            step,
        })
    }

    pub fn k(&self) -> usize {
        self.m.len()
    }

    /// Budget for hop `i` (1-based).
    pub fn budget(&self, i: usize) -> usize {
        self.m[i - 1]
    }
}

/// Applies the retention rule given the validation micro-F1 series recorded
/// since the last update. Under `ShrinkOnPlateau`, if the best value is at
/// least `patience` epochs old, every `m_i` (i ≥ 2) drops by `step`, floored
/// at 1.
pub fn update_retention(schedule: &RetentionSchedule, val_since_update: &[f64]) -> RetentionSchedule {
    let mut next = schedule.clone();
    if schedule.rule == RetentionRule::Fixed || val_since_update.is_empty() {
        return next;
    }
    if plateaued(val_since_update, schedule.patience) {
        for m in next.m.iter_mut().skip(1) {
            *m = m.saturating_sub(schedule.step).max(1);
        }
    }
    next
}

pub(crate) fn plateaued(series: &[f64], patience: usize) -> bool {
    let mut best = 0;
    for (i, &v) in series.iter().enumerate() {
        if v > series[best] {
            best = i;
        }
    }
    series.len() - 1 - best >= patience
}

/// Scores and filter for one hop `i ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HopMask {
    pub hop: usize,
    /// LCS values aligned with the stored entries of `A_i`.
    pub scores: Vec<f64>,
    /// Whether each stored entry of `A_i` survives the top-m cut.
    pub retained: Vec<bool>,
    /// `A_i^filter`.
    pub filter: SparseMatrix,
    pub retained_count: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskState {
    k: usize,
    hops: Vec<HopMask>,
}

impl MaskState {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hops(&self) -> &[HopMask] {
        &self.hops
    }

    /// Mask for hop `i ≥ 2`.
    pub fn hop(&self, i: usize) -> Option<&HopMask> {
        i.checked_sub(2).and_then(|j| self.hops.get(j))
    }

    pub fn filter(&self, i: usize) -> Option<&SparseMatrix> {
        self.hop(i).map(|h| &h.filter)
    }
}

/// Projects features into the attention space: `(X W1ᵀ, X W2ᵀ)`.
pub fn project(x: &DenseMatrix, w1: &DenseMatrix, w2: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    if w1.shape() != w2.shape() || w1.cols() != x.cols() {
        return Err(Error::dims(
            "lcs projection",
            format!("W1, W2 of shape d_f x {}", x.cols()),
            format!("{:?} and {:?}", w1.shape(), w2.shape()),
        ));
    }
    Ok((x.matmul_t(w1)?, x.matmul_t(w2)?))
}

/// LCS values for every stored entry of `hop_adj`, in storage order.
pub fn lcs_scores(x: &DenseMatrix, w1: &DenseMatrix, w2: &DenseMatrix, hop_adj: &SparseMatrix) -> Result<Vec<f64>> {
    if x.rows() != hop_adj.n() {
        return Err(Error::dims("lcs_scores", hop_adj.n(), x.rows()));
    }
    let (z1, z2) = project(x, w1, w2)?;
    Ok(scores_from_projections(&z1, &z2, hop_adj))
}

pub(crate) fn scores_from_projections(z1: &DenseMatrix, z2: &DenseMatrix, hop_adj: &SparseMatrix) -> Vec<f64> {
    let scale = 1.0 / (z1.cols().max(1) as f64).sqrt();
    let rows: Vec<Vec<f64>> = (0..hop_adj.n())
        .into_par_iter()
        .map(|v| {
            let zv = z1.row(v);
            let mut row: Vec<f64> = hop_adj.row(v).0.iter().map(|&u| dot(zv, z2.row(u)) * scale).collect();
            softmax_in_place(&mut row);
            row
        })
        .collect();
    rows.concat()
}

/// Per row, flags the `m` entries with the largest score; ties go to the
/// smaller column index.
pub fn top_m_select(hop_adj: &SparseMatrix, scores: &[f64], m: usize) -> Vec<bool> {
    let mut keep = vec![false; hop_adj.nnz()];
    for v in 0..hop_adj.n() {
        let start = hop_adj.row_offsets()[v];
        let len = hop_adj.row_len(v);
        if len <= m {
            keep[start..start + len].iter_mut().for_each(|k| *k = true);
            continue;
        }
        let mut order: Vec<usize> = (0..len).collect();
        // storage order is column order, so a stable sort on score alone
        // leaves equal scores in ascending column order
        order.sort_by(|&a, &b| scores[start + b].total_cmp(&scores[start + a]));
        for &j in &order[..m] {
            keep[start + j] = true;
        }
    }
    keep
}

/// `Top_m(A_i, LCS)`: the retained entries of `hop_adj` with their original values.
pub fn top_m_filter(hop_adj: &SparseMatrix, scores: &[f64], m: usize) -> Result<SparseMatrix> {
    if scores.len() != hop_adj.nnz() {
        return Err(Error::dims("top_m_filter", hop_adj.nnz(), scores.len()));
    }
    let keep = top_m_select(hop_adj, scores, m);
    Ok(apply_selection(hop_adj, &keep))
}

fn apply_selection(hop_adj: &SparseMatrix, keep: &[bool]) -> SparseMatrix {
    let mut k = 0;
    hop_adj.filter_entries(|_, _| {
        let kept = keep[k];
        k += 1;
        kept
    })
}

/// Rebuilds scores and filters for hops `2..=K` from projected features.
pub fn build_mask(
    hopset: &HopSet,
    z1: &DenseMatrix,
    z2: &DenseMatrix,
    schedule: &RetentionSchedule,
) -> Result<MaskState> {
    if schedule.k() != hopset.k() {
        return Err(Error::dims("build_mask: schedule K", hopset.k(), schedule.k()));
    }
    if z1.rows() != hopset.n() || z2.shape() != z1.shape() {
        return Err(Error::dims("build_mask: projections", hopset.n(), z1.rows()));
    }
    let hops = (2..=hopset.k())
        .map(|i| {
            let adj = hopset.hop(i);
            let scores = scores_from_projections(z1, z2, adj);
            let retained = top_m_select(adj, &scores, schedule.budget(i));
            let filter = apply_selection(adj, &retained);
            let retained_count = (0..adj.n()).map(|v| filter.row_len(v)).collect();
            HopMask {
                hop: i,
                scores,
                retained,
                filter,
                retained_count,
            }
        })
        .collect();
    Ok(MaskState { k: hopset.k(), hops })
}

/// `Σ_{i≥2} nnz(A_i^filter)`.
pub fn sc_value(mask: &MaskState) -> usize {
    mask.hops.iter().map(|h| h.filter.nnz()).sum()
}

/// `Σ (1 − LCS)²` over retained entries of hops `2..=K`.
pub fn lcs_penalty(mask: &MaskState) -> f64 {
    mask.hops
        .iter()
        .map(|h| {
            h.scores
                .iter()
                .zip(&h.retained)
                .filter(|(_, &r)| r)
                .map(|(&s, _)| (1.0 - s) * (1.0 - s))
                .sum::<f64>()
        })
        .sum()
}

/// Gradient of [`lcs_penalty`] with respect to the projections `Z1 = X W1ᵀ`
/// and `Z2 = X W2ᵀ`. The softmax is differentiated over each row's full hop
/// support, not only the retained entries.
pub fn lcs_penalty_grad(
    hopset: &HopSet,
    mask: &MaskState,
    z1: &DenseMatrix,
    z2: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let (n, df) = z1.shape();
    let scale = 1.0 / (df.max(1) as f64).sqrt();
    let mut dz1 = DenseMatrix::zeros(n, df);
    let mut dz2 = DenseMatrix::zeros(n, df);
    for h in &mask.hops {
        let adj = hopset.hop(h.hop);
        if h.scores.len() != adj.nnz() {
            return Err(Error::dims("lcs_penalty_grad", adj.nnz(), h.scores.len()));
        }
        for v in 0..n {
            let start = adj.row_offsets()[v];
            let cols = adj.row(v).0;
            if cols.is_empty() {
                continue;
            }
            let s = &h.scores[start..start + cols.len()];
            let kept = &h.retained[start..start + cols.len()];
            // dP/ds_u = -2 (1 - s_u) on retained entries
            let g: Vec<f64> = s
                .iter()
                .zip(kept)
                .map(|(&s, &k)| if k { -2.0 * (1.0 - s) } else { 0.0 })
                .collect();
            let mean: f64 = s.iter().zip(&g).map(|(a, b)| a * b).sum();
            for (j, &u) in cols.iter().enumerate() {
                let de = s[j] * (g[j] - mean) * scale;
                if de == 0.0 {
                    continue;
                }
                for (a, b) in dz1.row_mut(v).iter_mut().zip(z2.row(u)) {
                    *a += de * b;
                }
                for (a, b) in dz2.row_mut(u).iter_mut().zip(z1.row(v)) {
                    *a += de * b;
                }
            }
        }
    }
    Ok((dz1, dz2))
}

/// Writes one TSV row per scored entry: `hop, node, neighbor, score, retained`.
pub fn write_mask_tsv<W: Write>(hopset: &HopSet, mask: &MaskState, mut out: W) -> std::io::Result<()> {
    writeln!(out, "hop\tnode\tneighbor\tscore\tretained")?;
    for h in &mask.hops {
        for (k, (v, u, _)) in hopset.hop(h.hop).iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                h.hop,
                v,
                u,
                h.scores[k],
                u8::from(h.retained[k])
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hops::build_hopset;

    fn star_plus_path() -> SparseMatrix {
        SparseMatrix::from_edges(&[(0, 1), (0, 2), (0, 3), (3, 4), (4, 5)], 6, true).unwrap()
    }

    #[test]
    fn singleton_row_scores_one() {
        let adj = SparseMatrix::from_edges(&[(0, 1)], 2, true).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let w = DenseMatrix::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let s = lcs_scores(&x, &w, &w, &adj).unwrap();
        assert_eq!(s, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_projection_is_uniform() {
        let adj = star_plus_path();
        let x = DenseMatrix::from_rows(&(0..6).map(|i| vec![i as f64, 1.0]).collect::<Vec<_>>()).unwrap();
        let w = DenseMatrix::zeros(2, 2);
        let s = lcs_scores(&x, &w, &w, &adj).unwrap();
        for v in 0..6 {
            let start = adj.row_offsets()[v];
            for k in 0..adj.row_len(v) {
                assert!((s[start + k] - 1.0 / adj.row_len(v) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn filter_keeps_everything_when_budget_is_large() {
        let adj = star_plus_path();
        let scores = vec![0.5; adj.nnz()];
        assert_eq!(top_m_filter(&adj, &scores, 10).unwrap(), adj);
    }

    #[test]
    fn filter_m1_takes_argmax_and_breaks_ties_by_column() {
        let adj = star_plus_path();
        // node 0 has neighbors 1,2,3
        let mut scores = vec![0.1; adj.nnz()];
        scores[1] = 0.7; // (0,2)
        let f = top_m_filter(&adj, &scores, 1).unwrap();
        assert_eq!(f.row(0).0, &[2]);
        // equal scores elsewhere: smallest column wins
        assert_eq!(f.row(3).0, &[0]);
        for v in 0..6 {
            assert_eq!(f.row_len(v), 1);
        }
        assert!(top_m_filter(&adj, &scores[1..], 1).is_err());
    }

    #[test]
    fn sc_and_penalty_examples() {
        let adj = star_plus_path();
        let h = build_hopset(&adj, 2).unwrap();
        let z = DenseMatrix::zeros(6, 3);
        let sched = RetentionSchedule::new(2, &[1], RetentionRule::Fixed, 5, 1).unwrap();
        let mask = build_mask(&h, &z, &z, &sched).unwrap();
        // every non-empty hop-2 row keeps exactly one neighbor
        let rows = (0..6).filter(|&v| h.hop(2).row_len(v) > 0).count();
        assert_eq!(sc_value(&mask), rows);
        let want: f64 = (0..6)
            .filter(|&v| h.hop(2).row_len(v) > 0)
            .map(|v| {
                let s = 1.0 / h.hop(2).row_len(v) as f64;
                (1.0 - s) * (1.0 - s)
            })
            .sum();
        assert!((lcs_penalty(&mask) - want).abs() < 1e-14);

        let empty = build_mask(
            &build_hopset(&adj, 1).unwrap(),
            &z,
            &z,
            &RetentionSchedule::new(1, &[], RetentionRule::Fixed, 5, 1).unwrap(),
        )
        .unwrap();
        assert_eq!(sc_value(&empty), 0);
        assert_eq!(lcs_penalty(&empty), 0.0);
    }

    #[test]
    fn single_retained_score_penalty() {
        let adj = SparseMatrix::from_edges(&[(0, 1)], 2, true).unwrap();
        let mask = MaskState {
            k: 2,
            hops: vec![HopMask {
                hop: 2,
                scores: vec![0.6, 0.4],
                retained: vec![true, false],
                filter: adj.filter_entries(|r, _| r == 0),
                retained_count: vec![1, 0],
            }],
        };
        assert!((lcs_penalty(&mask) - 0.16).abs() < 1e-15);
        assert_eq!(sc_value(&mask), 1);
    }

    #[test]
    fn retention_updates() {
        let s = RetentionSchedule::new(3, &[8, 4], RetentionRule::ShrinkOnPlateau, 3, 1).unwrap();
        let plateau = [0.5, 0.7, 0.6, 0.7, 0.65];
        assert_eq!(update_retention(&s, &plateau).m, vec![UNLIMITED, 7, 3]);
        let improving = [0.5, 0.6, 0.7, 0.8];
        assert_eq!(update_retention(&s, &improving), s);
        let fixed = RetentionSchedule {
            rule: RetentionRule::Fixed,
            ..s.clone()
        };
        assert_eq!(update_retention(&fixed, &plateau), fixed);
        let floor = RetentionSchedule::new(2, &[1], RetentionRule::ShrinkOnPlateau, 0, 3).unwrap();
        assert_eq!(update_retention(&floor, &[0.1]).m, vec![UNLIMITED, 1]);
    }

    #[test]
    fn schedule_validation() {
        assert!(RetentionSchedule::new(3, &[8, 4, 2], RetentionRule::Fixed, 1, 1).is_err());
        assert!(RetentionSchedule::new(3, &[0], RetentionRule::Fixed, 1, 1).is_err());
        assert_eq!(
            RetentionSchedule::new(4, &[5], RetentionRule::Fixed, 1, 1).unwrap().m,
            vec![UNLIMITED, 5, 5, 5]
        );
    }

    #[test]
    fn mask_dump_has_one_row_per_entry() {
        let adj = star_plus_path();
        let h = build_hopset(&adj, 3).unwrap();
        let z = DenseMatrix::zeros(6, 2);
        let sched = RetentionSchedule::new(3, &[1], RetentionRule::Fixed, 1, 1).unwrap();
        let mask = build_mask(&h, &z, &z, &sched).unwrap();
        let mut buf = Vec::new();
        write_mask_tsv(&h, &mask, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + h.hop(2).nnz() + h.hop(3).nnz());
    }
}
