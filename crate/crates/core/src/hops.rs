//! Pure per-hop adjacency distillation and α-weighted hop fusion.
//!
//! `cumulative[i-1]` holds every pair joined by a walk of length `1..=i`
//! (boolean reachability, diagonal included once a node has an edge).
//! `pure[i-1]` holds the pairs first reached at hop `i`, diagonal removed, so
//! the pure supports partition the off-diagonal reachability set by shortest
//! path distance.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use crate::dense::softmax_in_place;
use crate::error::{Error, Result};
use crate::lcs::MaskState;
use crate::sparse::{self, bool_spmm, support_minus, support_union, SparseMatrix};

/// How hop operators are normalized before α-weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `N(A_i)` for each hop separately.
    #[default]
    PerHop,
    /// One `D^{-1/2}` scaling computed from the union of all hop supports.
    Fused,
    /// Raw 0/1 hop matrices.
    None,
}

impl Normalization {
    pub fn code(self) -> u64 {
        match self {
            Normalization::PerHop => 0,
            Normalization::Fused => 1,
            Normalization::None => 2,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Normalization::PerHop),
            1 => Some(Normalization::Fused),
            2 => Some(Normalization::None),
            _ => None,
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::PerHop => "per_hop",
            Normalization::Fused => "fused",
            Normalization::None => "none",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_hop" => Ok(Normalization::PerHop),
            "fused" => Ok(Normalization::Fused),
            "none" => Ok(Normalization::None),
            other => Err(Error::Config(format!(
                "unknown normalization {other:?} (expected per_hop, fused or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopSet {
    k: usize,
    normalization: Normalization,
    cumulative: Vec<SparseMatrix>,
    pure: Vec<SparseMatrix>,
    normalized_pure: Vec<SparseMatrix>,
}

/// Builds `A^1..A^K` and `A_1..A_K` from a symmetric adjacency.
///
/// Each step expands only the newest frontier (`A^i \ A^{i-1}`) by one edge,
/// which reaches exactly the same pairs as `A^{i-1} · A`: any walk through an
/// older pair already lands inside `A^{i-1}`.
pub fn build_hopset(adj: &SparseMatrix, k: usize) -> Result<HopSet> {
    build_hopset_with(adj, k, Normalization::PerHop)
}

pub fn build_hopset_with(adj: &SparseMatrix, k: usize, normalization: Normalization) -> Result<HopSet> {
    if k < 1 {
        return Err(Error::InvalidInput("hop count K must be at least 1".into()));
    }
    if let Some((r, c)) = adj.first_asymmetry() {
        return Err(Error::Asymmetric { row: r, col: c });
    }
    let base = adj.without_diagonal().binarized();
    let mut cumulative = vec![base.clone()];
    let mut pure = vec![base.clone()];
    let mut frontier = base.clone();
    for _ in 2..=k {
        let prev = cumulative.last().expect("non-empty");
        let step = bool_spmm(&frontier, &base)?;
        let next = support_union(prev, &step)?;
        frontier = support_minus(&next, prev)?;
        pure.push(frontier.without_diagonal());
        cumulative.push(next);
    }
    let normalized_pure = pure.iter().map(|p| sparse::sym_normalize(p, false)).collect();
    Ok(HopSet {
        k,
        normalization,
        cumulative,
        pure,
        normalized_pure,
    })
}

impl HopSet {
    /// Reassembles a hop set from its pure matrices (e.g. after reading a
    /// cache). Cumulative reachability is recovered as the union of pure hops
    /// plus the diagonal of every non-isolated node from hop 2 on.
    pub fn from_pure(
        pure: Vec<SparseMatrix>,
        normalized_pure: Vec<SparseMatrix>,
        normalization: Normalization,
    ) -> Result<Self> {
        let k = pure.len();
        if k < 1 || normalized_pure.len() != k {
            return Err(Error::InvalidInput(format!(
                "hop set needs K >= 1 matching pure/normalized lists, got {} and {}",
                pure.len(),
                normalized_pure.len()
            )));
        }
        let n = pure[0].n();
        let self_reach = SparseMatrix::from_triplets(
            n,
            &(0..n)
                .filter(|&v| pure[0].row_len(v) > 0)
                .map(|v| (v, v, 1.0))
                .collect::<Vec<_>>(),
        )?;
        let mut cumulative = vec![pure[0].clone()];
        for (i, p) in pure.iter().enumerate().skip(1) {
            let mut next = support_union(&cumulative[i - 1], p)?;
            if i == 1 {
                next = support_union(&next, &self_reach)?;
            }
            cumulative.push(next);
        }
        Ok(HopSet {
            k,
            normalization,
            cumulative,
            pure,
            normalized_pure,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.pure[0].n()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// `A^1..A^K`.
    pub fn cumulative(&self) -> &[SparseMatrix] {
        &self.cumulative
    }

    /// `A_1..A_K`.
    pub fn pure(&self) -> &[SparseMatrix] {
        &self.pure
    }

    pub fn normalized_pure(&self) -> &[SparseMatrix] {
        &self.normalized_pure
    }

    /// Pure hop `i` (1-based).
    pub fn hop(&self, i: usize) -> &SparseMatrix {
        &self.pure[i - 1]
    }

    /// Symmetrically normalized two-hop reachability with self-loops, the
    /// fixed operator of the low-order branch.
    pub fn low_order_operator(&self) -> Result<SparseMatrix> {
        let reach2 = if self.k >= 2 {
            self.cumulative[1].clone()
        } else {
            let a = &self.pure[0];
            support_union(a, &bool_spmm(a, a)?)?
        };
        let with_loops = support_union(&reach2, &SparseMatrix::identity(self.n()))?;
        Ok(sparse::sym_normalize(&with_loops, false))
    }

    /// Effective hop matrices: hop 1 as built, hops ≥ 2 replaced by the mask's
    /// filtered matrices when a mask is given.
    pub fn effective_hops<'a>(&'a self, masks: Option<&'a MaskState>) -> Result<Vec<&'a SparseMatrix>> {
        let mut out = vec![&self.pure[0]];
        for i in 2..=self.k {
            match masks {
                Some(m) => out.push(
                    m.filter(i)
                        .ok_or_else(|| Error::InvalidInput(format!("mask state has no filter for hop {i}")))?,
                ),
                None => out.push(&self.pure[i - 1]),
            }
        }
        Ok(out)
    }

    /// Normalized per-hop operators whose α-weighted sum is `Ã`.
    pub fn hop_operators<'a>(&'a self, masks: Option<&'a MaskState>) -> Result<Vec<Cow<'a, SparseMatrix>>> {
        if let Some(m) = masks {
            if m.k() != self.k {
                return Err(Error::dims("hop_operators: mask K", self.k, m.k()));
            }
        }
        let hops = self.effective_hops(masks)?;
        Ok(match self.normalization {
            Normalization::PerHop => hops
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    if masks.is_none() || i == 0 {
                        Cow::Borrowed(&self.normalized_pure[i])
                    } else {
                        Cow::Owned(sparse::sym_normalize(h, false))
                    }
                })
                .collect(),
            Normalization::Fused => {
                let mut deg = vec![0.0; self.n()];
                for h in &hops {
                    for (d, hd) in deg.iter_mut().zip(sparse::degrees(h, false)) {
                        *d += hd;
                    }
                }
                let inv: Vec<f64> = deg
                    .into_iter()
                    .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
                    .collect();
                hops.iter()
                    .map(|h| Cow::Owned(sparse::scale_by(h, &inv, &inv)))
                    .collect()
            }
            Normalization::None => hops.into_iter().map(Cow::Borrowed).collect(),
        })
    }
}

/// Softmax-normalized hop weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HopWeights {
    pub logits: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn softmax_weights(logits: &[f64]) -> HopWeights {
    let mut alpha = logits.to_vec();
    softmax_in_place(&mut alpha);
    HopWeights {
        logits: logits.to_vec(),
        alpha,
    }
}

/// `Ã = Σ α_i · op_i` over the (optionally masked) hop operators.
pub fn fuse_hops(hopset: &HopSet, weights: &HopWeights, masks: Option<&MaskState>) -> Result<SparseMatrix> {
    if weights.alpha.len() != hopset.k() {
        return Err(Error::dims("fuse_hops", hopset.k(), weights.alpha.len()));
    }
    let ops = hopset.hop_operators(masks)?;
    fuse_operators(&ops, &weights.alpha)
}

pub(crate) fn fuse_operators<M: AsRef<SparseMatrix>>(ops: &[M], alpha: &[f64]) -> Result<SparseMatrix> {
    let mut acc = SparseMatrix::empty(ops[0].as_ref().n());
    for (op, &a) in ops.iter().zip(alpha) {
        let op = op.as_ref();
        acc = sparse::add(&acc, &op.scaled(a))?;
    }
    Ok(acc)
}
