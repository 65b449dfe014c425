//! Square CSR matrices over node indices.
//!
//! Every constructor returns the canonical form: column indices strictly
//! increasing inside each row, all indices `< n`, and no stored zeros. The
//! merge-based set operations below rely on that ordering.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from raw CSR arrays, checking every canonical-form
    /// invariant.
    pub fn from_parts(n: usize, row_offsets: Vec<usize>, col_indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let m = Self {
            n,
            row_offsets,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    /// Sums duplicate coordinates and drops entries that end up zero.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::IndexOutOfRange { index: r.max(c), n });
            }
            t.push((r, c, v));
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, c, v) in t {
            match rows[r].last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => rows[r].push((c, v)),
            }
        }
        Ok(Self::from_sorted_rows(
            n,
            rows.into_iter()
                .map(|r| r.into_iter().filter(|&(_, v)| v != 0.0).collect())
                .collect(),
        ))
    }

    /// Unit-weight adjacency from an edge list. Duplicate edges collapse to one
    /// entry; self-loops are kept as given.
    pub fn from_edges(edges: &[(usize, usize)], n: usize, symmetric: bool) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(s, d) in edges {
            if s >= n || d >= n {
                return Err(Error::IndexOutOfRange { index: s.max(d), n });
            }
            rows[s].push(d);
            if symmetric && s != d {
                rows[d].push(s);
            }
        }
        let rows = rows
            .into_par_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r.into_iter().map(|c| (c, 1.0)).collect()
            })
            .collect();
        Ok(Self::from_sorted_rows(n, rows))
    }

    fn from_sorted_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for r in rows {
            for (c, v) in r {
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    fn from_pattern_rows(n: usize, rows: Vec<Vec<usize>>) -> Self {
        Self::from_sorted_rows(
            n,
            rows.into_iter()
                .map(|r| r.into_iter().map(|c| (c, 1.0)).collect())
                .collect(),
        )
    }

    /// Checks the canonical-form invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("non-canonical CSR: {msg}")));
        if self.row_offsets.len() != self.n + 1 {
            return bad(format!("{} row offsets for n={}", self.row_offsets.len(), self.n));
        }
        if self.row_offsets[0] != 0 || self.row_offsets[self.n] != self.col_indices.len() {
            return bad("row offsets do not span the column array".into());
        }
        if self.col_indices.len() != self.values.len() {
            return bad("column/value length mismatch".into());
        }
        for r in 0..self.n {
            if self.row_offsets[r] > self.row_offsets[r + 1] {
                return bad(format!("row offsets decrease at row {r}"));
            }
            let (cols, vals) = self.row(r);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return bad(format!("row {r} columns not strictly increasing"));
                }
            }
            if let Some(&c) = cols.last() {
                if c >= self.n {
                    return bad(format!("column {c} out of range in row {r}"));
                }
            }
            if vals.iter().any(|&v| v == 0.0 || !v.is_finite()) {
                return bad(format!("zero or non-finite value stored in row {r}"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    #[inline]
    pub fn row_len(&self, r: usize) -> usize {
        self.row_offsets[r + 1] - self.row_offsets[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    /// Iterates stored entries as `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.iter() {
            out.set(r, c, v);
        }
        out
    }

    pub fn diagonal_nnz(&self) -> usize {
        (0..self.n).filter(|&r| self.contains(r, r)).count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.first_asymmetry().is_none()
    }

    pub(crate) fn first_asymmetry(&self) -> Option<(usize, usize)> {
        self.iter()
            .find(|&(r, c, v)| self.get(c, r) != v)
            .map(|(r, c, _)| (r, c))
    }

    /// Same support, every stored value set to 1.
    pub fn binarized(&self) -> Self {
        Self {
            n: self.n,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values: vec![1.0; self.nnz()],
        }
    }

    pub fn without_diagonal(&self) -> Self {
        self.filter_entries(|r, c| r != c)
    }

    /// Keeps the stored entries for which `keep(row, col)` holds.
    pub fn filter_entries(&self, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let mut row_offsets = Vec::with_capacity(self.n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if keep(r, c) {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n: self.n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::empty(self.n);
        }
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let k = next[c];
            col_indices[k] = r;
            values[k] = v;
            next[c] += 1;
        }
        Self {
            n: self.n,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Relabels nodes: entry `(r, c)` moves to `(perm[r], perm[c])`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::dims("permuted", self.n, perm.len()));
        }
        let triplets: Vec<_> = self.iter().map(|(r, c, v)| (perm[r], perm[c], v)).collect();
        Self::from_triplets(self.n, &triplets)
    }

    /// SHA-256 over `n` and the sparsity pattern (values excluded).
    pub fn structure_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for &o in &self.row_offsets {
            h.update((o as u64).to_le_bytes());
        }
        for &c in &self.col_indices {
            h.update((c as u64).to_le_bytes());
        }
        h.finalize().into()
    }

    fn check_same_n(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.n != other.n {
            return Err(Error::dims(op, self.n, other.n));
        }
        Ok(())
    }
}

impl AsRef<SparseMatrix> for SparseMatrix {
    fn as_ref(&self) -> &SparseMatrix {
        self
    }
}

/// Unit-weight adjacency from `(src, dst)` pairs; see [`SparseMatrix::from_edges`].
pub fn csr_from_edges(edges: &[(usize, usize)], n: usize, symmetric: bool) -> Result<SparseMatrix> {
    SparseMatrix::from_edges(edges, n, symmetric)
}

/// Boolean-semiring product: `(i, j)` is stored (value 1) iff some `k` has
/// `a(i, k) ≠ 0` and `b(k, j) ≠ 0`.
pub fn bool_spmm(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    a.check_same_n(b, "bool_spmm")?;
    let n = a.n;
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![usize::MAX; n], Vec::new()),
            |(marker, scratch), i| {
                scratch.clear();
                for &k in a.row(i).0 {
                    for &j in b.row(k).0 {
                        if marker[j] != i {
                            marker[j] = i;
                            scratch.push(j);
                        }
                    }
                }
                let mut row = scratch.clone();
                row.sort_unstable();
                row
            },
        )
        .collect();
    Ok(SparseMatrix::from_pattern_rows(n, rows))
}

fn merge_rows(a: &SparseMatrix, b: &SparseMatrix, keep: impl Fn(bool, bool) -> bool + Sync) -> SparseMatrix {
    let rows: Vec<Vec<usize>> = (0..a.n)
        .into_par_iter()
        .map(|r| {
            let (ac, _) = a.row(r);
            let (bc, _) = b.row(r);
            let mut out = Vec::with_capacity(ac.len().max(bc.len()));
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                let (col, in_a, in_b) = match (ac.get(i), bc.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        (x, true, true)
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        (x, true, false)
                    }
                    (Some(&x), None) => {
                        i += 1;
                        (x, true, false)
                    }
                    (_, Some(&y)) => {
                        j += 1;
                        (y, false, true)
                    }
                    (None, None) => unreachable!(),
                };
                if keep(in_a, in_b) {
                    out.push(col);
                }
            }
            out
        })
        .collect();
    SparseMatrix::from_pattern_rows(a.n, rows)
}

/// Entries present in `a` or `b`, value 1.
pub fn support_union(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    a.check_same_n(b, "support_union")?;
    Ok(merge_rows(a, b, |x, y| x || y))
}

/// Entries present in `a` but not in `b`, value 1.
pub fn support_minus(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    a.check_same_n(b, "support_minus")?;
    Ok(merge_rows(a, b, |x, y| x && !y))
}

/// Value-wise sum `a + b`; entries that cancel to zero are dropped.
pub fn add(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    a.check_same_n(b, "add")?;
    let rows = (0..a.n)
        .map(|r| {
            let (ac, av) = a.row(r);
            let (bc, bv) = b.row(r);
            let mut out = Vec::with_capacity(ac.len() + bc.len());
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                let take_a = j >= bc.len() || (i < ac.len() && ac[i] < bc[j]);
                let take_b = i >= ac.len() || (j < bc.len() && bc[j] < ac[i]);
                if take_a {
                    out.push((ac[i], av[i]));
                    i += 1;
                } else if take_b {
                    out.push((bc[j], bv[j]));
                    j += 1;
                } else {
                    let v = av[i] + bv[j];
                    if v != 0.0 {
                        out.push((ac[i], v));
                    }
                    i += 1;
                    j += 1;
                }
            }
            out
        })
        .collect();
    Ok(SparseMatrix::from_sorted_rows(a.n, rows))
}

/// Row sums, optionally counting an added unit self-loop.
pub fn degrees(a: &SparseMatrix, add_self_loops: bool) -> Vec<f64> {
    (0..a.n)
        .map(|r| a.row(r).1.iter().sum::<f64>() + if add_self_loops { 1.0 } else { 0.0 })
        .collect()
}

/// `D^{-1/2} (A [+ I]) D^{-1/2}` with `D` the row sums after the optional
/// self-loop addition. Rows with zero degree stay empty.
pub fn sym_normalize(a: &SparseMatrix, add_self_loops: bool) -> SparseMatrix {
    let base = if add_self_loops {
        add(a, &SparseMatrix::identity(a.n)).expect("same n")
    } else {
        a.clone()
    };
    let inv_sqrt: Vec<f64> = degrees(&base, false)
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    scale_by(&base, &inv_sqrt, &inv_sqrt)
}

/// `diag(left) · A · diag(right)`; entries that become zero are dropped.
pub fn scale_by(a: &SparseMatrix, left: &[f64], right: &[f64]) -> SparseMatrix {
    let rows = (0..a.n)
        .map(|r| {
            let (cols, vals) = a.row(r);
            cols.iter()
                .zip(vals)
                .map(|(&c, &v)| (c, left[r] * v * right[c]))
                .filter(|&(_, v)| v != 0.0)
                .collect()
        })
        .collect();
    SparseMatrix::from_sorted_rows(a.n, rows)
}

/// Exact sparse × dense product `A · X`.
pub fn spmm_dense(a: &SparseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n != x.rows() {
        return Err(Error::dims("spmm_dense", a.n, x.rows()));
    }
    let d = x.cols();
    let mut out = DenseMatrix::zeros(a.n, d);
    if d == 0 {
        return Ok(out);
    }
    out.data_mut().par_chunks_mut(d).enumerate().for_each(|(r, orow)| {
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for (o, &b) in orow.iter_mut().zip(x.row(c)) {
                *o += v * b;
            }
        }
    });
    Ok(out)
}

/// `Aᵀ · X` without building the transpose.
pub fn spmm_dense_t(a: &SparseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n != x.rows() {
        return Err(Error::dims("spmm_dense_t", a.n, x.rows()));
    }
    let mut out = DenseMatrix::zeros(a.n, x.cols());
    for (r, c, v) in a.iter() {
        let xrow = x.row(r);
        for (o, &b) in out.row_mut(c).iter_mut().zip(xrow) {
            *o += v * b;
        }
    }
    Ok(out)
}
