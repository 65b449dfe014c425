//! Row-major dense matrices and a row-sparse view for feature products.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense row-major `rows × cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("DenseMatrix::from_vec", rows * cols, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dims(
                    "DenseMatrix::from_rows",
                    cols,
                    format!("{} in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dims("matmul", format!("inner dim {}", self.cols), other.rows));
        }
        let (k, m) = (self.cols, other.cols);
        let mut out = DenseMatrix::zeros(self.rows, m);
        if m == 0 {
            return Ok(out);
        }
        out.data
            .par_chunks_mut(m)
            .zip(self.data.par_chunks(k.max(1)))
            .for_each(|(orow, arow)| {
                for (t, &a) in arow.iter().enumerate().take(k) {
                    if a != 0.0 {
                        let brow = &other.data[t * m..(t + 1) * m];
                        for (o, &b) in orow.iter_mut().zip(brow) {
                            *o += a * b;
                        }
                    }
                }
            });
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::dims("t_matmul", self.rows, other.rows));
        }
        let (k, m) = (self.cols, other.cols);
        let mut out = DenseMatrix::zeros(k, m);
        for r in 0..self.rows {
            let arow = self.row(r);
            let brow = other.row(r);
            for (t, &a) in arow.iter().enumerate() {
                if a != 0.0 {
                    let orow = &mut out.data[t * m..(t + 1) * m];
                    for (o, &b) in orow.iter_mut().zip(brow) {
                        *o += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::dims("matmul_t", self.cols, other.cols));
        }
        let m = other.rows;
        let mut out = DenseMatrix::zeros(self.rows, m);
        if m == 0 {
            return Ok(out);
        }
        out.data
            .par_chunks_mut(m)
            .zip(self.data.par_chunks(self.cols.max(1)))
            .for_each(|(orow, arow)| {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = dot(arow, other.row(j));
                }
            });
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &DenseMatrix, s: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                "add_scaled",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn relu(&self) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&self) -> DenseMatrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            softmax_in_place(out.row_mut(r));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_dot(&self, other: &DenseMatrix) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry in each row; ties go to the smaller index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Rounds every entry through `f32`.
    pub fn round_to_f32(&mut self) {
        self.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }

    /// Scales each row to unit L1 norm; zero rows are left alone.
    pub fn row_normalize(&mut self) {
        for r in 0..self.rows {
            let row = self.row_mut(r);
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Compressed-row view of a rectangular matrix, used for products with
/// bag-of-words style feature matrices where most entries are zero.
#[derive(Debug, Clone)]
pub struct RowSparse {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl RowSparse {
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut offsets = Vec::with_capacity(m.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Self {
            rows: m.rows(),
            cols: m.cols(),
            offsets,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.offsets[r]..self.offsets[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Inverted dropout on the stored entries: each is zeroed with
    /// probability `rate` (drawn from `uniform`, one draw per entry in storage
    /// order) and survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout(&self, rate: f64, mut uniform: impl FnMut() -> f64) -> RowSparse {
        let keep = 1.0 - rate;
        let mut offsets = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        offsets.push(0);
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                if uniform() < keep {
                    indices.push(c);
                    values.push(v / keep);
                }
            }
            offsets.push(indices.len());
        }
        RowSparse {
            rows: self.rows,
            cols: self.cols,
            offsets,
            indices,
            values,
        }
    }

    /// `self · w` for `w` of shape `cols × d`.
    pub fn matmul(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        if w.rows() != self.cols {
            return Err(Error::dims("RowSparse::matmul", self.cols, w.rows()));
        }
        let d = w.cols();
        let mut out = DenseMatrix::zeros(self.rows, d);
        if d == 0 {
            return Ok(out);
        }
        out.data_mut().par_chunks_mut(d).enumerate().for_each(|(r, orow)| {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                for (o, &b) in orow.iter_mut().zip(w.row(c)) {
                    *o += v * b;
                }
            }
        });
        Ok(out)
    }

    /// `self · wᵀ` for `w` of shape `d × cols`.
    pub fn matmul_t(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        if w.cols() != self.cols {
            return Err(Error::dims("RowSparse::matmul_t", self.cols, w.cols()));
        }
        let d = w.rows();
        let mut out = DenseMatrix::zeros(self.rows, d);
        if d == 0 {
            return Ok(out);
        }
        out.data_mut().par_chunks_mut(d).enumerate().for_each(|(r, orow)| {
            let (idx, val) = self.row(r);
            for (j, o) in orow.iter_mut().enumerate() {
                let wrow = w.row(j);
                *o = idx.iter().zip(val).map(|(&c, &v)| v * wrow[c]).sum();
            }
        });
        Ok(out)
    }

    /// `selfᵀ · g` for `g` of shape `rows × d`, giving `cols × d`.
    pub fn t_matmul(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if g.rows() != self.rows {
            return Err(Error::dims("RowSparse::t_matmul", self.rows, g.rows()));
        }
        let d = g.cols();
        let mut out = DenseMatrix::zeros(self.cols, d);
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            let grow = g.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                for (o, &b) in out.row_mut(c).iter_mut().zip(grow) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn products_agree() {
        let a = m(&[&[1.0, 0.0, 2.0], &[0.0, -1.0, 3.0]]);
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab, m(&[&[11.0, 14.0], &[12.0, 14.0]]));
        assert_eq!(a.transpose().t_matmul(&b).unwrap(), ab);
        assert_eq!(a.matmul_t(&b.transpose()).unwrap(), ab);

        let sa = RowSparse::from_dense(&a);
        assert_eq!(sa.nnz(), 4);
        assert_eq!(sa.matmul(&b).unwrap(), ab);
        assert_eq!(sa.matmul_t(&b.transpose()).unwrap(), ab);
        let g = m(&[&[1.0, 1.0], &[2.0, 0.5]]);
        assert_eq!(sa.t_matmul(&g).unwrap(), a.t_matmul(&g).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(a.matmul(&DenseMatrix::zeros(2, 2)).is_err());
        assert!(DenseMatrix::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(DenseMatrix::from_vec(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = m(&[&[1000.0, 1000.0], &[0.0, (3.0f64).ln()]]).softmax_rows();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(1, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_first_on_tie() {
        assert_eq!(m(&[&[1.0, 1.0, 0.0], &[0.0, 2.0, 3.0]]).argmax_rows(), vec![0, 2]);
    }
}
