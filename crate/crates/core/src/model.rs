//! Forward computation: α-fused high-order branch, two-hop low-order branch,
//! β-weighted fusion and the softmax classifier.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{DenseMatrix, RowSparse};
use crate::error::{Error, Result};
use crate::hops::{softmax_weights, HopSet};
use crate::lcs::MaskState;
use crate::sparse::{spmm_dense, SparseMatrix};

/// `Base` keeps only the adaptive high-order fusion; `Full` adds the
/// low-order branch and LCS masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Base,
    #[default]
    Full,
}

impl Mode {
    pub fn code(self) -> u64 {
        match self {
            Mode::Base => 0,
            Mode::Full => 1,
        }
    }

    pub fn from_code(c: u64) -> Option<Self> {
        match c {
            0 => Some(Mode::Base),
            1 => Some(Mode::Full),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Base => "base",
            Mode::Full => "full",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Mode::Base),
            "full" => Ok(Mode::Full),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected base or full)"))),
        }
    }
}

/// Arithmetic precision. `F32` rounds every intermediate through `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" | "64" => Ok(Precision::F64),
            "f32" | "32" => Ok(Precision::F32),
            other => Err(Error::Config(format!(
                "unknown precision {other:?} (expected f64 or f32)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Input feature width.
    pub f: usize,
    /// Hidden width of both branches.
    pub d: usize,
    /// LCS attention width.
    pub d_f: usize,
    pub k: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hop_logits: Vec<f64>,
    /// `f × d`
    pub w_high: DenseMatrix,
    /// `f × d`
    pub w_low: DenseMatrix,
    /// `d_f × f`
    pub w1: DenseMatrix,
    /// `d_f × f`
    pub w2: DenseMatrix,
    /// `d × C`
    pub w_cls: DenseMatrix,
    pub b_cls: Vec<f64>,
    pub beta: f64,
    pub mode: Mode,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite init")
}

/// Glorot-uniform weights, zero hop logits and bias. Deterministic in `seed`.
pub fn init_params(dims: ModelDims, mode: Mode, beta: f64, seed: u64) -> Result<ModelParams> {
    let ModelDims { f, d, d_f, k, classes } = dims;
    if [f, d, d_f, k, classes].contains(&0) {
        return Err(Error::InvalidInput(format!(
            "all model dimensions must be >= 1, got {dims:?}"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("beta must lie in [0, 1], got {beta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ModelParams {
        hop_logits: vec![0.0; k],
        w_high: glorot(f, d, &mut rng),
        w_low: glorot(f, d, &mut rng),
        w1: glorot(d_f, f, &mut rng),
        w2: glorot(d_f, f, &mut rng),
        w_cls: glorot(d, classes, &mut rng),
        b_cls: vec![0.0; classes],
        beta,
        mode,
    })
}

impl ModelParams {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            f: self.w_high.rows(),
            d: self.w_high.cols(),
            d_f: self.w1.rows(),
            k: self.hop_logits.len(),
            classes: self.w_cls.cols(),
        }
    }

    pub fn alpha(&self) -> Vec<f64> {
        softmax_weights(&self.hop_logits).alpha
    }

    pub fn is_finite(&self) -> bool {
        self.hop_logits.iter().chain(&self.b_cls).all(|v| v.is_finite())
            && [&self.w_high, &self.w_low, &self.w1, &self.w2, &self.w_cls]
                .iter()
                .all(|m| m.is_finite())
            && (0.0..=1.0).contains(&self.beta)
    }
}

/// Everything the forward pass needs besides parameters: the hop set, the
/// fixed low-order operator and the feature matrix.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub hopset: HopSet,
    pub low_operator: SparseMatrix,
    pub features: RowSparse,
    pub precision: Precision,
}

impl Artifacts {
    pub fn new(hopset: HopSet, features: &DenseMatrix) -> Result<Self> {
        if features.rows() != hopset.n() {
            return Err(Error::dims("Artifacts::new", hopset.n(), features.rows()));
        }
        Ok(Self {
            low_operator: hopset.low_order_operator()?,
            hopset,
            features: RowSparse::from_dense(features),
            precision: Precision::F64,
        })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn n(&self) -> usize {
        self.hopset.n()
    }

    pub(crate) fn round(&self, m: &mut DenseMatrix) {
        if self.precision == Precision::F32 {
            m.round_to_f32();
        }
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<'a> {
    pub alpha: Vec<f64>,
    pub hop_ops: Vec<Cow<'a, SparseMatrix>>,
    /// `op_i · X · W_high` per hop.
    pub hop_outputs: Vec<DenseMatrix>,
    pub high_pre: DenseMatrix,
    pub h_high: DenseMatrix,
    pub low_pre: Option<DenseMatrix>,
    pub h_low: Option<DenseMatrix>,
    pub h: DenseMatrix,
    pub probs: DenseMatrix,
}

fn check_params(art: &Artifacts, params: &ModelParams, x: &RowSparse) -> Result<()> {
    let dims = params.dims();
    if x.rows() != art.n() || x.cols() != dims.f {
        return Err(Error::dims(
            "forward: features",
            format!("{} x {}", art.n(), dims.f),
            format!("{} x {}", x.rows(), x.cols()),
        ));
    }
    if dims.k != art.hopset.k() {
        return Err(Error::dims("forward: hop logits", art.hopset.k(), dims.k));
    }
    if params.w_low.shape() != params.w_high.shape()
        || params.w_cls.rows() != dims.d
        || params.b_cls.len() != dims.classes
        || params.w1.cols() != dims.f
        || params.w2.shape() != params.w1.shape()
    {
        return Err(Error::InvalidInput("inconsistent parameter shapes".into()));
    }
    Ok(())
}

/// Runs the whole model on feature matrix `x` (normally `art.features`, or a
/// dropout copy of it).
pub fn forward_pass<'a>(
    art: &'a Artifacts,
    mask: Option<&'a MaskState>,
    params: &ModelParams,
    x: &RowSparse,
) -> Result<ForwardPass<'a>> {
    check_params(art, params, x)?;
    let alpha = params.alpha();
    let mask = if params.mode == Mode::Base { None } else { mask };
    let hop_ops = art.hopset.hop_operators(mask)?;

    let mut xw_high = x.matmul(&params.w_high)?;
    art.round(&mut xw_high);
    let mut hop_outputs = Vec::with_capacity(hop_ops.len());
    let mut high_pre = DenseMatrix::zeros(art.n(), params.w_high.cols());
    for (op, &a) in hop_ops.iter().zip(&alpha) {
        let mut q = spmm_dense(op, &xw_high)?;
        art.round(&mut q);
        high_pre.add_scaled(&q, a)?;
        hop_outputs.push(q);
    }
    art.round(&mut high_pre);
    let h_high = high_pre.relu();

    let (low_pre, h_low, h) = match params.mode {
        Mode::Base => (None, None, h_high.clone()),
        Mode::Full => {
            let mut xw_low = x.matmul(&params.w_low)?;
            art.round(&mut xw_low);
            let mut low_pre = spmm_dense(&art.low_operator, &xw_low)?;
            art.round(&mut low_pre);
            let h_low = low_pre.relu();
            let mut h = fuse_representations(&h_low, &h_high, params.beta)?;
            art.round(&mut h);
            (Some(low_pre), Some(h_low), h)
        }
    };
    let mut probs = predict(&h, params)?;
    art.round(&mut probs);
    Ok(ForwardPass {
        alpha,
        hop_ops,
        hop_outputs,
        high_pre,
        h_high,
        low_pre,
        h_low,
        h,
        probs,
    })
}

/// `σ(Ã · X · W_high)` with `Ã` fused from the (masked) hop operators.
pub fn forward_high(
    hopset: &HopSet,
    mask: Option<&MaskState>,
    params: &ModelParams,
    x: &DenseMatrix,
) -> Result<DenseMatrix> {
    let xs = RowSparse::from_dense(x);
    let alpha = params.alpha();
    if alpha.len() != hopset.k() {
        return Err(Error::dims("forward_high", hopset.k(), alpha.len()));
    }
    if xs.rows() != hopset.n() {
        return Err(Error::dims("forward_high: features", hopset.n(), xs.rows()));
    }
    let xw = xs.matmul(&params.w_high)?;
    let mut pre = DenseMatrix::zeros(hopset.n(), params.w_high.cols());
    for (op, &a) in hopset.hop_operators(mask)?.iter().zip(&alpha) {
        pre.add_scaled(&spmm_dense(op, &xw)?, a)?;
    }
    Ok(pre.relu())
}

/// `σ(N(A^2 + I) · X · W_low)`.
pub fn forward_low(hopset: &HopSet, params: &ModelParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.rows() != hopset.n() {
        return Err(Error::dims("forward_low", hopset.n(), x.rows()));
    }
    let xw = RowSparse::from_dense(x).matmul(&params.w_low)?;
    Ok(spmm_dense(&hopset.low_order_operator()?, &xw)?.relu())
}

/// `β · H_low + (1 − β) · H_high`.
pub fn fuse_representations(h_low: &DenseMatrix, h_high: &DenseMatrix, beta: f64) -> Result<DenseMatrix> {
    if h_low.shape() != h_high.shape() {
        return Err(Error::dims(
            "fuse_representations",
            format!("{:?}", h_high.shape()),
            format!("{:?}", h_low.shape()),
        ));
    }
    let mut out = h_high.clone();
    out.scale(1.0 - beta);
    out.add_scaled(h_low, beta)?;
    Ok(out)
}

/// Row-wise `softmax(H · W_cls + b_cls)`.
pub fn predict(h: &DenseMatrix, params: &ModelParams) -> Result<DenseMatrix> {
    let mut logits = h.matmul(&params.w_cls)?;
    for r in 0..logits.rows() {
        for (z, b) in logits.row_mut(r).iter_mut().zip(&params.b_cls) {
            *z += b;
        }
    }
    Ok(logits.softmax_rows())
}

/// Full forward over the artifacts' features: returns `(H, probabilities)`.
pub fn forward(art: &Artifacts, mask: Option<&MaskState>, params: &ModelParams) -> Result<(DenseMatrix, DenseMatrix)> {
    let pass = forward_pass(art, mask, params, &art.features)?;
    Ok((pass.h, pass.probs))
}
