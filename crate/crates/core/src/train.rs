//! Joint loss, analytic gradients, Adam and the epoch loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{micro_macro_f1, Dataset, Split};
use crate::dense::{DenseMatrix, RowSparse};
use crate::error::{Error, Result};
use crate::hops::{build_hopset_with, Normalization};
use crate::lcs::{self, build_mask, update_retention, MaskState, RetentionRule, RetentionSchedule};
use crate::model::{forward_pass, init_params, Artifacts, ForwardPass, Mode, ModelDims, ModelParams, Precision};
use crate::sparse::spmm_dense_t;

const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Input-feature dropout rate.
    pub dropout: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub hops: usize,
    pub hidden: usize,
    /// LCS attention width; `None` means `min(f, 64)`.
    pub lcs_dim: Option<usize>,
    pub seed: u64,
    pub mode: Mode,
    pub retention: RetentionRule,
    /// `m_2..m_K`, or a single value for every hop.
    pub retain: Vec<usize>,
    pub retention_patience: usize,
    pub retention_step: usize,
    /// Early-stopping patience; `None` picks 50 below 50k nodes, else 100.
    pub patience: Option<usize>,
    pub normalization: Normalization,
    pub precision: Precision,
    pub row_normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            lambda1: 0.005,
            lambda2: 0.01,
            beta: 0.5,
            hops: 3,
            hidden: 64,
            lcs_dim: None,
            seed: 0,
            mode: Mode::Full,
            retention: RetentionRule::ShrinkOnPlateau,
            retain: vec![16],
            retention_patience: 20,
            retention_step: 1,
            patience: None,
            normalization: Normalization::PerHop,
            precision: Precision::F64,
            row_normalize: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "learning_rate",
        "weight_decay",
        "dropout",
        "lambda1",
        "lambda2",
        "beta",
        "hops",
        "hidden",
        "lcs_dim",
        "seed",
        "mode",
        "retention",
        "retain",
        "retention_patience",
        "retention_step",
        "patience",
        "normalization",
        "precision",
        "row_normalize",
    ];

    /// Sets one field from its config-file spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "hops" => self.hops = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "lcs_dim" => {
                self.lcs_dim = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.trim().parse()?,
            "retention" => self.retention = value.trim().parse()?,
            "retain" => {
                self.retain = value
                    .split(',')
                    .map(|v| parse(key, v))
                    .collect::<Result<Vec<usize>>>()?
            }
            "retention_patience" => self.retention_patience = parse(key, value)?,
            "retention_step" => self.retention_step = parse(key, value)?,
            "patience" => {
                self.patience = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "normalization" => self.normalization = value.trim().parse()?,
            "precision" => self.precision = value.trim().parse()?,
            "row_normalize" => self.row_normalize = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in [`Self::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        vec![
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("dropout", self.dropout.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("beta", self.beta.to_string()),
            ("hops", self.hops.to_string()),
            ("hidden", self.hidden.to_string()),
            ("lcs_dim", opt(self.lcs_dim)),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
            ("retention", self.retention.to_string()),
            (
                "retain",
                self.retain.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ),
            ("retention_patience", self.retention_patience.to_string()),
            ("retention_step", self.retention_step.to_string()),
            ("patience", opt(self.patience)),
            ("normalization", self.normalization.to_string()),
            ("precision", self.precision.to_string()),
            ("row_normalize", self.row_normalize.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs < 1 {
            return fail("epochs must be >= 1");
        }
        if self.hops < 1 {
            return fail("hops (K) must be >= 1");
        }
        if self.hidden < 1 || self.lcs_dim == Some(0) {
            return fail("hidden and lcs_dim must be >= 1");
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.weight_decay < 0.0 {
            return fail("lambda1, lambda2 and weight_decay must be >= 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail("beta must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.retain.is_empty() || self.retain.contains(&0) {
            return fail("retain budgets must be >= 1");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<RetentionSchedule> {
        RetentionSchedule::new(
            self.hops,
            &self.retain,
            self.retention,
            self.retention_patience,
            self.retention_step,
        )
    }

    pub fn dims(&self, features: usize, classes: usize) -> ModelDims {
        ModelDims {
            f: features,
            d: self.hidden,
            d_f: self.lcs_dim.unwrap_or(features.min(64)),
            k: self.hops,
            classes,
        }
    }

    pub fn early_stop_patience(&self, n: usize) -> usize {
        self.patience.unwrap_or(if n < 50_000 { 50 } else { 100 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cla: f64,
    pub lcs: f64,
    pub sc: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hop_logits: Vec<f64>,
    pub w_high: DenseMatrix,
    pub w_low: DenseMatrix,
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub w_cls: DenseMatrix,
    pub b_cls: Vec<f64>,
}

/// Names of the parameter blocks, in the order used by [`Gradients::blocks`]
/// and [`param_blocks_mut`].
pub const BLOCK_NAMES: [&str; 7] = ["hop_logits", "w_high", "w_low", "w1", "w2", "w_cls", "b_cls"];

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let z = |m: &DenseMatrix| DenseMatrix::zeros(m.rows(), m.cols());
        Self {
            hop_logits: vec![0.0; p.hop_logits.len()],
            w_high: z(&p.w_high),
            w_low: z(&p.w_low),
            w1: z(&p.w1),
            w2: z(&p.w2),
            w_cls: z(&p.w_cls),
            b_cls: vec![0.0; p.b_cls.len()],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 7] {
        [
            &self.hop_logits,
            self.w_high.data(),
            self.w_low.data(),
            self.w1.data(),
            self.w2.data(),
            self.w_cls.data(),
            &self.b_cls,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 7] {
        [
            &mut self.hop_logits,
            self.w_high.data_mut(),
            self.w_low.data_mut(),
            self.w1.data_mut(),
            self.w2.data_mut(),
            self.w_cls.data_mut(),
            &mut self.b_cls,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

pub fn param_blocks_mut(p: &mut ModelParams) -> [&mut [f64]; 7] {
    [
        &mut p.hop_logits,
        p.w_high.data_mut(),
        p.w_low.data_mut(),
        p.w1.data_mut(),
        p.w2.data_mut(),
        p.w_cls.data_mut(),
        &mut p.b_cls,
    ]
}

fn check_index(labels: &[i64], index: &[usize], n: usize) -> Result<()> {
    if index.is_empty() {
        return Err(Error::InvalidInput("empty index set".into()));
    }
    for &i in index {
        if i >= n || i >= labels.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: n.min(labels.len()),
            });
        }
        if labels[i] < 0 {
            return Err(Error::InvalidInput(format!("node {i} in index set is unlabeled")));
        }
    }
    Ok(())
}

/// Mean of `−ln p[true class]` over `index`, clamping `p` at 1e-12.
pub fn cross_entropy(probs: &DenseMatrix, labels: &[i64], index: &[usize]) -> Result<f64> {
    check_index(labels, index, probs.rows())?;
    let total: f64 = index
        .iter()
        .map(|&i| -probs.get(i, labels[i] as usize).max(LOG_CLAMP).ln())
        .sum();
    Ok(total / index.len() as f64)
}

/// Composes `cla + λ1·lcs + λ2·sc`; lcs and sc are zero without a mask.
pub fn total_loss(cla: f64, mask: Option<&MaskState>, lambda1: f64, lambda2: f64) -> LossBreakdown {
    let (lcs, sc) = mask.map_or((0.0, 0.0), |m| (lcs::lcs_penalty(m), lcs::sc_value(m) as f64));
    LossBreakdown {
        cla,
        lcs,
        sc,
        total: cla + lambda1 * lcs + lambda2 * sc,
        lambda1,
        lambda2,
    }
}

/// Labels, supervised index set and loss weights.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub labels: &'a [i64],
    pub index: &'a [usize],
    pub lambda1: f64,
    pub lambda2: f64,
}

/// LCS projections `X W1ᵀ`, `X W2ᵀ` of the raw (never dropped-out) features.
pub fn projections(art: &Artifacts, params: &ModelParams) -> Result<(DenseMatrix, DenseMatrix)> {
    Ok((art.features.matmul_t(&params.w1)?, art.features.matmul_t(&params.w2)?))
}

/// Mask for the current parameters, or `None` in base mode.
pub fn current_mask(art: &Artifacts, params: &ModelParams, schedule: &RetentionSchedule) -> Result<Option<MaskState>> {
    if params.mode == Mode::Base {
        return Ok(None);
    }
    let (z1, z2) = projections(art, params)?;
    Ok(Some(build_mask(&art.hopset, &z1, &z2, schedule)?))
}

/// Loss value only (mask rebuilt from `params`), on features `x`.
pub fn loss(
    art: &Artifacts,
    params: &ModelParams,
    schedule: &RetentionSchedule,
    obj: &Objective<'_>,
    x: &RowSparse,
) -> Result<LossBreakdown> {
    let mask = current_mask(art, params, schedule)?;
    let pass = forward_pass(art, mask.as_ref(), params, x)?;
    Ok(total_loss(
        cross_entropy(&pass.probs, obj.labels, obj.index)?,
        mask.as_ref(),
        obj.lambda1,
        obj.lambda2,
    ))
}

/// Loss and exact gradients of `cla + λ1·lcs` for every continuous
/// parameter. The mask is rebuilt from `params` first; `sc` enters the
/// reported total but has no gradient.
pub fn backward(
    art: &Artifacts,
    params: &ModelParams,
    schedule: &RetentionSchedule,
    obj: &Objective<'_>,
    x: &RowSparse,
) -> Result<(LossBreakdown, Gradients)> {
    let mask = if params.mode == Mode::Full {
        let (z1, z2) = projections(art, params)?;
        Some((build_mask(&art.hopset, &z1, &z2, schedule)?, z1, z2))
    } else {
        None
    };
    let pass = forward_pass(art, mask.as_ref().map(|m| &m.0), params, x)?;
    backward_from_pass(art, mask.as_ref().map(|(m, a, b)| (m, a, b)), params, obj, x, &pass)
}

pub(crate) fn backward_from_pass(
    art: &Artifacts,
    mask: Option<(&MaskState, &DenseMatrix, &DenseMatrix)>,
    params: &ModelParams,
    obj: &Objective<'_>,
    x: &RowSparse,
    pass: &ForwardPass<'_>,
) -> Result<(LossBreakdown, Gradients)> {
    let cla = cross_entropy(&pass.probs, obj.labels, obj.index)?;
    let losses = total_loss(cla, mask.map(|m| m.0), obj.lambda1, obj.lambda2);
    let mut g = Gradients::zeros_like(params);
    let (n, classes) = pass.probs.shape();

    // d cla / d logits
    let inv = 1.0 / obj.index.len() as f64;
    let mut dz = DenseMatrix::zeros(n, classes);
    for &i in obj.index {
        let y = obj.labels[i] as usize;
        if pass.probs.get(i, y) < LOG_CLAMP {
            continue;
        }
        let row = dz.row_mut(i);
        row.copy_from_slice(pass.probs.row(i));
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    g.w_cls = pass.h.t_matmul(&dz)?;
    for r in 0..n {
        for (b, v) in g.b_cls.iter_mut().zip(dz.row(r)) {
            *b += v;
        }
    }
    let dh = dz.matmul_t(&params.w_cls)?;

    let high_scale = if params.mode == Mode::Full {
        1.0 - params.beta
    } else {
        1.0
    };
    let mut ds = dh.clone();
    for (v, &pre) in ds.data_mut().iter_mut().zip(pass.high_pre.data()) {
        *v = if pre > 0.0 { *v * high_scale } else { 0.0 };
    }
    let dalpha: Vec<f64> = pass.hop_outputs.iter().map(|q| ds.frobenius_dot(q)).collect();
    let weighted: f64 = pass.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
    g.hop_logits = pass
        .alpha
        .iter()
        .zip(&dalpha)
        .map(|(a, d)| a * (d - weighted))
        .collect();
    let mut dxw = DenseMatrix::zeros(n, params.w_high.cols());
    for (op, &a) in pass.hop_ops.iter().zip(&pass.alpha) {
        dxw.add_scaled(&spmm_dense_t(op, &ds)?, a)?;
    }
    g.w_high = x.t_matmul(&dxw)?;

    if let (Mode::Full, Some(low_pre)) = (params.mode, pass.low_pre.as_ref()) {
        let mut dt = dh;
        for (v, &pre) in dt.data_mut().iter_mut().zip(low_pre.data()) {
            *v = if pre > 0.0 { *v * params.beta } else { 0.0 };
        }
        g.w_low = x.t_matmul(&spmm_dense_t(&art.low_operator, &dt)?)?;
    }

    if let Some((m, z1, z2)) = mask {
        if obj.lambda1 != 0.0 {
            let (dz1, dz2) = lcs::lcs_penalty_grad(&art.hopset, m, z1, z2)?;
            // Z = X Wᵀ, so dW = dZᵀ X = (Xᵀ dZ)ᵀ
            let mut w1 = art.features.t_matmul(&dz1)?.transpose();
            let mut w2 = art.features.t_matmul(&dz2)?.transpose();
            w1.scale(obj.lambda1);
            w2.scale(obj.lambda1);
            g.w1 = w1;
            g.w2 = w2;
        }
    }
    Ok((losses, g))
}

/// First/second moment state for Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &ModelParams) -> Self {
        Self {
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }
}

/// One bias-corrected Adam update.
pub fn optimizer_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - AdamState::BETA1.powi(t);
    let c2 = 1.0 - AdamState::BETA2.powi(t);
    let gb = grads.blocks();
    let mb = state.m.blocks_mut();
    let vb = state.v.blocks_mut();
    for (((p, g), m), v) in param_blocks_mut(params).into_iter().zip(gb).zip(mb).zip(vb) {
        for i in 0..p.len() {
            m[i] = AdamState::BETA1 * m[i] + (1.0 - AdamState::BETA1) * g[i];
            v[i] = AdamState::BETA2 * v[i] + (1.0 - AdamState::BETA2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + AdamState::EPS);
        }
    }
}

/// Adds `wd · W` to the gradients of the three dense weight matrices.
fn apply_weight_decay(g: &mut Gradients, p: &ModelParams, wd: f64) -> Result<()> {
    if wd > 0.0 {
        g.w_high.add_scaled(&p.w_high, wd)?;
        if p.mode == Mode::Full {
            g.w_low.add_scaled(&p.w_low, wd)?;
        }
        g.w_cls.add_scaled(&p.w_cls, wd)?;
    }
    Ok(())
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
    /// `m_2..m_K` in effect during this epoch.
    pub retain: Vec<usize>,
}

pub const HISTORY_HEADER: &str = "epoch\tcla\tlcs\tsc\ttotal\tval_micro_f1\tval_macro_f1";

/// TSV rendering of a history (header plus one row per epoch).
pub fn history_tsv(history: &[EpochRecord], k: usize) -> String {
    let mut out = String::from(HISTORY_HEADER);
    for i in 2..=k {
        out.push_str(&format!("\tm_{i}"));
    }
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.epoch, r.loss.cla, r.loss.lcs, r.loss.sc, r.loss.total, r.val_micro_f1, r.val_macro_f1
        ));
        for m in &r.retain {
            out.push_str(&format!("\t{m}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub params: ModelParams,
    /// Retention schedule in effect at the best validation epoch.
    pub schedule: RetentionSchedule,
    pub best_epoch: usize,
    pub best_val_micro_f1: f64,
    pub history: Vec<EpochRecord>,
    /// `sc` of the mask used at the best epoch.
    pub best_sc: usize,
}

/// Builds the hop set for `config` and trains from scratch.
pub fn train_loop(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let art = prepare(dataset, config)?;
    train_with(&art, dataset, config)
}

/// Hop set + features for a dataset under `config`.
pub fn prepare(dataset: &Dataset, config: &TrainConfig) -> Result<Artifacts> {
    let hopset = build_hopset_with(&dataset.adjacency, config.hops, config.normalization)?;
    artifacts_from(hopset, dataset, config)
}

pub fn artifacts_from(hopset: crate::hops::HopSet, dataset: &Dataset, config: &TrainConfig) -> Result<Artifacts> {
    let features = if config.row_normalize {
        let mut f = dataset.features.clone();
        f.row_normalize();
        f
    } else {
        dataset.features.clone()
    };
    Ok(Artifacts::new(hopset.with_normalization(config.normalization), &features)?.with_precision(config.precision))
}

/// Trains on prepared artifacts (lets sweeps share one hop set).
pub fn train_with(art: &Artifacts, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if art.hopset.k() != config.hops {
        return Err(Error::dims("train: hop set K", config.hops, art.hopset.k()));
    }
    let dims = config.dims(art.features.cols(), dataset.num_classes);
    let mut params = init_params(dims, config.mode, config.beta, config.seed)?;
    let mut schedule = config.schedule()?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let patience = config.early_stop_patience(art.n());
    let train_idx = dataset.split(Split::Train);
    let val_idx = dataset.split(Split::Val);
    let obj = Objective {
        labels: &dataset.labels,
        index: train_idx,
        lambda1: config.lambda1,
        lambda2: config.lambda2,
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(ModelParams, RetentionSchedule, usize, f64, usize)> = None;
    let mut since_update = Vec::new();
    let mut stale = 0;
    for epoch in 0..config.epochs {
        let proj = if params.mode == Mode::Full {
            Some(projections(art, &params)?)
        } else {
            None
        };
        let mask = match &proj {
            Some((z1, z2)) => Some(build_mask(&art.hopset, z1, z2, &schedule)?),
            None => None,
        };
        let sc = mask.as_ref().map_or(0, lcs::sc_value);
        let eval = forward_pass(art, mask.as_ref(), &params, &art.features)?;
        let pred = eval.probs.argmax_rows();
        let (val_micro, val_macro) = micro_macro_f1(&pred, &dataset.labels, val_idx, dataset.num_classes)?;

        let dropped;
        let (x, train_pass) = if config.dropout > 0.0 {
            dropped = art.features.dropout(config.dropout, || rng.random::<f64>());
            let p = forward_pass(art, mask.as_ref(), &params, &dropped)?;
            (&dropped, p)
        } else {
            (&art.features, eval)
        };
        let mask_ref = mask.as_ref().zip(proj.as_ref()).map(|(m, (z1, z2))| (m, z1, z2));
        let (losses, mut grads) = backward_from_pass(art, mask_ref, &params, &obj, x, &train_pass)?;
        if !losses.total.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence {
                epoch,
                msg: format!(
                    "non-finite loss or gradient (cla = {}, lcs = {})",
                    losses.cla, losses.lcs
                ),
            });
        }
        history.push(EpochRecord {
            epoch,
            loss: losses,
            val_micro_f1: val_micro,
            val_macro_f1: val_macro,
            retain: schedule.m[1..].to_vec(),
        });
        if best.as_ref().is_none_or(|b| val_micro > b.3) {
            best = Some((params.clone(), schedule.clone(), epoch, val_micro, sc));
            stale = 0;
        } else {
            stale += 1;
        }

        apply_weight_decay(&mut grads, &params, config.weight_decay)?;
        optimizer_step(&mut params, &grads, &mut adam, config.learning_rate);
        if !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                msg: "parameters became non-finite after the update".into(),
            });
        }

        since_update.push(val_micro);
        let next = update_retention(&schedule, &since_update);
        if next != schedule {
            schedule = next;
            since_update.clear();
        }
        if stale >= patience {
            break;
        }
    }
    let (params, schedule, best_epoch, best_val_micro_f1, best_sc) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        schedule,
        best_epoch,
        best_val_micro_f1,
        history,
        best_sc,
    })
}

/// Micro/macro F1 of `params` on one split, rebuilding the mask from the
/// parameters and schedule.
pub fn evaluate(
    art: &Artifacts,
    params: &ModelParams,
    schedule: &RetentionSchedule,
    dataset: &Dataset,
    split: Split,
) -> Result<(f64, f64)> {
    let mask = current_mask(art, params, schedule)?;
    let pass = forward_pass(art, mask.as_ref(), params, &art.features)?;
    micro_macro_f1(
        &pass.probs.argmax_rows(),
        &dataset.labels,
        dataset.split(split),
        dataset.num_classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let onehot = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(cross_entropy(&onehot, &[0, 1], &[0, 1]).unwrap(), 0.0);
        let uniform = DenseMatrix::from_rows(&[vec![0.25; 4]]).unwrap();
        assert!((cross_entropy(&uniform, &[2], &[0]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&uniform, &[2], &[0]).unwrap() - 1.386294).abs() < 1e-6);
        assert!(cross_entropy(&uniform, &[2], &[]).is_err());
        // clamped at 1e-12
        assert!((cross_entropy(&onehot, &[1, 1], &[0]).unwrap() - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn total_loss_without_mask_is_cla() {
        let l = total_loss(0.7, None, 0.5, 0.5);
        assert_eq!((l.cla, l.lcs, l.sc, l.total), (0.7, 0.0, 0.0, 0.7));
    }

    #[test]
    fn adam_closed_form_first_step() {
        let mut p = init_params(
            ModelDims {
                f: 1,
                d: 1,
                d_f: 1,
                k: 1,
                classes: 1,
            },
            Mode::Full,
            0.5,
            0,
        )
        .unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let zero = Gradients::zeros_like(&p);
        optimizer_step(&mut p, &zero, &mut state, 0.1);
        assert_eq!(p, before);
        assert_eq!(state.step, 1);

        let mut state = AdamState::new(&p);
        let mut g = Gradients::zeros_like(&p);
        g.b_cls[0] = 1.0;
        optimizer_step(&mut p, &g, &mut state, 0.01);
        assert!((p.b_cls[0] - before.b_cls[0] + 0.01).abs() < 1e-9);
        // repeated unit gradients keep stepping by ~lr
        optimizer_step(&mut p, &g, &mut state, 0.01);
        assert!((p.b_cls[0] - before.b_cls[0] + 0.02).abs() < 1e-9);
    }

    #[test]
    fn config_round_trips_through_pairs() {
        let mut c = TrainConfig {
            retain: vec![8, 4],
            lcs_dim: Some(32),
            mode: Mode::Base,
            ..TrainConfig::default()
        };
        c.normalization = Normalization::Fused;
        let mut d = TrainConfig::default();
        for (k, v) in c.to_pairs() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
        assert_eq!(c.to_pairs().len(), TrainConfig::KEYS.len());
        assert!(d.set("nope", "1").is_err());
        assert!(d.set("beta", "x").is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig {
                epochs: 0,
                ..ok.clone()
            },
            TrainConfig { hops: 0, ..ok.clone() },
            TrainConfig {
                lambda1: -1.0,
                ..ok.clone()
            },
            TrainConfig {
                beta: 1.5,
                ..ok.clone()
            },
            TrainConfig {
                dropout: 1.0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
