//! Central finite-difference verification of the analytic gradients.

use crate::error::Result;
use crate::fixtures;
use crate::hops::{build_hopset_with, Normalization};
use crate::lcs::{RetentionRule, RetentionSchedule};
use crate::model::{init_params, Artifacts, Mode, ModelDims, ModelParams, Precision};
use crate::train::{self, param_blocks_mut, Gradients, Objective, BLOCK_NAMES};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

/// A small random problem: graph, features, labels, parameters and schedule.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub artifacts: Artifacts,
    pub params: ModelParams,
    pub schedule: RetentionSchedule,
    pub labels: Vec<i64>,
    pub train: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Fixture {
    pub fn objective(&self) -> Objective<'_> {
        Objective {
            labels: &self.labels,
            index: &self.train,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub n: usize,
    pub f: usize,
    pub d: usize,
    pub d_f: usize,
    pub k: usize,
    pub classes: usize,
    pub retain: usize,
    pub mode: Mode,
    pub normalization: Normalization,
    pub precision: Precision,
    pub beta: f64,
    pub lambda1: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n: 14,
            f: 6,
            d: 5,
            d_f: 4,
            k: 3,
            classes: 3,
            retain: 2,
            mode: Mode::Full,
            normalization: Normalization::PerHop,
            precision: Precision::F64,
            beta: 0.4,
            lambda1: 0.5,
        }
    }
}

/// Builds a random fixture. Parameters are scaled up from the usual
/// initialization so every gradient block is well away from zero.
pub fn random_fixture(spec: FixtureSpec, seed: u64) -> Result<Fixture> {
    let adj = fixtures::random_graph(spec.n, 0.25, seed);
    let x = fixtures::random_dense(spec.n, spec.f, seed.wrapping_add(1));
    let hopset = build_hopset_with(&adj, spec.k, spec.normalization)?;
    let artifacts = Artifacts::new(hopset, &x)?.with_precision(spec.precision);
    let dims = ModelDims {
        f: spec.f,
        d: spec.d,
        d_f: spec.d_f,
        k: spec.k,
        classes: spec.classes,
    };
    let mut params = init_params(dims, spec.mode, spec.beta, seed.wrapping_add(2))?;
    let logits = fixtures::random_dense(1, spec.k, seed.wrapping_add(3));
    params.hop_logits = logits.data().to_vec();
    params.b_cls = fixtures::random_dense(1, spec.classes, seed.wrapping_add(4)).into_vec();
    for m in [&mut params.w1, &mut params.w2] {
        m.scale(3.0);
    }
    let labels: Vec<i64> = (0..spec.n)
        .map(|i| ((i * 7 + seed as usize) % spec.classes) as i64)
        .collect();
    let train: Vec<usize> = (0..spec.n).filter(|i| i % 3 != 2).collect();
    let schedule = RetentionSchedule::new(spec.k, &[spec.retain], RetentionRule::Fixed, 20, 1)?;
    Ok(Fixture {
        artifacts,
        params,
        schedule,
        labels,
        train,
        lambda1: spec.lambda1,
        lambda2: 0.01,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: &'static str,
    pub entries: usize,
    /// `max |analytic − numeric| / max(max |analytic|, max |numeric|, 1e-8)`.
    pub rel_error: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockReport>,
    pub threshold: f64,
    pub warnings: Vec<String>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.rel_error < self.threshold)
    }
}

/// Compares `grad_fn` against central differences of the total loss for
/// every entry of every non-empty parameter block.
pub fn gradcheck_with(
    fx: &Fixture,
    eps: f64,
    threshold: f64,
    grad_fn: impl Fn(&Fixture, &ModelParams) -> Result<Gradients>,
) -> Result<GradcheckReport> {
    let mut warnings = Vec::new();
    if fx.artifacts.precision == Precision::F32 {
        warnings.push(format!(
            "single-precision mode: finite differences at eps = {eps:e} are dominated by rounding, \
             the {threshold:e} threshold is unreliable"
        ));
    }
    let obj = fx.objective();
    let x = &fx.artifacts.features;
    let loss_at = |p: &ModelParams| -> Result<f64> { Ok(train::loss(&fx.artifacts, p, &fx.schedule, &obj, x)?.total) };
    let analytic = grad_fn(fx, &fx.params)?;
    let mut blocks = Vec::new();
    let mut work = fx.params.clone();
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let a = analytic.blocks()[b].to_vec();
        let len = a.len();
        if len == 0 || (fx.params.mode == Mode::Base && matches!(*name, "w_low" | "w1" | "w2")) {
            continue;
        }
        let mut numeric = Vec::with_capacity(len);
        for i in 0..len {
            let orig = param_blocks_mut(&mut work)[b][i];
            param_blocks_mut(&mut work)[b][i] = orig + eps;
            let up = loss_at(&work)?;
            param_blocks_mut(&mut work)[b][i] = orig - eps;
            let down = loss_at(&work)?;
            param_blocks_mut(&mut work)[b][i] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        let abs_error = a.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = a.iter().chain(&numeric).map(|v| v.abs()).fold(1e-8, f64::max);
        blocks.push(BlockReport {
            name,
            entries: len,
            rel_error: abs_error / scale,
            abs_error,
        });
    }
    Ok(GradcheckReport {
        blocks,
        threshold,
        warnings,
    })
}

/// Checks the analytic [`train::backward`] gradients.
pub fn gradcheck(fx: &Fixture) -> Result<GradcheckReport> {
    gradcheck_with(fx, DEFAULT_EPS, DEFAULT_THRESHOLD, |fx, p| {
        let obj = fx.objective();
        Ok(train::backward(&fx.artifacts, p, &fx.schedule, &obj, &fx.artifacts.features)?.1)
    })
}

/// The default battery: three random full-mode fixtures.
pub fn default_fixtures(precision: Precision) -> Result<Vec<Fixture>> {
    [11, 12, 13]
        .into_iter()
        .map(|seed| {
            random_fixture(
                FixtureSpec {
                    precision,
                    ..FixtureSpec::default()
                },
                seed,
            )
        })
        .collect()
}
