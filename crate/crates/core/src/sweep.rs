//! One-axis hyperparameter sweeps producing plot-ready TSV rows.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::hops::build_hopset_with;
use crate::model::Artifacts;
use crate::train::{artifacts_from, evaluate, train_with, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Hops,
    Beta,
    Lambda1,
    Lambda2,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Hops => "hops",
            SweepAxis::Beta => "beta",
            SweepAxis::Lambda1 => "lambda1",
            SweepAxis::Lambda2 => "lambda2",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hops" | "k" | "K" => Ok(SweepAxis::Hops),
            "beta" => Ok(SweepAxis::Beta),
            "lambda1" => Ok(SweepAxis::Lambda1),
            "lambda2" => Ok(SweepAxis::Lambda2),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected hops, beta, lambda1 or lambda2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub test_micro_f1: f64,
    pub test_macro_f1: f64,
    /// Seconds spent in this run (hop construction included for K sweeps).
    pub wall_time: f64,
    /// Retained high-order entries at the best epoch.
    pub sc: usize,
    pub best_epoch: usize,
}

pub const SWEEP_HEADER: &str = "value\tmicro_f1\tmacro_f1\twall_time_s\tsc\tbest_epoch";

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.3}\t{}\t{}\n",
            r.value, r.test_micro_f1, r.test_macro_f1, r.wall_time, r.sc, r.best_epoch
        ));
    }
    out
}

/// `config` with the swept field set to `value`.
pub fn config_for(config: &TrainConfig, axis: SweepAxis, value: f64) -> Result<TrainConfig> {
    let mut c = config.clone();
    match axis {
        SweepAxis::Hops => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "hop count must be a positive integer, got {value}"
                )));
            }
            c.hops = value as usize;
        }
        SweepAxis::Beta => c.beta = value,
        SweepAxis::Lambda1 => c.lambda1 = value,
        SweepAxis::Lambda2 => c.lambda2 = value,
    }
    c.validate()?;
    Ok(c)
}

fn run_one(dataset: &Dataset, shared: Option<&Artifacts>, config: &TrainConfig, value: f64) -> Result<SweepRow> {
    let start = Instant::now();
    let owned;
    let art = match shared {
        Some(a) => a,
        None => {
            let hopset = build_hopset_with(&dataset.adjacency, config.hops, config.normalization)?;
            owned = artifacts_from(hopset, dataset, config)?;
            &owned
        }
    };
    let out = train_with(art, dataset, config)?;
    let (micro, macro_) = evaluate(art, &out.params, &out.schedule, dataset, Split::Test)?;
    Ok(SweepRow {
        value,
        test_micro_f1: micro,
        test_macro_f1: macro_,
        wall_time: start.elapsed().as_secs_f64(),
        sc: out.best_sc,
        best_epoch: out.best_epoch,
    })
}

/// Runs one independent training per value, at most `jobs` at a time.
/// Beta and lambda sweeps share a single hop set; hop sweeps rebuild it per K.
pub fn run_sweep(
    dataset: &Dataset,
    config: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| config_for(config, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let shared = match axis {
        SweepAxis::Hops => None,
        _ => {
            let hopset = build_hopset_with(&dataset.adjacency, config.hops, config.normalization)?;
            Some(artifacts_from(hopset, dataset, config)?)
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| {
        configs
            .par_iter()
            .zip(values.par_iter())
            .map(|(c, &v)| run_one(dataset, shared.as_ref(), c, v))
            .collect()
    })
}
