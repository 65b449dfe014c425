//! Model checkpoints: a fixed header followed by the parameter tensors.
//!
//! Layout (u64/f64 little-endian): `"SGNNCKPT"`, version, f, d, d_f, K, C,
//! mode, beta, seed, normalization, precision, row_normalize, retention
//! rule, retention patience, retention step, `m_1..m_K`, best epoch, graph
//! hash (32 bytes), then hop_logits, w_high, w_low, w1, w2, w_cls, b_cls as
//! length-prefixed f64 arrays.

use std::fs;
use std::path::Path;

use crate::cache::{Reader, Writer};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::hops::Normalization;
use crate::lcs::{RetentionRule, RetentionSchedule};
use crate::model::{Mode, ModelDims, ModelParams, Precision};

const MAGIC: &[u8; 8] = b"SGNNCKPT";
const VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub schedule: RetentionSchedule,
    pub normalization: Normalization,
    pub precision: Precision,
    pub row_normalize: bool,
    pub seed: u64,
    pub best_epoch: usize,
    /// Structure hash of the training graph.
    pub graph_hash: [u8; 32],
}

fn rule_code(r: RetentionRule) -> u64 {
    match r {
        RetentionRule::Fixed => 0,
        RetentionRule::ShrinkOnPlateau => 1,
    }
}

fn precision_code(p: Precision) -> u64 {
    match p {
        Precision::F64 => 0,
        Precision::F32 => 1,
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let p = &self.params;
        let dims = p.dims();
        let mut w = Writer(Vec::new());
        w.bytes(MAGIC);
        w.u64(VERSION);
        for v in [dims.f, dims.d, dims.d_f, dims.k, dims.classes] {
            w.usize(v);
        }
        w.u64(p.mode.code());
        w.f64(p.beta);
        w.u64(self.seed);
        w.u64(self.normalization.code());
        w.u64(precision_code(self.precision));
        w.u64(self.row_normalize as u64);
        w.u64(rule_code(self.schedule.rule));
        w.usize(self.schedule.patience);
        w.usize(self.schedule.step);
        self.schedule.m.iter().for_each(|&m| w.u64(m as u64));
        w.usize(self.best_epoch);
        w.bytes(&self.graph_hash);
        w.f64s(&p.hop_logits);
        for m in [&p.w_high, &p.w_low, &p.w1, &p.w2, &p.w_cls] {
            w.f64s(m.data());
        }
        w.f64s(&p.b_cls);
        w.0
    }

    pub fn decode(data: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(data, "checkpoint", path);
        if r.bytes(8)? != MAGIC {
            return Err(r.err("bad magic"));
        }
        let version = r.u64()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let dims = ModelDims {
            f: r.usize()?,
            d: r.usize()?,
            d_f: r.usize()?,
            k: r.usize()?,
            classes: r.usize()?,
        };
        let code = r.u64()?;
        let mode = Mode::from_code(code).ok_or_else(|| r.err(format!("unknown mode {code}")))?;
        let beta = r.f64()?;
        let seed = r.u64()?;
        let code = r.u64()?;
        let normalization =
            Normalization::from_code(code).ok_or_else(|| r.err(format!("unknown normalization {code}")))?;
        let precision = match r.u64()? {
            0 => Precision::F64,
            1 => Precision::F32,
            c => return Err(r.err(format!("unknown precision {c}"))),
        };
        let row_normalize = r.u64()? != 0;
        let rule = match r.u64()? {
            0 => RetentionRule::Fixed,
            1 => RetentionRule::ShrinkOnPlateau,
            c => return Err(r.err(format!("unknown retention rule {c}"))),
        };
        let patience = r.usize()?;
        let step = r.usize()?;
        if dims.k.saturating_mul(8) > data.len() {
            return Err(r.err("K exceeds file size"));
        }
        let m = (0..dims.k)
            .map(|_| r.u64().map(|v| usize::try_from(v).unwrap_or(usize::MAX)))
            .collect::<Result<Vec<_>>>()?;
        let best_epoch = r.usize()?;
        let graph_hash: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");

        let mut vec_of = |len: usize, what: &str| -> Result<Vec<f64>> {
            let v = r.f64s()?;
            if v.len() != len {
                return Err(r.err(format!("{what} has {} values, expected {len}", v.len())));
            }
            Ok(v)
        };
        let hop_logits = vec_of(dims.k, "hop_logits")?;
        let mut mat = |rows: usize, cols: usize, what: &str| -> Result<DenseMatrix> {
            DenseMatrix::from_vec(rows, cols, vec_of(rows * cols, what)?)
        };
        let w_high = mat(dims.f, dims.d, "w_high")?;
        let w_low = mat(dims.f, dims.d, "w_low")?;
        let w1 = mat(dims.d_f, dims.f, "w1")?;
        let w2 = mat(dims.d_f, dims.f, "w2")?;
        let w_cls = mat(dims.d, dims.classes, "w_cls")?;
        let b_cls = vec_of(dims.classes, "b_cls")?;
        r.finish()?;
        Ok(Self {
            params: ModelParams {
                hop_logits,
                w_high,
                w_low,
                w1,
                w2,
                w_cls,
                b_cls,
                beta,
                mode,
            },
            schedule: RetentionSchedule {
                m,
                rule,
                patience,
                step,
            },
            normalization,
            precision,
            row_normalize,
            seed,
            best_epoch,
            graph_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&data, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_exact() {
        let dims = ModelDims {
            f: 4,
            d: 3,
            d_f: 2,
            k: 3,
            classes: 2,
        };
        let params = init_params(dims, Mode::Full, 0.3, 9).unwrap();
        let ck = Checkpoint {
            params,
            schedule: RetentionSchedule::new(3, &[5, 2], RetentionRule::ShrinkOnPlateau, 7, 1).unwrap(),
            normalization: Normalization::Fused,
            precision: Precision::F32,
            row_normalize: true,
            seed: 42,
            best_epoch: 17,
            graph_hash: [7; 32],
        };
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3], Path::new("mem")).is_err());
    }
}
