//! Binary hop cache: the pure and normalized pure hop matrices of a graph,
//! tagged with the graph's structure hash.
//!
//! Layout (all integers u64 little-endian, values f64 little-endian):
//! `"SGNNHOPS"`, version, n, K, normalization code, 32-byte SHA-256 of the
//! adjacency structure, then `2K` matrices, each `kind, hop, n, nnz,
//! offsets[n+1], cols[nnz], values[nnz]` (kind 0 = pure, 1 = normalized).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hops::{HopSet, Normalization};
use crate::sparse::SparseMatrix;

const MAGIC: &[u8; 8] = b"SGNNHOPS";
const VERSION: u64 = 1;

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    kind: &'static str,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8], kind: &'static str, path: &'a Path) -> Self {
        Self {
            data,
            pos: 0,
            kind,
            path,
        }
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.data.len() - self.pos {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("value {v} does not fit in usize")))
    }

    /// A length that must fit in the remaining bytes at `width` bytes each.
    pub fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(width) > self.data.len() - self.pos {
            return Err(self.err(format!("length {n} exceeds remaining data")));
        }
        Ok(n)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.err(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_matrix(w: &mut Writer, kind: u64, hop: usize, m: &SparseMatrix) {
    w.u64(kind);
    w.usize(hop);
    w.usize(m.n());
    w.usize(m.nnz());
    m.row_offsets().iter().for_each(|&o| w.usize(o));
    m.col_indices().iter().for_each(|&c| w.usize(c));
    m.values().iter().for_each(|&v| w.f64(v));
}

fn read_matrix(r: &mut Reader<'_>, kind: u64, hop: usize, n: usize) -> Result<SparseMatrix> {
    let (k, h) = (r.u64()?, r.usize()?);
    if (k, h) != (kind, hop) {
        return Err(r.err(format!("expected matrix kind {kind} hop {hop}, found kind {k} hop {h}")));
    }
    let mn = r.usize()?;
    if mn != n {
        return Err(r.err(format!("matrix for hop {hop} has n = {mn}, header says {n}")));
    }
    let nnz = r.len(16)?;
    if (n + 1).saturating_mul(8) > r.data.len() - r.pos {
        return Err(r.err("offsets exceed remaining data"));
    }
    let offsets = (0..=n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let cols = (0..nnz).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let values = (0..nnz).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    SparseMatrix::from_parts(n, offsets, cols, values).map_err(|e| r.err(format!("hop {hop}: {e}")))
}

/// Serializes a hop set with the structure hash of the graph it came from.
pub fn encode_hop_cache(hopset: &HopSet, graph_hash: &[u8; 32]) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u64(VERSION);
    w.usize(hopset.n());
    w.usize(hopset.k());
    w.u64(hopset.normalization().code());
    w.bytes(graph_hash);
    for (i, m) in hopset.pure().iter().enumerate() {
        write_matrix(&mut w, 0, i + 1, m);
    }
    for (i, m) in hopset.normalized_pure().iter().enumerate() {
        write_matrix(&mut w, 1, i + 1, m);
    }
    w.0
}

pub fn decode_hop_cache(data: &[u8], path: &Path) -> Result<(HopSet, [u8; 32])> {
    let mut r = Reader::new(data, "hop cache", path);
    if r.bytes(8)? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u64()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let n = r.usize()?;
    let k = r.usize()?;
    if k < 1 {
        return Err(r.err("K must be >= 1"));
    }
    let code = r.u64()?;
    let norm = Normalization::from_code(code).ok_or_else(|| r.err(format!("unknown normalization code {code}")))?;
    let hash: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
    let pure = (1..=k)
        .map(|i| read_matrix(&mut r, 0, i, n))
        .collect::<Result<Vec<_>>>()?;
    let normalized = (1..=k)
        .map(|i| read_matrix(&mut r, 1, i, n))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((HopSet::from_pure(pure, normalized, norm)?, hash))
}

pub fn write_hop_cache(path: impl AsRef<Path>, hopset: &HopSet, graph_hash: &[u8; 32]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_hop_cache(hopset, graph_hash)).map_err(|e| Error::io(path, e))
}

pub fn read_hop_cache(path: impl AsRef<Path>) -> Result<(HopSet, [u8; 32])> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_hop_cache(&data, path)
}

/// Reads a cache and checks it was built from `adjacency`.
pub fn load_hop_cache_for(path: impl AsRef<Path>, adjacency: &SparseMatrix) -> Result<HopSet> {
    let (hopset, hash) = read_hop_cache(path)?;
    let actual = adjacency.structure_hash();
    if hash != actual {
        return Err(Error::StaleCache {
            cached: hex::encode(&hash[..8]),
            actual: hex::encode(&actual[..8]),
        });
    }
    Ok(hopset)
}
