//! Datasets and the canonical TSV + JSON directory layout.
//!
//! A canonical directory holds `edges.tsv`, `features.tsv`, `labels.tsv`,
//! `splits.json` and `meta.json`. Converters for the Planetoid and OGB
//! layouts live in [`planetoid`] and [`ogb`].

mod metrics;
pub mod ogb;
mod pickle;
pub mod planetoid;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub use metrics::micro_macro_f1;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub n: usize,
    pub f: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Symmetric 0/1 adjacency without self-loops.
    pub adjacency: SparseMatrix,
    pub features: DenseMatrix,
    /// Class per node, `-1` for unlabeled nodes.
    pub labels: Vec<i64>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl Dataset {
    /// Builds and validates a dataset. Self-loops are dropped from the
    /// adjacency and stored values are reset to 1.
    pub fn new(
        name: impl Into<String>,
        adjacency: SparseMatrix,
        features: DenseMatrix,
        labels: Vec<i64>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            adjacency: adjacency.binarized().without_diagonal(),
            features,
            labels,
            num_classes,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn split(&self, split: Split) -> &[usize] {
        self.splits.get(split)
    }

    pub fn meta(&self) -> Meta {
        Meta {
            n: self.n(),
            f: self.num_features(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        self.adjacency.validate()?;
        if let Some((row, col)) = self.adjacency.first_asymmetry() {
            return Err(Error::Asymmetric { row, col });
        }
        if self.features.rows() != n {
            return Err(Error::dims("dataset features", n, self.features.rows()));
        }
        if self.labels.len() != n {
            return Err(Error::dims("dataset labels", n, self.labels.len()));
        }
        if !self.features.is_finite() {
            return Err(Error::InvalidInput("feature matrix contains non-finite values".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidInput("dataset needs at least one class".into()));
        }
        for (i, &y) in self.labels.iter().enumerate() {
            if y < -1 || y >= self.num_classes as i64 {
                return Err(Error::InvalidInput(format!(
                    "node {i} has label {y}, outside -1..{}",
                    self.num_classes
                )));
            }
        }
        let mut owner: Vec<Option<Split>> = vec![None; n];
        for split in Split::ALL {
            for &node in self.split(split) {
                if node >= n {
                    return Err(Error::IndexOutOfRange { index: node, n });
                }
                if let Some(first) = owner[node] {
                    return Err(Error::SplitOverlap {
                        node,
                        first: first.name(),
                        second: split.name(),
                    });
                }
                owner[node] = Some(split);
                if self.labels[node] < 0 {
                    return Err(Error::InvalidInput(format!(
                        "node {node} in the {split} split has no label"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Options for [`load_canonical_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Add missing mirror edges instead of rejecting an asymmetric edge list.
    pub symmetrize: bool,
}

/// Loads a canonical directory, rejecting edge lists that do not contain
/// both directions of every edge.
pub fn load_canonical(dir: impl AsRef<Path>) -> Result<Dataset> {
    load_canonical_with(dir, LoadOptions::default())
}

pub fn load_canonical_with(dir: impl AsRef<Path>, opts: LoadOptions) -> Result<Dataset> {
    let dir = dir.as_ref();
    let file = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingFile(p))
        }
    };
    let meta_path = file(META_FILE)?;
    let edges_path = file(EDGES_FILE)?;
    let features_path = file(FEATURES_FILE)?;
    let labels_path = file(LABELS_FILE)?;
    let splits_path = file(SPLITS_FILE)?;

    let meta: Meta = read_json(&meta_path, "meta")?;
    let edges = read_edges(&edges_path, meta.n)?;
    let adjacency = SparseMatrix::from_edges(&edges, meta.n, opts.symmetrize)?;
    if !opts.symmetrize {
        if let Some((row, col)) = adjacency.first_asymmetry() {
            return Err(Error::Asymmetric { row, col });
        }
    }
    let features = read_features(&features_path, meta.n, meta.f)?;
    let labels = read_labels(&labels_path, meta.n, meta.num_classes)?;
    let splits: Splits = read_json(&splits_path, "splits")?;
    Dataset::new(meta.name, adjacency, features, labels, meta.num_classes, splits)
}

/// Writes `dataset` in canonical form, creating `dir` if needed. Every
/// undirected edge is written in both directions.
pub fn save_canonical(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    write_text(&dir.join(EDGES_FILE), |w| {
        writeln!(w, "# src\tdst")?;
        for (r, c, _) in dataset.adjacency.iter() {
            writeln!(w, "{r}\t{c}")?;
        }
        Ok(())
    })?;
    write_text(&dir.join(FEATURES_FILE), |w| {
        for r in 0..dataset.features.rows() {
            write!(w, "{r}")?;
            for v in dataset.features.row(r) {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    write_text(&dir.join(LABELS_FILE), |w| {
        for (i, y) in dataset.labels.iter().enumerate() {
            writeln!(w, "{i}\t{y}")?;
        }
        Ok(())
    })?;
    write_json(&dir.join(SPLITS_FILE), &dataset.splits)?;
    write_json(&dir.join(META_FILE), &dataset.meta())
}

fn write_text(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Format {
        kind: "json",
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, kind: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line(),
        msg: format!("invalid {kind} json: {e}"),
    })
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>> + '_> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(f)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::io(path, e))),
            Ok(l) => {
                let t = l.trim();
                if t.is_empty() || t.starts_with('#') {
                    None
                } else {
                    Some(Ok((i + 1, t.to_string())))
                }
            }
        }))
}

fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        file: path.to_path_buf(),
        line,
        msg: format!("invalid {what} {field:?}"),
    })
}

fn node_id(path: &Path, line: usize, field: &str, n: usize) -> Result<usize> {
    let id: usize = parse_field(path, line, field, "node id")?;
    if id >= n {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            line,
            msg: format!("node id {id} out of range for n = {n}"),
        });
    }
    Ok(id)
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for item in data_lines(path)? {
        let (line, text) = item?;
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                msg: format!("expected 2 columns, found {}", cols.len()),
            });
        }
        edges.push((node_id(path, line, cols[0], n)?, node_id(path, line, cols[1], n)?));
    }
    Ok(edges)
}

fn read_features(path: &Path, n: usize, f: usize) -> Result<DenseMatrix> {
    let mut data = vec![0.0; n * f];
    let mut seen = vec![false; n];
    for item in data_lines(path)? {
        let (line, text) = item?;
        let mut cols = text.split('\t');
        let id = node_id(path, line, cols.next().unwrap_or_default().trim(), n)?;
        let values: Vec<&str> = cols.collect();
        if values.len() != f {
            return Err(Error::Shape {
                file: path.to_path_buf(),
                msg: format!("line {line}: expected {f} feature values, found {}", values.len()),
            });
        }
        if seen[id] {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                msg: format!("duplicate row for node {id}"),
            });
        }
        seen[id] = true;
        for (slot, v) in data[id * f..(id + 1) * f].iter_mut().zip(values) {
            let x: f64 = parse_field(path, line, v.trim(), "feature value")?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line,
                    msg: format!("non-finite feature value {v:?}"),
                });
            }
            *slot = x;
        }
    }
    let rows = seen.iter().filter(|s| **s).count();
    if rows != n {
        return Err(Error::Shape {
            file: path.to_path_buf(),
            msg: format!("expected {n} feature rows, found {rows}"),
        });
    }
    DenseMatrix::from_vec(n, f, data)
}

fn read_labels(path: &Path, n: usize, classes: usize) -> Result<Vec<i64>> {
    let mut labels = vec![-1i64; n];
    for item in data_lines(path)? {
        let (line, text) = item?;
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                msg: format!("expected 2 columns, found {}", cols.len()),
            });
        }
        let id = node_id(path, line, cols[0], n)?;
        let y: i64 = parse_field(path, line, cols[1], "class")?;
        if y < -1 || y >= classes as i64 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                msg: format!("class {y} outside -1..{classes}"),
            });
        }
        labels[id] = y;
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            "tiny",
            SparseMatrix::from_edges(&[(0, 1)], 2, true).unwrap(),
            DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![-0.25, 3.0]]).unwrap(),
            vec![0, 1],
            2,
            Splits {
                train: vec![0],
                val: vec![1],
                test: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn minimal_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_canonical(&ds, dir.path()).unwrap();
        let back = load_canonical(dir.path()).unwrap();
        assert_eq!(back.n(), 2);
        assert_eq!(back, ds);
    }

    #[test]
    fn overlapping_splits_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_canonical(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join(SPLITS_FILE), r#"{"train":[0],"val":[0],"test":[]}"#).unwrap();
        match load_canonical(dir.path()) {
            Err(Error::SplitOverlap {
                node: 0,
                first: "train",
                second: "val",
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        save_canonical(&tiny(), dir.path()).unwrap();
        fs::remove_file(dir.path().join(LABELS_FILE)).unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(Error::MissingFile(_))));

        save_canonical(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join(FEATURES_FILE), "0\t1\t2\n1\t3\n").unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(Error::Shape { .. })));

        save_canonical(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join(EDGES_FILE), "# c\n0\t1\n").unwrap();
        assert!(matches!(
            load_canonical(dir.path()),
            Err(Error::Asymmetric { row: 0, col: 1 })
        ));
        let sym = load_canonical_with(dir.path(), LoadOptions { symmetrize: true }).unwrap();
        assert!(sym.adjacency.contains(1, 0));

        fs::write(dir.path().join(EDGES_FILE), "0\tx\n").unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn self_loops_are_dropped() {
        let adj = SparseMatrix::from_edges(&[(0, 0), (0, 1)], 2, true).unwrap();
        let ds = Dataset::new("x", adj, DenseMatrix::zeros(2, 1), vec![-1, -1], 1, Splits::default()).unwrap();
        assert_eq!(ds.adjacency.nnz(), 2);
        assert_eq!(ds.num_edges(), 1);
    }

    #[test]
    fn unlabeled_split_node_rejected() {
        let adj = SparseMatrix::empty(2);
        let splits = Splits {
            train: vec![1],
            ..Splits::default()
        };
        assert!(Dataset::new("x", adj, DenseMatrix::zeros(2, 1), vec![0, -1], 1, splits).is_err());
    }
}
