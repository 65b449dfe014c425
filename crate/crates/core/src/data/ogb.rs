//! Converter for the OGB node-property-prediction raw layout
//! (`raw/edge.csv[.gz]`, `raw/node-feat.csv[.gz]`, `raw/node-label.csv[.gz]`,
//! `split/<scheme>/{train,valid,test}.csv[.gz]`).

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{Dataset, Splits};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "ogb",
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// `base.csv.gz` if present, else `base.csv`.
fn locate(dir: &Path, base: &str) -> Result<PathBuf> {
    for candidate in [format!("{base}.csv.gz"), format!("{base}.csv")] {
        let p = dir.join(&candidate);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::MissingFile(dir.join(format!("{base}.csv[.gz]"))))
}

fn rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(f))
    } else {
        Box::new(f)
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            out.push((i + 1, t.split(',').map(|s| s.trim().to_string()).collect()));
        }
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        file: path.to_path_buf(),
        line,
        msg: format!("invalid value {s:?}"),
    })
}

fn index_file(path: &Path, n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (line, cols) in rows(path)? {
        let i: usize = field(path, line, &cols[0])?;
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        out.push(i);
    }
    Ok(out)
}

/// Converts an OGB dataset directory. `scheme` picks the split subdirectory;
/// by default the only one present is used.
pub fn convert_ogb(dir: impl AsRef<Path>, name: Option<&str>, scheme: Option<&str>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let raw = dir.join("raw");

    let feat_path = locate(&raw, "node-feat")?;
    let mut data = Vec::new();
    let mut f = None;
    for (line, cols) in rows(&feat_path)? {
        match f {
            None => f = Some(cols.len()),
            Some(w) if w != cols.len() => {
                return Err(Error::Shape {
                    file: feat_path.clone(),
                    msg: format!("line {line}: {} values, expected {w}", cols.len()),
                })
            }
            _ => {}
        }
        for c in &cols {
            data.push(field::<f64>(&feat_path, line, c)?);
        }
    }
    let f = f.ok_or_else(|| format_err(&feat_path, "no feature rows"))?;
    let n = data.len() / f;
    let features = DenseMatrix::from_vec(n, f, data)?;

    let label_path = locate(&raw, "node-label")?;
    let mut labels = Vec::with_capacity(n);
    for (line, cols) in rows(&label_path)? {
        let s = cols[0].as_str();
        labels.push(if s.eq_ignore_ascii_case("nan") || s.is_empty() {
            -1
        } else {
            field::<f64>(&label_path, line, s)? as i64
        });
    }
    if labels.len() != n {
        return Err(Error::Shape {
            file: label_path,
            msg: format!("{} labels for {n} nodes", labels.len()),
        });
    }
    let num_classes = labels.iter().copied().max().unwrap_or(-1).max(0) as usize + 1;

    let edge_path = locate(&raw, "edge")?;
    let mut edges = Vec::new();
    for (line, cols) in rows(&edge_path)? {
        if cols.len() != 2 {
            return Err(Error::Parse {
                file: edge_path.clone(),
                line,
                msg: format!("expected 2 columns, found {}", cols.len()),
            });
        }
        let (s, d): (usize, usize) = (field(&edge_path, line, &cols[0])?, field(&edge_path, line, &cols[1])?);
        if s >= n || d >= n {
            return Err(Error::Parse {
                file: edge_path.clone(),
                line,
                msg: format!("edge ({s}, {d}) outside {n} nodes"),
            });
        }
        edges.push((s, d));
    }
    let adjacency = SparseMatrix::from_edges(&edges, n, true)?;

    let split_root = dir.join("split");
    let split_dir = match scheme {
        Some(s) => split_root.join(s),
        None => {
            let mut subdirs: Vec<PathBuf> = fs::read_dir(&split_root)
                .map_err(|e| Error::io(&split_root, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            subdirs.sort();
            match subdirs.len() {
                1 => subdirs.remove(0),
                0 => return Err(Error::MissingFile(split_root.join("<scheme>"))),
                _ => return Err(format_err(&split_root, "several split schemes; pick one explicitly")),
            }
        }
    };
    let splits = Splits {
        train: index_file(&locate(&split_dir, "train")?, n)?,
        val: index_file(&locate(&split_dir, "valid")?, n)?,
        test: index_file(&locate(&split_dir, "test")?, n)?,
    };
    let name = name.map(str::to_string).unwrap_or_else(|| {
        dir.file_name()
            .map(|s| s.to_string_lossy().replace('_', "-"))
            .unwrap_or_default()
    });
    Dataset::new(name, adjacency, features, labels, num_classes, splits)
}
