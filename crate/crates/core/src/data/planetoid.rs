//! Converter for the Planetoid `ind.<name>.*` layout (Cora, Citeseer, Pubmed).
//!
//! Node ordering, split construction and the Citeseer isolated-test-node
//! padding follow the widely used GCN preprocessing: `train = 0..|y|`,
//! `val = |y|..|y|+500`, `test` = the sorted contents of `test.index`. On
//! graphs small enough for that range to reach the test block, test and
//! unlabeled nodes are left out of `val`.

use std::fs;
use std::path::{Path, PathBuf};

use super::pickle::{self, Value};
use super::{Dataset, Splits};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const VAL_SIZE: usize = 500;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "planetoid",
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Finds the dataset name from an `ind.<name>.x` file in `dir`.
pub fn detect_name(dir: &Path) -> Result<String> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let f = e.file_name().to_string_lossy().into_owned();
            f.strip_prefix("ind.")?.strip_suffix(".x").map(str::to_string)
        })
        .collect();
    names.sort();
    match names.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(Error::MissingFile(dir.join("ind.<name>.x"))),
        _ => Err(format_err(dir, format!("several datasets present: {names:?}"))),
    }
}

fn load_pickle(path: &Path) -> Result<Value> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    pickle::parse(&bytes).map_err(|m| format_err(path, m))
}

/// Dense view of a pickled scipy CSR matrix or numpy 2-d array.
fn matrix(v: &Value, path: &Path) -> Result<DenseMatrix> {
    let err = |m: String| format_err(path, m);
    let class = v.class_name().map(|(_, n)| n).unwrap_or_default();
    if class.contains("csr_matrix") || class.contains("csr_array") {
        let field = |k: &str| v.dict_get(k).ok_or_else(|| err(format!("csr matrix lacks {k:?}")));
        let shape = field("_shape").or_else(|_| field("shape"))?;
        let shape = shape.items().ok_or_else(|| err("csr shape is not a tuple".into()))?;
        let dim = |i: usize| shape.get(i).and_then(Value::as_int).map(|x| x as usize);
        let (Some(rows), Some(cols)) = (dim(0), dim(1)) else {
            return Err(err("csr shape is not two integers".into()));
        };
        let data = pickle::ndarray(&field("data")?).map_err(err)?.data;
        let indices = pickle::ndarray(&field("indices")?).map_err(err)?.data;
        let indptr = pickle::ndarray(&field("indptr")?).map_err(err)?.data;
        if indptr.len() != rows + 1 || indices.len() != data.len() {
            return Err(err("inconsistent csr arrays".into()));
        }
        let mut out = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            let (s, e) = (indptr[r] as usize, indptr[r + 1] as usize);
            if s > e || e > data.len() {
                return Err(err(format!("bad indptr at row {r}")));
            }
            for k in s..e {
                let c = indices[k] as usize;
                if c >= cols {
                    return Err(err(format!("column {c} out of range in row {r}")));
                }
                out.set(r, c, out.get(r, c) + data[k]);
            }
        }
        Ok(out)
    } else if class.contains("ndarray") || class.contains("_reconstruct") || class.contains("matrix") {
        let a = pickle::ndarray(v).map_err(err)?;
        match a.shape.as_slice() {
            [r, c] => DenseMatrix::from_vec(*r, *c, a.data),
            [r] => DenseMatrix::from_vec(*r, 1, a.data),
            s => Err(err(format!("expected a 2-d array, got shape {s:?}"))),
        }
    } else {
        Err(err(format!("unsupported matrix object {class:?}")))
    }
}

fn read_test_index(path: &Path) -> Result<Vec<usize>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                msg: format!("invalid test index {l:?}"),
            })
        })
        .collect()
}

fn graph_edges(v: &Value, path: &Path) -> Result<Vec<(usize, usize)>> {
    let entries = v
        .dict_entries()
        .ok_or_else(|| format_err(path, "graph is not a dict of lists"))?;
    let mut edges = Vec::new();
    for (k, nbrs) in entries {
        let src = k
            .as_int()
            .filter(|&i| i >= 0)
            .ok_or_else(|| format_err(path, "graph key is not a node id"))? as usize;
        for d in nbrs
            .items()
            .ok_or_else(|| format_err(path, "graph value is not a list"))?
        {
            let dst = d
                .as_int()
                .filter(|&i| i >= 0)
                .ok_or_else(|| format_err(path, "neighbor is not a node id"))? as usize;
            edges.push((src, dst));
        }
    }
    Ok(edges)
}

fn vstack(a: &DenseMatrix, b: &DenseMatrix, path: &Path) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(format_err(
            path,
            format!("column mismatch {} vs {}", a.cols(), b.cols()),
        ));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    DenseMatrix::from_vec(a.rows() + b.rows(), a.cols(), data)
}

/// Scatters the rows of `m` (one per sorted test index) into a block covering
/// `min..=max`, leaving gaps zero.
fn pad_test_rows(m: &DenseMatrix, sorted: &[usize], path: &Path) -> Result<DenseMatrix> {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if m.rows() != sorted.len() {
        return Err(format_err(
            path,
            format!("{} test rows for {} test indices", m.rows(), sorted.len()),
        ));
    }
    let mut out = DenseMatrix::zeros(hi - lo + 1, m.cols());
    for (r, &idx) in sorted.iter().enumerate() {
        out.row_mut(idx - lo).copy_from_slice(m.row(r));
    }
    Ok(out)
}

/// Reads `ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}` from `dir`.
pub fn convert_planetoid(dir: impl AsRef<Path>, name: Option<&str>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let name = match name {
        Some(n) => n.to_string(),
        None => detect_name(dir)?,
    };
    let p = |suffix: &str| -> PathBuf { dir.join(format!("ind.{name}.{suffix}")) };
    let y = matrix(&load_pickle(&p("y"))?, &p("y"))?;
    let tx = matrix(&load_pickle(&p("tx"))?, &p("tx"))?;
    let ty = matrix(&load_pickle(&p("ty"))?, &p("ty"))?;
    let allx = matrix(&load_pickle(&p("allx"))?, &p("allx"))?;
    let ally = matrix(&load_pickle(&p("ally"))?, &p("ally"))?;
    let edges = graph_edges(&load_pickle(&p("graph"))?, &p("graph"))?;
    let test_order = read_test_index(&p("test.index"))?;
    if test_order.is_empty() {
        return Err(format_err(&p("test.index"), "no test indices"));
    }
    let mut sorted = test_order.clone();
    sorted.sort_unstable();

    let (tx, ty) = if sorted[sorted.len() - 1] - sorted[0] + 1 != sorted.len() {
        // isolated test nodes missing from tx/ty (Citeseer)
        (
            pad_test_rows(&tx, &sorted, &p("tx"))?,
            pad_test_rows(&ty, &sorted, &p("ty"))?,
        )
    } else {
        (tx, ty)
    };
    let stacked_x = vstack(&allx, &tx, &p("tx"))?;
    let stacked_y = vstack(&ally, &ty, &p("ty"))?;
    let n = stacked_x.rows();
    if stacked_y.rows() != n {
        return Err(format_err(
            dir,
            format!("{} feature rows but {} label rows", n, stacked_y.rows()),
        ));
    }
    if let Some(&bad) = sorted.iter().find(|&&i| i >= n) {
        return Err(format_err(&p("test.index"), format!("test index {bad} >= {n}")));
    }

    // features[test_order] = features[sorted]
    let mut x = stacked_x.clone();
    let mut yy = stacked_y.clone();
    for (&dst, &src) in test_order.iter().zip(&sorted) {
        x.row_mut(dst).copy_from_slice(stacked_x.row(src));
        yy.row_mut(dst).copy_from_slice(stacked_y.row(src));
    }

    let classes = yy.cols();
    let labels: Vec<i64> = (0..n)
        .map(|r| {
            let row = yy.row(r);
            if row.iter().all(|&v| v == 0.0) {
                -1
            } else {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as i64
            }
        })
        .collect();

    let train: Vec<usize> = (0..y.rows()).collect();
    let is_test: std::collections::HashSet<usize> = sorted.iter().copied().collect();
    let val: Vec<usize> = (y.rows()..(y.rows() + VAL_SIZE).min(n))
        .filter(|i| !is_test.contains(i) && labels[*i] >= 0)
        .collect();
    let splits = Splits {
        train,
        val,
        test: sorted,
    };

    if let Some(&(s, d)) = edges.iter().find(|&&(s, d)| s >= n || d >= n) {
        return Err(format_err(&p("graph"), format!("edge ({s}, {d}) outside {n} nodes")));
    }
    let adjacency = SparseMatrix::from_edges(&edges, n, true)?;
    Dataset::new(name, adjacency, x, labels, classes, splits)
}
