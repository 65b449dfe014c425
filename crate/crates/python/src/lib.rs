use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use scalegnn::data::{load_canonical, save_canonical, Split};
use scalegnn::fixtures::{planted_partition, PlantedPartition};
use scalegnn::gradcheck::{default_fixtures, gradcheck as run_gradcheck};
use scalegnn::hops::{build_hopset_with, Normalization};
use scalegnn::train::{evaluate, history_tsv, prepare, train_with};
use scalegnn::{DenseMatrix, Error, SparseMatrix};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingFile(_) => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn dense(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(to_py)
}

fn triplets(m: &SparseMatrix) -> Vec<(usize, usize, f64)> {
    m.iter().collect()
}

/// A validated node-classification dataset.
#[pyclass(name = "Dataset", module = "scalegnn_py")]
struct PyDataset {
    inner: scalegnn::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Loads a canonical dataset directory.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_canonical(path).map_err(to_py)?,
        })
    }

    /// A stochastic-block-model dataset with noisy class-centroid features.
    #[staticmethod]
    #[pyo3(signature = (n=300, classes=3, features=16, seed=0))]
    fn planted(n: usize, classes: usize, features: usize, seed: u64) -> PyResult<Self> {
        let cfg = PlantedPartition {
            n,
            classes,
            features,
            train_per_class: (n / (5 * classes.max(1))).clamp(1, 20),
            val: n / 5,
            test: n / 3,
            ..PlantedPartition::default()
        };
        Ok(Self {
            inner: planted_partition(cfg, seed).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_canonical(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.inner.labels.clone()
    }

    #[getter]
    fn splits(&self) -> HashMap<&'static str, Vec<usize>> {
        Split::ALL
            .iter()
            .map(|&s| (s.name(), self.inner.split(s).to_vec()))
            .collect()
    }

    /// Adjacency as `(row, col, value)` triplets.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        triplets(&self.inner.adjacency)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, n={}, f={}, C={}, edges={})",
            self.inner.name,
            self.inner.n(),
            self.inner.num_features(),
            self.inner.num_classes,
            self.inner.num_edges()
        )
    }
}

/// Cumulative and pure hop matrices of a graph.
#[pyclass(name = "HopSet", module = "scalegnn_py")]
struct PyHopSet {
    inner: scalegnn::HopSet,
}

#[pymethods]
impl PyHopSet {
    #[new]
    #[pyo3(signature = (edges, n, k, normalization="per_hop"))]
    fn new(edges: Vec<(usize, usize)>, n: usize, k: usize, normalization: &str) -> PyResult<Self> {
        let norm: Normalization = normalization.parse().map_err(to_py)?;
        let adj = SparseMatrix::from_edges(&edges, n, true).map_err(to_py)?;
        Ok(Self {
            inner: build_hopset_with(&adj, k, norm).map_err(to_py)?,
        })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn pure_nnz(&self) -> Vec<usize> {
        self.inner.pure().iter().map(SparseMatrix::nnz).collect()
    }

    /// Pure hop `i` (1-based) as `(row, col, value)` triplets.
    fn pure(&self, i: usize) -> PyResult<Vec<(usize, usize, f64)>> {
        self.check(i)?;
        Ok(triplets(&self.inner.pure()[i - 1]))
    }

    fn normalized_pure(&self, i: usize) -> PyResult<Vec<(usize, usize, f64)>> {
        self.check(i)?;
        Ok(triplets(&self.inner.normalized_pure()[i - 1]))
    }

    fn cumulative(&self, i: usize) -> PyResult<Vec<(usize, usize, f64)>> {
        self.check(i)?;
        Ok(triplets(&self.inner.cumulative()[i - 1]))
    }
}

impl PyHopSet {
    fn check(&self, i: usize) -> PyResult<()> {
        if i < 1 || i > self.inner.k() {
            return Err(PyValueError::new_err(format!("hop {i} outside 1..={}", self.inner.k())));
        }
        Ok(())
    }
}

/// Outcome of a training run.
#[pyclass(name = "TrainResult", module = "scalegnn_py")]
struct PyTrainResult {
    #[pyo3(get)]
    best_epoch: usize,
    #[pyo3(get)]
    best_val_micro_f1: f64,
    #[pyo3(get)]
    test_micro_f1: f64,
    #[pyo3(get)]
    test_macro_f1: f64,
    #[pyo3(get)]
    sc: usize,
    #[pyo3(get)]
    alpha: Vec<f64>,
    #[pyo3(get)]
    history_tsv: String,
}

/// Trains on `dataset`. Keyword arguments use the config-file keys
/// (`epochs`, `beta`, `hops`, `mode`, ...); values may be numbers or strings.
#[pyfunction]
#[pyo3(signature = (dataset, **options))]
fn train(dataset: &PyDataset, options: Option<HashMap<String, Bound<'_, PyAny>>>) -> PyResult<PyTrainResult> {
    let mut cfg = scalegnn::TrainConfig::default();
    for (k, v) in options.unwrap_or_default() {
        let text = v.str()?.to_string();
        let text = match text.as_str() {
            "True" => "true".to_string(),
            "False" => "false".to_string(),
            _ => text,
        };
        cfg.set(&k, &text).map_err(to_py)?;
    }
    cfg.validate().map_err(to_py)?;
    let ds = &dataset.inner;
    let art = prepare(ds, &cfg).map_err(to_py)?;
    let out = train_with(&art, ds, &cfg).map_err(to_py)?;
    let (mi, ma) = evaluate(&art, &out.params, &out.schedule, ds, Split::Test).map_err(to_py)?;
    Ok(PyTrainResult {
        best_epoch: out.best_epoch,
        best_val_micro_f1: out.best_val_micro_f1,
        test_micro_f1: mi,
        test_macro_f1: ma,
        sc: out.best_sc,
        alpha: out.params.alpha(),
        history_tsv: history_tsv(&out.history, cfg.hops),
    })
}

/// Micro- and macro-F1 of `pred` against `truth` over `index`.
#[pyfunction]
fn micro_macro_f1(pred: Vec<usize>, truth: Vec<i64>, index: Vec<usize>, num_classes: usize) -> PyResult<(f64, f64)> {
    scalegnn::micro_macro_f1(&pred, &truth, &index, num_classes).map_err(to_py)
}

/// Softmax of hop logits.
#[pyfunction]
fn softmax_weights(logits: Vec<f64>) -> Vec<f64> {
    scalegnn::softmax_weights(&logits).alpha
}

/// LCS scores for each stored entry of the hop matrix given by `hop_edges`
/// (row-major order of the symmetric CSR pattern).
#[pyfunction]
fn lcs_scores(
    x: Vec<Vec<f64>>,
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
    hop_edges: Vec<(usize, usize)>,
    n: usize,
) -> PyResult<Vec<(usize, usize, f64)>> {
    let adj = SparseMatrix::from_edges(&hop_edges, n, true).map_err(to_py)?;
    let scores = scalegnn::lcs_scores(&dense(x)?, &dense(w1)?, &dense(w2)?, &adj).map_err(to_py)?;
    Ok(adj.iter().zip(scores).map(|((r, c, _), s)| (r, c, s)).collect())
}

/// Runs the built-in finite-difference gradient check; returns
/// `(max_relative_error, passed)`.
#[pyfunction]
#[pyo3(signature = (precision="f64"))]
fn gradcheck(precision: &str) -> PyResult<(f64, bool)> {
    let precision = precision.parse().map_err(to_py)?;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for fx in default_fixtures(precision).map_err(to_py)? {
        let r = run_gradcheck(&fx).map_err(to_py)?;
        worst = worst.max(r.max_rel_error());
        ok &= r.passed();
    }
    Ok((worst, ok))
}

#[pymodule]
fn scalegnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyHopSet>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(micro_macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_weights, m)?)?;
    m.add_function(wrap_pyfunction!(lcs_scores, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
