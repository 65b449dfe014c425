//! Small deterministic graphs and synthetic datasets for tests, gradient
//! checks and smoke runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Splits};
use crate::dense::DenseMatrix;
use crate::error::Result;
use crate::sparse::SparseMatrix;

/// Path `0 - 1 - ... - (n-1)`.
pub fn path_graph(n: usize) -> SparseMatrix {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    SparseMatrix::from_edges(&edges, n, true).expect("valid path")
}

pub fn cycle_graph(n: usize) -> SparseMatrix {
    let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    if n > 2 {
        edges.push((n - 1, 0));
    }
    SparseMatrix::from_edges(&edges, n, true).expect("valid cycle")
}

pub fn complete_graph(n: usize) -> SparseMatrix {
    let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    SparseMatrix::from_edges(&edges, n, true).expect("valid clique")
}

/// Two `k`-cliques joined by a single bridge edge `(k-1, k)`.
pub fn two_cliques(k: usize) -> SparseMatrix {
    let mut edges = Vec::new();
    for base in [0, k] {
        for i in 0..k {
            for j in i + 1..k {
                edges.push((base + i, base + j));
            }
        }
    }
    if k > 0 {
        edges.push((k - 1, k));
    }
    SparseMatrix::from_edges(&edges, 2 * k, true).expect("valid cliques")
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_graph(n: usize, p: f64, seed: u64) -> SparseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    SparseMatrix::from_edges(&edges, n, true).expect("valid random graph")
}

/// Dense `rows × cols` matrix with entries uniform in `[-1, 1)`.
pub fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite")
}

/// Parameters of [`planted_partition`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedPartition {
    pub n: usize,
    pub classes: usize,
    pub features: usize,
    /// Expected within-class degree.
    pub degree_in: f64,
    /// Expected cross-class degree.
    pub degree_out: f64,
    /// Standard deviation of the feature noise around each class centroid.
    pub noise: f64,
    pub train_per_class: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            n: 300,
            classes: 3,
            features: 16,
            degree_in: 4.0,
            degree_out: 1.0,
            noise: 1.5,
            train_per_class: 10,
            val: 60,
            test: 120,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Stochastic block model with noisy class-centroid features and a
/// Planetoid-style split (`train_per_class` per class, then val, then test).
pub fn planted_partition(cfg: PlantedPartition, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n;
    let labels: Vec<i64> = (0..n).map(|i| (i % cfg.classes) as i64).collect();
    let per_class = n as f64 / cfg.classes as f64;
    let p_in = (cfg.degree_in / per_class).min(1.0);
    let p_out = (cfg.degree_out / (n as f64 - per_class).max(1.0)).min(1.0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let centroids: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.features).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * cfg.features);
    for &y in &labels {
        for c in &centroids[y as usize] {
            data.push(c + cfg.noise * gaussian(&mut rng));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut train = Vec::new();
    let mut taken = vec![0usize; cfg.classes];
    let mut rest = Vec::new();
    for i in order {
        let y = labels[i] as usize;
        if taken[y] < cfg.train_per_class {
            taken[y] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    let val: Vec<usize> = rest.iter().copied().take(cfg.val).collect();
    let test: Vec<usize> = rest.iter().copied().skip(cfg.val).take(cfg.test).collect();
    Dataset::new(
        format!("planted-{seed}"),
        SparseMatrix::from_edges(&edges, n, true)?,
        DenseMatrix::from_vec(n, cfg.features, data)?,
        labels,
        cfg.classes,
        Splits { train, val, test },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(path_graph(4).nnz(), 6);
        assert_eq!(cycle_graph(5).nnz(), 10);
        assert_eq!(complete_graph(4).nnz(), 12);
        assert_eq!(two_cliques(3).nnz(), 14);
        let g = random_graph(20, 0.3, 7);
        assert!(g.is_symmetric());
        assert_eq!(g, random_graph(20, 0.3, 7));
    }

    #[test]
    fn planted_partition_is_valid_and_deterministic() {
        let a = planted_partition(PlantedPartition::default(), 3).unwrap();
        let b = planted_partition(PlantedPartition::default(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.splits.train.len(), 30);
        assert_eq!(a.splits.val.len(), 60);
        assert_eq!(a.splits.test.len(), 120);
    }
}
