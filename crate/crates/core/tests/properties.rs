use std::collections::{BTreeSet, VecDeque};
use std::fs;

use proptest::collection::vec;
use proptest::prelude::*;
use scalegnn::data::{load_canonical, save_canonical, Dataset, Splits, EDGES_FILE};
use scalegnn::fixtures::{planted_partition, PlantedPartition};
use scalegnn::lcs::top_m_select;
use scalegnn::sparse::{add, spmm_dense, support_minus, support_union};
use scalegnn::train::{history_tsv, train_loop};
use scalegnn::{
    bool_spmm, build_hopset, lcs_scores, micro_macro_f1, softmax_weights, sym_normalize, DenseMatrix, Error,
    SparseMatrix, TrainConfig,
};

fn graph_strategy(max_n: usize) -> impl Strategy<Value = SparseMatrix> {
    (1..=max_n).prop_flat_map(|n| {
        vec((0..n, 0..n), 0..(3 * n)).prop_map(move |edges| SparseMatrix::from_edges(&edges, n, true).unwrap())
    })
}

fn square_strategy(max_n: usize) -> impl Strategy<Value = SparseMatrix> {
    (1..=max_n).prop_flat_map(triplets_of)
}

fn triplets_of(n: usize) -> impl Strategy<Value = SparseMatrix> {
    vec((0..n, 0..n, -2.0f64..2.0), 0..(3 * n)).prop_map(move |t| SparseMatrix::from_triplets(n, &t).unwrap())
}

fn square_triple(max_n: usize) -> impl Strategy<Value = (SparseMatrix, SparseMatrix, SparseMatrix)> {
    (1..=max_n).prop_flat_map(|n| (triplets_of(n), triplets_of(n), triplets_of(n)))
}

fn support(m: &SparseMatrix) -> BTreeSet<(usize, usize)> {
    m.iter().map(|(r, c, _)| (r, c)).collect()
}

fn bfs_distances(adj: &SparseMatrix) -> Vec<Vec<Option<usize>>> {
    let n = adj.n();
    (0..n)
        .map(|s| {
            let mut dist = vec![None; n];
            dist[s] = Some(0);
            let mut q = VecDeque::from([s]);
            while let Some(v) = q.pop_front() {
                for &u in adj.row(v).0 {
                    if dist[u].is_none() {
                        dist[u] = Some(dist[v].unwrap() + 1);
                        q.push_back(u);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Cholesky succeeds iff the symmetric matrix is positive definite.
fn positive_definite(m: &DenseMatrix) -> bool {
    let n = m.rows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = m.get(i, i) - s;
                if d <= 0.0 {
                    return false;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (m.get(i, j) - s) / l[j * n + j];
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csr_operations_stay_canonical((a, b, _) in square_triple(12)) {
        for m in [
            bool_spmm(&a, &b).unwrap(),
            support_union(&a, &b).unwrap(),
            support_minus(&a, &b).unwrap(),
            add(&a, &b).unwrap(),
            a.transpose(),
            a.without_diagonal(),
            sym_normalize(&a.binarized(), true),
        ] {
            prop_assert!(m.validate().is_ok());
        }
    }

    #[test]
    fn bool_spmm_matches_dense_and_associates((a, b, c) in square_triple(10)) {
        let n = a.n();
        let ab = bool_spmm(&a, &b).unwrap();
        let (da, db) = (a.to_dense(), b.to_dense());
        for i in 0..n {
            for j in 0..n {
                let any = (0..n).any(|k| da.get(i, k) != 0.0 && db.get(k, j) != 0.0);
                prop_assert_eq!(ab.contains(i, j), any);
            }
        }
        let left = bool_spmm(&ab, &c).unwrap();
        let right = bool_spmm(&a, &bool_spmm(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(support(&left), support(&right));
    }

    #[test]
    fn spmm_matches_dense(a in square_strategy(12), seed in 0u64..1000) {
        let x = scalegnn::fixtures::random_dense(a.n(), 3, seed);
        let sparse = spmm_dense(&a, &x).unwrap();
        let dense = a.to_dense().matmul(&x).unwrap();
        for (s, d) in sparse.data().iter().zip(dense.data()) {
            prop_assert!((s - d).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalized_spectrum_within_unit_interval(g in graph_strategy(14), self_loops in any::<bool>()) {
        let m = sym_normalize(&g, self_loops).to_dense();
        let n = m.rows();
        for sign in [1.0, -1.0] {
            let mut shifted = DenseMatrix::identity(n);
            shifted.scale(1.0 + 1e-9);
            shifted.add_scaled(&m, sign).unwrap();
            prop_assert!(positive_definite(&shifted));
        }
    }

    #[test]
    fn pure_hops_match_shortest_paths(g in graph_strategy(16), k in 1usize..6) {
        let h = build_hopset(&g, k).unwrap();
        let dist = bfs_distances(&g);
        let mut union = BTreeSet::new();
        for i in 1..=k {
            let p = h.pure()[i - 1].clone();
            prop_assert_eq!(p.diagonal_nnz(), 0);
            for (r, c, _) in p.iter() {
                prop_assert_eq!(dist[r][c], Some(i));
                prop_assert!(union.insert((r, c)), "hops overlap at ({}, {})", r, c);
            }
            let cum: BTreeSet<_> = support(&h.cumulative()[i - 1]).into_iter().filter(|(r, c)| r != c).collect();
            prop_assert_eq!(&cum, &union);
        }
        let expected: BTreeSet<_> = (0..g.n())
            .flat_map(|r| (0..g.n()).map(move |c| (r, c)))
            .filter(|&(r, c)| r != c && dist[r][c].is_some_and(|d| d <= k))
            .collect();
        prop_assert_eq!(union, expected);
    }

    #[test]
    fn hops_are_permutation_equivariant(g in graph_strategy(12), k in 1usize..4, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..g.n()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let h = build_hopset(&g, k).unwrap();
        let hp = build_hopset(&g.permuted(&perm).unwrap(), k).unwrap();
        for i in 0..k {
            prop_assert_eq!(&hp.pure()[i], &h.pure()[i].permuted(&perm).unwrap());
        }
    }

    #[test]
    fn lcs_scores_match_brute_force(
        g in graph_strategy(10),
        seed in 0u64..10_000,
        f in 1usize..5,
        d_f in 1usize..4,
    ) {
        let n = g.n();
        let x = scalegnn::fixtures::random_dense(n, f, seed);
        let w1 = scalegnn::fixtures::random_dense(d_f, f, seed + 1);
        let w2 = scalegnn::fixtures::random_dense(d_f, f, seed + 2);
        let scores = lcs_scores(&x, &w1, &w2, &g).unwrap();
        let proj = |w: &DenseMatrix, v: usize| -> Vec<f64> {
            (0..d_f).map(|a| (0..f).map(|b| w.get(a, b) * x.get(v, b)).sum()).collect()
        };
        let mut k = 0;
        for v in 0..n {
            let cols = g.row(v).0;
            let logits: Vec<f64> = cols
                .iter()
                .map(|&u| proj(&w1, v).iter().zip(proj(&w2, u)).map(|(a, b)| a * b).sum::<f64>() / (d_f as f64).sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for l in logits {
                prop_assert!((scores[k] - l.exp() / z).abs() < 1e-10);
                k += 1;
            }
        }
    }

    #[test]
    fn top_m_is_monotone(g in graph_strategy(12), seed in 0u64..1000, m in 1usize..6) {
        let scores = scalegnn::fixtures::random_dense(1, g.nnz(), seed).into_vec();
        let small = top_m_select(&g, &scores, m);
        let large = top_m_select(&g, &scores, m + 1);
        prop_assert!(small.iter().zip(&large).all(|(s, l)| !s || *l));
        for v in 0..g.n() {
            let range = g.row_offsets()[v]..g.row_offsets()[v + 1];
            let kept = small[range].iter().filter(|k| **k).count();
            prop_assert_eq!(kept, m.min(g.row_len(v)));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(logits in vec(-20.0f64..20.0, 1..8), shift in -100.0f64..100.0) {
        let a = softmax_weights(&logits).alpha;
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let b = softmax_weights(&shifted).alpha;
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_is_permutation_invariant(
        pairs in vec((0usize..4, 0i64..4), 1..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<i64> = pairs.iter().map(|p| p.1).collect();
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        let a = micro_macro_f1(&pred, &truth, &idx, 4).unwrap();
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = micro_macro_f1(&pred, &truth, &idx, 4).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn canonical_round_trip(g in graph_strategy(12), seed in 0u64..1000, classes in 1usize..4) {
        let n = g.n();
        let features = scalegnn::fixtures::random_dense(n, 3, seed);
        let labels: Vec<i64> = (0..n).map(|i| if i % 4 == 3 { -1 } else { (i % classes) as i64 }).collect();
        let labeled: Vec<usize> = (0..n).filter(|&i| labels[i] >= 0).collect();
        let third = labeled.len() / 3;
        let splits = Splits {
            train: labeled[..third].to_vec(),
            val: labeled[third..2 * third].to_vec(),
            test: labeled[2 * third..].to_vec(),
        };
        let ds = Dataset::new("prop", g, features, labels, classes, splits).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_canonical(&ds, dir.path()).unwrap();
        let back = load_canonical(dir.path()).unwrap();
        prop_assert_eq!(&back, &ds);
    }

    #[test]
    fn loader_rejects_corrupted_symmetry(g in graph_strategy(12), pick in any::<prop::sample::Index>()) {
        prop_assume!(g.nnz() > 0);
        let n = g.n();
        let ds = Dataset::new(
            "sym",
            g.clone(),
            DenseMatrix::zeros(n, 1),
            vec![-1; n],
            1,
            Splits::default(),
        )
        .unwrap();
        prop_assume!(ds.adjacency.nnz() > 0);
        let dir = tempfile::tempdir().unwrap();
        save_canonical(&ds, dir.path()).unwrap();
        let entries: Vec<(usize, usize)> = ds.adjacency.iter().map(|(r, c, _)| (r, c)).collect();
        let drop = pick.index(entries.len());
        let text: String = entries
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop)
            .map(|(_, (r, c))| format!("{r}\t{c}\n"))
            .collect();
        fs::write(dir.path().join(EDGES_FILE), text).unwrap();
        let is_asymmetric = matches!(load_canonical(dir.path()), Err(Error::Asymmetric { .. }));
        prop_assert!(is_asymmetric);
    }
}

fn small_dataset() -> Dataset {
    planted_partition(
        PlantedPartition {
            n: 120,
            val: 30,
            test: 50,
            ..PlantedPartition::default()
        },
        5,
    )
    .unwrap()
}

#[test]
fn training_is_deterministic() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        epochs: 25,
        hidden: 16,
        ..TrainConfig::default()
    };
    let a = train_loop(&ds, &cfg).unwrap();
    let b = train_loop(&ds, &cfg).unwrap();
    assert_eq!(history_tsv(&a.history, 3), history_tsv(&b.history, 3));
    assert_eq!(a.params, b.params);
}

#[test]
fn retention_shrinks_and_sc_never_grows() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        epochs: 120,
        hidden: 16,
        retain: vec![6],
        retention_patience: 3,
        patience: Some(1000),
        ..TrainConfig::default()
    };
    let out = train_loop(&ds, &cfg).unwrap();
    let m: Vec<usize> = out.history.iter().map(|r| r.retain[0]).collect();
    let sc: Vec<f64> = out.history.iter().map(|r| r.loss.sc).collect();
    assert!(m.windows(2).all(|w| w[1] <= w[0]));
    assert!(m.last() < m.first(), "no retention update happened: {m:?}");
    assert!(sc.windows(2).all(|w| w[1] <= w[0]), "{sc:?}");
}
