//! Acceptance report. Prints one `PASS`, `FAIL` or `BLOCKED` line per
//! criterion and exits non-zero on any failure.
//!
//! Criteria that need the citation datasets look for canonical directories
//! `$SCALEGNN_DATA/{cora,citeseer,pubmed}` (see `scalegnn convert`). Without
//! them those criteria report `BLOCKED`; set `SCALEGNN_REQUIRE_DATA=1` to make
//! that an error.

use std::cell::OnceCell;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use scalegnn::data::Split;
use scalegnn::fixtures::{planted_partition, random_dense, random_graph, PlantedPartition};
use scalegnn::gradcheck::{default_fixtures, gradcheck};
use scalegnn::sweep::{run_sweep, SweepAxis};
use scalegnn::train::{evaluate, history_tsv, prepare, train_with};
use scalegnn::{
    build_hopset, lcs_scores, load_canonical, Dataset, DenseMatrix, Mode, Precision, SparseMatrix, TrainConfig,
};

enum Status {
    Pass(String),
    Fail(String),
    Blocked(String),
}

fn check(ok: bool, detail: String) -> Status {
    if ok {
        Status::Pass(detail)
    } else {
        Status::Fail(detail)
    }
}

/// A real dataset together with its (lazily computed) tuned configuration.
struct Real {
    ds: Dataset,
    tuned: OnceCell<Tuned>,
}

impl Real {
    fn tuned(&self) -> &Tuned {
        self.tuned.get_or_init(|| tune(&self.ds))
    }
}

fn dataset(name: &str) -> Option<Real> {
    let root = PathBuf::from(std::env::var_os("SCALEGNN_DATA")?);
    let dir = root.join(name);
    if !dir.is_dir() {
        return None;
    }
    let ds = load_canonical(&dir).unwrap_or_else(|e| panic!("{}: {e}", dir.display()));
    Some(Real {
        ds,
        tuned: OnceCell::new(),
    })
}

fn missing(names: &[&str]) -> Status {
    Status::Blocked(format!("needs {} under $SCALEGNN_DATA", names.join(", ")))
}

struct Tuned {
    config: TrainConfig,
    test_micro: f64,
    wall: f64,
}

fn train_and_test(ds: &Dataset, cfg: &TrainConfig) -> (f64, f64, f64) {
    let start = Instant::now();
    let art = prepare(ds, cfg).unwrap();
    let out = train_with(&art, ds, cfg).unwrap();
    let wall = start.elapsed().as_secs_f64();
    let (test, _) = evaluate(&art, &out.params, &out.schedule, ds, Split::Test).unwrap();
    (out.best_val_micro_f1, test, wall)
}

/// Small grid search over dropout, weight decay and learning rate, selected
/// by validation micro-F1.
fn tune(ds: &Dataset) -> Tuned {
    let mut best: Option<(f64, Tuned)> = None;
    for dropout in [0.3, 0.5] {
        for weight_decay in [5e-4, 5e-3] {
            for learning_rate in [0.005, 0.01] {
                let cfg = TrainConfig {
                    dropout,
                    weight_decay,
                    learning_rate,
                    row_normalize: true,
                    ..TrainConfig::default()
                };
                let (val, test_micro, wall) = train_and_test(ds, &cfg);
                if best.as_ref().is_none_or(|(v, _)| val > *v) {
                    best = Some((
                        val,
                        Tuned {
                            config: cfg,
                            test_micro,
                            wall,
                        },
                    ));
                }
            }
        }
    }
    best.unwrap().1
}

fn reproduction(real: &Real, threshold: f64) -> (bool, String) {
    let t = real.tuned();
    let ok = t.test_micro * 100.0 >= threshold && t.wall <= 600.0;
    let detail = format!(
        "{} test micro-F1 {:.2}% (need {threshold}%), {:.1}s per run",
        real.ds.name,
        t.test_micro * 100.0,
        t.wall
    );
    (ok, detail)
}

fn criterion_1(cora: Option<&Real>) -> Status {
    let Some(cora) = cora else { return missing(&["cora"]) };
    let (ok, detail) = reproduction(cora, 82.0);
    check(ok, detail)
}

fn criterion_2(citeseer: Option<&Real>, pubmed: Option<&Real>) -> Status {
    let (Some(citeseer), Some(pubmed)) = (citeseer, pubmed) else {
        return missing(&["citeseer", "pubmed"]);
    };
    let (a, da) = reproduction(citeseer, 71.5);
    let (b, db) = reproduction(pubmed, 79.5);
    check(a && b, format!("{da}; {db}"))
}

fn criterion_3(sets: &[Option<&Real>]) -> Status {
    if sets.iter().any(Option::is_none) {
        return missing(&["cora", "citeseer", "pubmed"]);
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for real in sets.iter().flatten() {
        let (ds, full) = (&real.ds, real.tuned());
        let base_cfg = TrainConfig {
            mode: Mode::Base,
            ..full.config.clone()
        };
        let (_, base_test, _) = train_and_test(ds, &base_cfg);
        // same number of epochs for both modes, so early stopping does not skew the timing
        let timed = |mode| {
            let cfg = TrainConfig {
                mode,
                epochs: 200,
                patience: Some(200),
                ..full.config.clone()
            };
            train_and_test(ds, &cfg).2
        };
        let (full_wall, base_wall) = (timed(Mode::Full), timed(Mode::Base));
        ok &= full.test_micro >= base_test && base_wall <= full_wall;
        parts.push(format!(
            "{}: full {:.2}% / {:.1}s, base {:.2}% / {:.1}s per 200 epochs",
            ds.name,
            full.test_micro * 100.0,
            full_wall,
            base_test * 100.0,
            base_wall
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_4() -> Status {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for fx in default_fixtures(Precision::F64).unwrap() {
        let report = gradcheck(&fx).unwrap();
        worst = worst.max(report.max_rel_error());
        ok &= report.passed() && report.max_rel_error() < 1e-4;
    }
    check(ok, format!("max relative error {worst:.3e} over 3 fixtures"))
}

fn criterion_5() -> Status {
    let mut violations = 0;
    for seed in 0..200u64 {
        let n = 2 + (seed as usize * 7) % 63;
        let p = [0.02, 0.05, 0.1, 0.3][seed as usize % 4];
        let g = random_graph(n, p, seed);
        let k = 1 + seed as usize % 6;
        let h = build_hopset(&g, k).unwrap();
        let mut seen = BTreeSet::new();
        for i in 0..k {
            for (r, c, _) in h.pure()[i].iter() {
                if r == c || !seen.insert((r, c)) {
                    violations += 1;
                }
            }
        }
        let reach: BTreeSet<_> = h.cumulative()[k - 1]
            .iter()
            .filter(|(r, c, _)| r != c)
            .map(|(r, c, _)| (r, c))
            .collect();
        if reach != seen {
            violations += 1;
        }
    }
    check(violations == 0, format!("{violations} violations on 200 graphs"))
}

fn brute_force_lcs(x: &DenseMatrix, w1: &DenseMatrix, w2: &DenseMatrix, g: &SparseMatrix) -> Vec<f64> {
    let n = g.n();
    let d = w1.rows();
    let p1 = x.matmul(&w1.transpose()).unwrap();
    let p2 = x.matmul(&w2.transpose()).unwrap();
    let mut out = Vec::new();
    for v in 0..n {
        let logits: Vec<f64> = (0..n)
            .filter(|&u| g.contains(v, u))
            .map(|u| (0..d).map(|a| p1.get(v, a) * p2.get(u, a)).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        out.extend(logits.iter().map(|l| l.exp() / z));
    }
    out
}

fn criterion_6() -> Status {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let n = 2 + seed as usize % 15;
        let g = random_graph(n, 0.3, seed);
        let f = 1 + seed as usize % 6;
        let d = 1 + seed as usize % 4;
        let x = random_dense(n, f, seed);
        let w1 = random_dense(d, f, seed + 1000);
        let w2 = random_dense(d, f, seed + 2000);
        let fast = lcs_scores(&x, &w1, &w2, &g).unwrap();
        let slow = brute_force_lcs(&x, &w1, &w2, &g);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-10, format!("max deviation {worst:.3e} on 100 instances"))
}

fn criterion_7(cora: Option<&Real>) -> Status {
    let Some(cora) = cora else { return missing(&["cora"]) };
    let values: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let rows = run_sweep(&cora.ds, &cora.tuned().config, SweepAxis::Beta, &values, 1).unwrap();
    let best = rows
        .iter()
        .max_by(|a, b| a.test_micro_f1.total_cmp(&b.test_micro_f1))
        .unwrap();
    let curve: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.test_micro_f1 * 100.0)).collect();
    check(
        best.value > 0.1 && best.value < 0.9,
        format!("peak at beta {} ({})", best.value, curve.join(" ")),
    )
}

fn criterion_8(cora: Option<&Real>) -> Status {
    let Some(cora) = cora else { return missing(&["cora"]) };
    let rows = run_sweep(
        &cora.ds,
        &cora.tuned().config,
        SweepAxis::Hops,
        &[2.0, 4.0, 6.0, 8.0, 10.0],
        1,
    )
    .unwrap();
    let scores: Vec<f64> = rows.iter().map(|r| r.test_micro_f1 * 100.0).collect();
    let hi = scores.iter().cloned().fold(f64::MIN, f64::max);
    let lo = scores.iter().cloned().fold(f64::MAX, f64::min);
    check(hi - lo <= 5.0, format!("spread {:.2} points over K = 2..10", hi - lo))
}

/// sc is logged per epoch; it must not grow at any retention update.
fn sc_non_increasing(ds: &Dataset, cfg: &TrainConfig) -> (bool, usize) {
    let out = train_with(&prepare(ds, cfg).unwrap(), ds, cfg).unwrap();
    let mut updates = 0;
    let mut ok = true;
    for w in out.history.windows(2) {
        if w[1].retain != w[0].retain {
            updates += 1;
            ok &= w[1].loss.sc <= w[0].loss.sc;
        }
    }
    (ok, updates)
}

fn criterion_9(cora: Option<&Real>) -> Status {
    let synthetic = planted_partition(PlantedPartition::default(), 9).unwrap();
    let cfg = TrainConfig {
        epochs: 150,
        retain: vec![8],
        retention_patience: 5,
        patience: Some(1000),
        ..TrainConfig::default()
    };
    let (mono, updates) = sc_non_increasing(&synthetic, &cfg);
    if !mono || updates == 0 {
        return Status::Fail(format!(
            "sc grew at a retention update or none happened ({updates} updates)"
        ));
    }
    let Some(Real { ds: cora, .. }) = cora else {
        return Status::Blocked(format!(
            "sc non-increasing over {updates} updates on synthetic data; lambda2 comparison needs cora"
        ));
    };
    let (mono_cora, cora_updates) = sc_non_increasing(cora, &cfg);
    let sc_at = |lambda2: f64| {
        let c = TrainConfig { lambda2, ..cfg.clone() };
        let art = prepare(cora, &c).unwrap();
        train_with(&art, cora, &c).unwrap().best_sc
    };
    let (strong, weak) = (sc_at(0.05), sc_at(0.0005));
    check(
        mono_cora && strong <= weak,
        format!("{cora_updates} updates monotone; retained {strong} at 0.05 vs {weak} at 0.0005"),
    )
}

fn criterion_10(pubmed: Option<&Real>) -> Status {
    let Some(Real { ds: pubmed, .. }) = pubmed else {
        return missing(&["pubmed"]);
    };
    let mut times = Vec::new();
    for k in [1, 2, 4, 8] {
        let start = Instant::now();
        build_hopset(&pubmed.adjacency, k).unwrap();
        times.push(start.elapsed().as_secs_f64());
    }
    let ratio = times[3] / times[2].max(1e-9);
    check(ratio < 4.0, format!("t(8)/t(4) = {ratio:.2}, times {times:.2?}"))
}

fn criterion_11() -> Status {
    let ds = planted_partition(PlantedPartition::default(), 21).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = || {
        let out = train_with(&prepare(&ds, &cfg).unwrap(), &ds, &cfg).unwrap();
        history_tsv(&out.history, cfg.hops)
    };
    let (a, b) = (run(), run());
    check(a == b, format!("{} history bytes compared", a.len()))
}

type Criterion<'a> = Box<dyn Fn() -> Status + 'a>;

fn main() -> ExitCode {
    let cora = dataset("cora");
    let citeseer = dataset("citeseer");
    let pubmed = dataset("pubmed");
    let require = std::env::var("SCALEGNN_REQUIRE_DATA").is_ok_and(|v| v == "1");

    let criteria: Vec<(&str, Criterion)> = vec![
        ("1", Box::new(|| criterion_1(cora.as_ref()))),
        ("2", Box::new(|| criterion_2(citeseer.as_ref(), pubmed.as_ref()))),
        (
            "3",
            Box::new(|| criterion_3(&[cora.as_ref(), citeseer.as_ref(), pubmed.as_ref()])),
        ),
        ("4", Box::new(criterion_4)),
        ("5", Box::new(criterion_5)),
        ("6", Box::new(criterion_6)),
        ("7", Box::new(|| criterion_7(cora.as_ref()))),
        ("8", Box::new(|| criterion_8(cora.as_ref()))),
        ("9", Box::new(|| criterion_9(cora.as_ref()))),
        ("10", Box::new(|| criterion_10(pubmed.as_ref()))),
        ("11", Box::new(criterion_11)),
    ];

    let mut failed = false;
    for (id, run) in criteria {
        match run() {
            Status::Pass(d) => println!("criterion {id}: PASS ({d})"),
            Status::Fail(d) => {
                failed = true;
                println!("criterion {id}: FAIL ({d})");
            }
            Status::Blocked(d) => {
                failed |= require;
                println!("criterion {id}: BLOCKED ({d})");
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
