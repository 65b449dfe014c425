mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use scalegnn::cache::{load_hop_cache_for, write_hop_cache};
use scalegnn::checkpoint::Checkpoint;
use scalegnn::data::{load_canonical, ogb, planetoid, save_canonical, Dataset, Split};
use scalegnn::gradcheck::{default_fixtures, gradcheck};
use scalegnn::hops::{build_hopset_with, HopSet, Normalization};
use scalegnn::sweep::{run_sweep, sweep_tsv, SweepAxis};
use scalegnn::train::{artifacts_from, evaluate, history_tsv, train_with};
use scalegnn::{Error, Precision, TrainConfig};

use crate::config::{pick, read_config_file, render_effective, require, resolve_data_path, TrainFlags};

#[derive(Debug, Parser)]
#[command(name = "scalegnn", version, about = "Pure-hop multi-hop GNN training and evaluation")]
struct Cli {
    /// Flat key = value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a Planetoid or OGB download into the canonical layout.
    Convert {
        /// `planetoid` or `ogb`.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        input: Option<String>,
        #[arg(long)]
        output: Option<String>,
        /// Dataset name (Planetoid: the `<name>` in `ind.<name>.x`).
        #[arg(long)]
        name: Option<String>,
        /// OGB split subdirectory.
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Build the pure-hop matrices and write a hop cache.
    Precompute {
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        cache: Option<String>,
        #[arg(long)]
        hops: Option<String>,
        #[arg(long)]
        normalization: Option<String>,
    },
    /// Train a model; writes checkpoint, history and effective config.
    Train {
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        cache: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        cache: Option<String>,
        /// `train`, `val` or `test`.
        #[arg(long)]
        split: Option<String>,
    },
    /// Train once per value of one hyperparameter and tabulate test F1.
    Sweep {
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// `hops`, `beta`, `lambda1` or `lambda2`.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values.
        #[arg(long)]
        values: Option<String>,
        /// Maximum concurrent runs.
        #[arg(long)]
        jobs: Option<String>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// `f64` or `f32`.
        #[arg(long)]
        precision: Option<String>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            Error::Divergence { .. } => Failure::Check(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    match &cli.command {
        Command::Convert {
            format,
            input,
            output,
            name,
            scheme,
        } => cmd_convert(
            &require(format, &file, "format")?,
            &require(input, &file, "input")?,
            &require(output, &file, "output")?,
            pick(name, &file, "name").as_deref(),
            pick(scheme, &file, "scheme").as_deref(),
        ),
        Command::Precompute {
            data,
            cache,
            hops,
            normalization,
        } => {
            let k: usize = parse_setting(&require(hops, &file, "hops")?, "hops")?;
            let norm: Normalization = match pick(normalization, &file, "normalization") {
                Some(s) => s.parse()?,
                None => Normalization::default(),
            };
            cmd_precompute(
                &require(data, &file, "data")?,
                &require(cache, &file, "cache")?,
                k,
                norm,
            )
        }
        Command::Train {
            data,
            cache,
            out,
            flags,
        } => {
            let cfg = flags.resolve(&file)?;
            cmd_train(
                &require(data, &file, "data")?,
                pick(cache, &file, "cache").as_deref(),
                &require(out, &file, "out")?,
                &cfg,
            )
        }
        Command::Eval {
            data,
            checkpoint,
            cache,
            split,
        } => {
            let split: Split = pick(split, &file, "split").unwrap_or_else(|| "test".into()).parse()?;
            cmd_eval(
                &require(data, &file, "data")?,
                &require(checkpoint, &file, "checkpoint")?,
                pick(cache, &file, "cache").as_deref(),
                split,
            )
        }
        Command::Sweep {
            data,
            out,
            axis,
            values,
            jobs,
            flags,
        } => {
            let cfg = flags.resolve(&file)?;
            let axis: SweepAxis = require(axis, &file, "axis")?.parse()?;
            let values = require(values, &file, "values")?
                .split(',')
                .map(|v| parse_setting::<f64>(v, "values"))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let jobs: usize = match pick(jobs, &file, "jobs") {
                Some(j) => parse_setting(&j, "jobs")?,
                None => 1,
            };
            cmd_sweep(
                &require(data, &file, "data")?,
                &require(out, &file, "out")?,
                &cfg,
                axis,
                &values,
                jobs,
            )
        }
        Command::Gradcheck { precision } => {
            let precision: Precision = match pick(precision, &file, "precision") {
                Some(p) => p.parse()?,
                None => Precision::F64,
            };
            cmd_gradcheck(precision)
        }
    }
}

fn parse_setting<T: std::str::FromStr>(v: &str, key: &str) -> std::result::Result<T, Failure> {
    v.trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("invalid value {v:?} for {key}")))
}

fn load_dataset(arg: &str) -> std::result::Result<Dataset, Failure> {
    Ok(load_canonical(resolve_data_path(arg))?)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn cmd_convert(format: &str, input: &str, output: &str, name: Option<&str>, scheme: Option<&str>) -> Outcome {
    let input = resolve_data_path(input);
    let ds = match format {
        "planetoid" => planetoid::convert_planetoid(&input, name)?,
        "ogb" => ogb::convert_ogb(&input, name, scheme)?,
        other => {
            return Err(Failure::Usage(format!(
                "unknown format {other:?} (expected planetoid or ogb)"
            )))
        }
    };
    save_canonical(&ds, output)?;
    println!(
        "{}: n = {}, f = {}, C = {}, edges = {}, splits = {}/{}/{}",
        ds.name,
        ds.n(),
        ds.num_features(),
        ds.num_classes,
        ds.num_edges(),
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len()
    );
    Ok(())
}

fn cmd_precompute(data: &str, cache: &str, k: usize, norm: Normalization) -> Outcome {
    if k < 1 {
        return Err(Failure::Usage("hops must be >= 1".into()));
    }
    let ds = load_dataset(data)?;
    let start = Instant::now();
    let hopset = build_hopset_with(&ds.adjacency, k, norm)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_hop_cache(cache, &hopset, &ds.adjacency.structure_hash())?;
    for (i, p) in hopset.pure().iter().enumerate() {
        println!("hop {}\tnnz {}", i + 1, p.nnz());
    }
    println!("precompute wall time {elapsed:.3}s");
    Ok(())
}

fn hopset_for(
    ds: &Dataset,
    cache: Option<&str>,
    k: usize,
    norm: Normalization,
) -> std::result::Result<HopSet, Failure> {
    match cache {
        Some(path) => {
            let h = load_hop_cache_for(path, &ds.adjacency)?;
            if h.k() != k {
                return Err(Failure::Usage(format!(
                    "hop cache has K = {}, configuration asks for {k}",
                    h.k()
                )));
            }
            Ok(h.with_normalization(norm))
        }
        None => Ok(build_hopset_with(&ds.adjacency, k, norm)?),
    }
}

fn cmd_train(data: &str, cache: Option<&str>, out: &str, cfg: &TrainConfig) -> Outcome {
    let ds = load_dataset(data)?;
    let out = PathBuf::from(out);
    fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    let mut extra = vec![("data", data.to_string())];
    if let Some(c) = cache {
        extra.push(("cache", c.to_string()));
    }
    write_file(&out.join("config.txt"), &render_effective(cfg, &extra))?;

    let hopset = hopset_for(&ds, cache, cfg.hops, cfg.normalization)?;
    let art = artifacts_from(hopset, &ds, cfg)?;
    let start = Instant::now();
    let result = train_with(&art, &ds, cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_file(&out.join("history.tsv"), &history_tsv(&result.history, cfg.hops))?;
    let ck = Checkpoint {
        params: result.params.clone(),
        schedule: result.schedule.clone(),
        normalization: cfg.normalization,
        precision: cfg.precision,
        row_normalize: cfg.row_normalize,
        seed: cfg.seed,
        best_epoch: result.best_epoch,
        graph_hash: ds.adjacency.structure_hash(),
    };
    ck.save(out.join("checkpoint.bin"))?;
    let (val_mi, val_ma) = evaluate(&art, &result.params, &result.schedule, &ds, Split::Val)?;
    let (test_mi, test_ma) = evaluate(&art, &result.params, &result.schedule, &ds, Split::Test)?;
    println!(
        "best epoch {} of {} ({elapsed:.2}s)",
        result.best_epoch,
        result.history.len()
    );
    println!("val\tmicro-F1 {}\tmacro-F1 {}", pct(val_mi), pct(val_ma));
    println!("test\tmicro-F1 {}\tmacro-F1 {}", pct(test_mi), pct(test_ma));
    Ok(())
}

fn cmd_eval(data: &str, checkpoint: &str, cache: Option<&str>, split: Split) -> Outcome {
    let ds = load_dataset(data)?;
    let ck = Checkpoint::load(checkpoint)?;
    let actual = ds.adjacency.structure_hash();
    if ck.graph_hash != actual {
        return Err(Error::StaleCache {
            cached: hex_prefix(&ck.graph_hash),
            actual: hex_prefix(&actual),
        }
        .into());
    }
    let dims = ck.params.dims();
    if dims.f != ds.num_features() || dims.classes != ds.num_classes {
        return Err(Failure::Data(format!(
            "checkpoint expects f = {}, C = {}; dataset has f = {}, C = {}",
            dims.f,
            dims.classes,
            ds.num_features(),
            ds.num_classes
        )));
    }
    let cfg = TrainConfig {
        hops: dims.k,
        normalization: ck.normalization,
        precision: ck.precision,
        row_normalize: ck.row_normalize,
        ..TrainConfig::default()
    };
    let hopset = hopset_for(&ds, cache, dims.k, ck.normalization)?;
    let art = artifacts_from(hopset, &ds, &cfg)?;
    let (mi, ma) = evaluate(&art, &ck.params, &ck.schedule, &ds, split)?;
    println!("{split}\tmicro-F1 {}\tmacro-F1 {}", pct(mi), pct(ma));
    Ok(())
}

fn hex_prefix(h: &[u8; 32]) -> String {
    h[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_sweep(data: &str, out: &str, cfg: &TrainConfig, axis: SweepAxis, values: &[f64], jobs: usize) -> Outcome {
    let ds = load_dataset(data)?;
    let out = PathBuf::from(out);
    fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    let list = values.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let extra = [
        ("data", data.to_string()),
        ("axis", axis.to_string()),
        ("values", list),
        ("jobs", jobs.to_string()),
    ];
    write_file(&out.join("config.txt"), &render_effective(cfg, &extra))?;
    let rows = run_sweep(&ds, cfg, axis, values, jobs)?;
    let tsv = sweep_tsv(&rows);
    write_file(&out.join("sweep.tsv"), &tsv)?;
    for r in &rows {
        println!(
            "{axis} = {}\tmicro-F1 {}\tmacro-F1 {}\t{:.2}s",
            r.value,
            pct(r.test_micro_f1),
            pct(r.test_macro_f1),
            r.wall_time
        );
    }
    Ok(())
}

fn cmd_gradcheck(precision: Precision) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (i, fx) in default_fixtures(precision)?.iter().enumerate() {
        let report = gradcheck(fx)?;
        for w in &report.warnings {
            if i == 0 {
                eprintln!("warning: {w}");
            }
        }
        for b in &report.blocks {
            println!(
                "fixture {i}\t{:<10}\trel {:.3e}\tabs {:.3e}",
                b.name, b.rel_error, b.abs_error
            );
        }
        worst = worst.max(report.max_rel_error());
        ok &= report.passed();
    }
    println!("max relative error {worst:.3e} (threshold 1e-4)");
    if ok {
        println!("gradcheck PASS");
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradcheck FAIL: max relative error {worst:.3e}"
        )))
    }
}
