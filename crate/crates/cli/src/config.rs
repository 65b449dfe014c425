//! Run configuration: defaults, then the key=value file, then flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use scalegnn::{Error, Result, TrainConfig};

/// Keys accepted in a config file besides the training keys.
pub const RUN_KEYS: &[&str] = &[
    "data",
    "cache",
    "out",
    "checkpoint",
    "split",
    "jobs",
    "axis",
    "values",
    "format",
    "input",
    "output",
    "name",
    "scheme",
    "seeds",
];

/// Flat `key = value` file. Blank lines and `#` comments are ignored.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected key = value",
                path.display(),
                i + 1
            )));
        };
        let key = k.trim().to_string();
        if !TrainConfig::KEYS.contains(&key.as_str()) && !RUN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "{}:{}: unknown key {key:?}",
                path.display(),
                i + 1
            )));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

/// Training flags; each mirrors the config key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long = "epochs")]
    epochs: Option<String>,
    #[arg(long = "learning_rate")]
    learning_rate: Option<String>,
    #[arg(long = "weight_decay")]
    weight_decay: Option<String>,
    #[arg(long = "dropout")]
    dropout: Option<String>,
    #[arg(long = "lambda1")]
    lambda1: Option<String>,
    #[arg(long = "lambda2")]
    lambda2: Option<String>,
    #[arg(long = "beta")]
    beta: Option<String>,
    /// Number of hops K.
    #[arg(long = "hops")]
    hops: Option<String>,
    #[arg(long = "hidden")]
    hidden: Option<String>,
    /// LCS projection width (`auto` = min(f, 64)).
    #[arg(long = "lcs_dim")]
    lcs_dim: Option<String>,
    #[arg(long = "seed")]
    seed: Option<String>,
    /// `full` or `base`.
    #[arg(long = "mode")]
    mode: Option<String>,
    /// `shrink_on_plateau` or `fixed`.
    #[arg(long = "retention")]
    retention: Option<String>,
    /// Neighbor budgets m_2..m_K, comma separated (one value = every hop).
    #[arg(long = "retain")]
    retain: Option<String>,
    #[arg(long = "retention_patience")]
    retention_patience: Option<String>,
    #[arg(long = "retention_step")]
    retention_step: Option<String>,
    /// Early-stopping patience (`auto` = 50 below 50k nodes, else 100).
    #[arg(long = "patience")]
    patience: Option<String>,
    /// `per_hop`, `fused` or `none`.
    #[arg(long = "normalization")]
    normalization: Option<String>,
    /// `f64` or `f32`.
    #[arg(long = "precision")]
    precision: Option<String>,
    #[arg(long = "row_normalize")]
    row_normalize: Option<String>,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("epochs", &self.epochs),
            ("learning_rate", &self.learning_rate),
            ("weight_decay", &self.weight_decay),
            ("dropout", &self.dropout),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("beta", &self.beta),
            ("hops", &self.hops),
            ("hidden", &self.hidden),
            ("lcs_dim", &self.lcs_dim),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("retention", &self.retention),
            ("retain", &self.retain),
            ("retention_patience", &self.retention_patience),
            ("retention_step", &self.retention_step),
            ("patience", &self.patience),
            ("normalization", &self.normalization),
            ("precision", &self.precision),
            ("row_normalize", &self.row_normalize),
        ]
    }

    /// Defaults, overridden by the file, overridden by flags.
    pub fn resolve(&self, file: &BTreeMap<String, String>) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for key in TrainConfig::KEYS {
            if let Some(v) = file.get(*key) {
                cfg.set(key, v)?;
            }
        }
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A run-level setting: the flag if given, else the config-file value.
pub fn pick(flag: &Option<String>, file: &BTreeMap<String, String>, key: &str) -> Option<String> {
    flag.clone().or_else(|| file.get(key).cloned())
}

pub fn require(flag: &Option<String>, file: &BTreeMap<String, String>, key: &str) -> Result<String> {
    pick(flag, file, key).ok_or_else(|| Error::Config(format!("missing required setting --{key}")))
}

/// Resolves a dataset argument: an existing path is used as is, otherwise it
/// is looked up under `$SCALEGNN_DATA`.
pub fn resolve_data_path(arg: &str) -> PathBuf {
    let p = PathBuf::from(arg);
    if p.exists() {
        return p;
    }
    match std::env::var_os("SCALEGNN_DATA") {
        Some(root) => PathBuf::from(root).join(arg),
        None => p,
    }
}

/// `key = value` lines for every training key plus the given run keys.
pub fn render_effective(cfg: &TrainConfig, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in extra {
        out.push_str(&format!("{k} = {v}\n"));
    }
    for (k, v) in cfg.to_pairs() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}
