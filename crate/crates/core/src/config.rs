//! Flat key-value run and probe configuration.
//!
//! Configs are TOML tables of scalar keys. Values are resolved in three
//! layers, later ones winning: built-in defaults, the config file, then
//! command-line flags. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::federation::{Algorithm, FederationConfig, PartitionMode};
use crate::models::BlobSpec;
use crate::projection::SubspaceKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Quadratic,
    #[default]
    Logistic,
    Mlp,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ModelKind::Quadratic),
            "logistic" => Ok(ModelKind::Logistic),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::config(
                "model",
                format!("unknown model `{other}` (expected quadratic, logistic or mlp)"),
            )),
        }
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub dimension: Option<usize>,
    pub subspaces: Option<usize>,
    pub topk: Option<usize>,
    pub local_iters: Option<usize>,
    pub ksub_time_varying: bool,
    pub projection: SubspaceKind,
    pub clients: usize,
    pub per_round: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub partition: PartitionMode,

    pub model: ModelKind,
    /// Hidden width of the MLP.
    pub hidden: usize,

    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub center_norm: f64,
    pub noise_std: f64,
    pub separable: bool,
    pub data_seed: u64,

    /// IDX files replacing the synthetic blobs when all four are set.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,

    pub quad_dim: usize,
    pub quad_dominant: usize,
    pub quad_dominant_value: f64,
    pub quad_tail_value: f64,
    pub noise_var: f64,

    /// Checkpoint holding `θ₀`; random initialization from `seed` otherwise.
    pub theta0: Option<PathBuf>,

    /// Account bandwidth only, without computing anything.
    pub dry_run: bool,
    /// Parameter count for dry runs; defaults to the model's.
    pub dry_run_dim: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Static,
            dimension: None,
            subspaces: None,
            topk: None,
            local_iters: None,
            ksub_time_varying: false,
            projection: SubspaceKind::Fastfood,
            clients: 10,
            per_round: 10,
            rounds: 10,
            epochs: 1,
            batch: 32,
            lr: 0.1,
            seed: 0,
            partition: PartitionMode::Iid,
            model: ModelKind::Logistic,
            hidden: 16,
            classes: 4,
            features: 15,
            train_per_class: 100,
            test_per_class: 50,
            center_norm: 10.0,
            noise_std: 1.0,
            separable: true,
            data_seed: 0,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            quad_dim: 50,
            quad_dominant: 5,
            quad_dominant_value: 1.0,
            quad_tail_value: 0.01,
            noise_var: 0.0,
            theta0: None,
            dry_run: false,
            dry_run_dim: None,
        }
    }
}

/// Every key a run config accepts.
pub const RUN_KEYS: &[&str] = &[
    "algorithm", "dimension", "subspaces", "topk", "local_iters", "ksub_time_varying",
    "projection", "clients", "per_round", "rounds", "epochs", "batch", "lr", "seed",
    "partition", "model", "hidden", "classes", "features", "train_per_class",
    "test_per_class", "center_norm", "noise_std", "separable", "data_seed", "train_images",
    "train_labels", "test_images", "test_labels", "quad_dim", "quad_dominant",
    "quad_dominant_value", "quad_tail_value", "noise_var", "theta0", "dry_run", "dry_run_dim",
];

impl RunConfig {
    /// Resolves defaults < `file` < `flags` and validates the result.
    pub fn resolve(file: Option<&str>, flags: &toml::Table) -> Result<Self> {
        let cfg: Self = resolve_layers(file, flags, RUN_KEYS)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::resolve(Some(text), &toml::Table::new())
    }

    pub fn federation(&self) -> FederationConfig {
        FederationConfig {
            num_clients: self.clients,
            clients_per_round: self.per_round,
            rounds_per_epoch: self.rounds,
            epochs: self.epochs,
            local_batch: self.batch,
            learning_rate: self.lr,
            algorithm: self.algorithm,
            dimension: self.dimension,
            subspaces: self.subspaces,
            topk: self.topk,
            local_iters: self.local_iters,
            master_seed: self.seed,
            projection: self.projection,
            ksub_time_varying: self.ksub_time_varying,
            partition: self.partition,
        }
    }

    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            classes: self.classes,
            features: self.features,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            center_norm: self.center_norm,
            noise_std: self.noise_std,
            separable: self.separable,
            seed: self.data_seed,
        }
    }

    /// The four IDX paths, if any is set. Partial sets are a config error.
    pub fn idx_paths(&self) -> Result<Option<[&Path; 4]>> {
        let paths = [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels];
        match paths.iter().filter(|p| p.is_some()).count() {
            0 => Ok(None),
            4 => Ok(Some(paths.map(|p| p.as_deref().expect("checked")))),
            _ => Err(Error::config(
                "train_images",
                "train_images, train_labels, test_images and test_labels must be set together",
            )),
        }
    }

    /// Parameter count implied by the config, when it does not depend on
    /// data files.
    pub fn model_dim(&self) -> Option<usize> {
        let features = match self.model {
            ModelKind::Quadratic => return Some(self.quad_dim),
            _ if self.train_images.is_some() => return None,
            _ => self.features,
        };
        let c = self.classes;
        Some(match self.model {
            ModelKind::Logistic => c * (features + 1),
            _ => self.hidden * features + self.hidden + c * self.hidden + c,
        })
    }

    /// `D` used for bandwidth accounting.
    pub fn accounting_dim(&self) -> Option<usize> {
        if self.dry_run {
            self.dry_run_dim.or_else(|| self.model_dim())
        } else {
            self.model_dim()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.accounting_dim().unwrap_or(1 << 40);
        self.federation().validate(dim)?;
        self.idx_paths()?;
        if self.dry_run_dim.is_some() && !self.dry_run {
            return Err(Error::config("dry_run_dim", "only applies with dry_run = true"));
        }
        if self.dry_run_dim == Some(0) {
            return Err(Error::config("dry_run_dim", "must be at least 1"));
        }
        if self.model != ModelKind::Quadratic && !self.dry_run {
            if self.classes < 2 {
                return Err(Error::config("classes", "need at least two classes"));
            }
            if self.features == 0 {
                return Err(Error::config("features", "need at least one feature"));
            }
        }
        if self.model == ModelKind::Mlp && self.hidden == 0 {
            return Err(Error::config("hidden", "hidden width must be at least 1"));
        }
        if self.model == ModelKind::Quadratic {
            if self.quad_dim == 0 {
                return Err(Error::config("quad_dim", "must be at least 1"));
            }
            if self.quad_dominant > self.quad_dim {
                return Err(Error::config("quad_dominant", "cannot exceed quad_dim"));
            }
            if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
                return Err(Error::config("noise_var", "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Git-style content hash of the resolved config.
    pub fn hash(&self) -> String {
        content_hash(&self.canonical())
    }

    /// Canonical TOML text of the resolved config.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Kinds of probe reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    /// Empirical distribution of the achievable gap fraction.
    #[default]
    Rho,
    Static,
    #[serde(rename = "timevarying")]
    TimeVarying,
    #[serde(rename = "ksub")]
    KSubspace,
    /// Paired static vs time-varying trials.
    CompareTv,
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(ProbeKind::Rho),
            "static" => Ok(ProbeKind::Static),
            "timevarying" => Ok(ProbeKind::TimeVarying),
            "ksub" => Ok(ProbeKind::KSubspace),
            "compare-tv" => Ok(ProbeKind::CompareTv),
            other => Err(Error::config(
                "probe",
                format!("unknown probe `{other}` (expected rho, static, timevarying, ksub or compare-tv)"),
            )),
        }
    }
}

/// A resolved probe configuration on a dominant-spectrum quadratic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub probe: ProbeKind,
    /// `D`.
    pub dim: usize,
    pub dominant: usize,
    pub dominant_value: f64,
    pub tail_value: f64,
    pub problem_seed: u64,
    /// `σ²` of the additive gradient noise.
    pub noise_var: f64,
    /// `d`.
    pub dimension: usize,
    pub subspaces: usize,
    /// Gradients per step for the K-subspace probe.
    pub clients: usize,
    pub epochs: usize,
    /// Steps per epoch; static and K-subspace probes run `epochs · steps`.
    pub steps: usize,
    pub lr: f64,
    pub trials: usize,
    pub seed: u64,
    pub projection: SubspaceKind,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            probe: ProbeKind::Rho,
            dim: 50,
            dominant: 5,
            dominant_value: 1.0,
            tail_value: 0.01,
            problem_seed: 0,
            noise_var: 0.0,
            dimension: 5,
            subspaces: 1,
            clients: 1,
            epochs: 1,
            steps: 100,
            lr: 0.1,
            trials: 100,
            seed: 0,
            projection: SubspaceKind::Auto,
        }
    }
}

pub const PROBE_KEYS: &[&str] = &[
    "probe", "dim", "dominant", "dominant_value", "tail_value", "problem_seed", "noise_var",
    "dimension", "subspaces", "clients", "epochs", "steps", "lr", "trials", "seed", "projection",
];

impl ProbeConfig {
    pub fn resolve(file: Option<&str>, flags: &toml::Table) -> Result<Self> {
        let cfg: Self = resolve_layers(file, flags, PROBE_KEYS)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.dominant > self.dim {
            return Err(Error::config("dominant", "cannot exceed dim"));
        }
        if self.dimension > self.dim.next_power_of_two() {
            return Err(Error::config("dimension", "exceeds the padded problem size"));
        }
        if self.probe != ProbeKind::Rho && self.dimension == 0 {
            return Err(Error::config("dimension", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.subspaces == 0 {
            return Err(Error::config("subspaces", "must be at least 1"));
        }
        if self.clients == 0 {
            return Err(Error::config("clients", "must be at least 1"));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::config("noise_var", "must be finite and non-negative"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        content_hash(&toml::to_string(self).expect("probe config serializes"))
    }
}

/// `sha256("blob <len>\0<text>")` in hex, as git hashes file contents.
pub fn content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

fn check_keys(table: &toml::Table, known: &[&str]) -> Result<()> {
    for (key, value) in table {
        if !known.contains(&key.as_str()) {
            return Err(Error::config(key.clone(), "unknown key"));
        }
        if value.is_table() || value.is_array() {
            return Err(Error::config(key.clone(), "expected a scalar value"));
        }
    }
    Ok(())
}

fn resolve_layers<T: DeserializeOwned>(file: Option<&str>, flags: &toml::Table, known: &[&str]) -> Result<T> {
    let mut merged = match file {
        Some(text) => text
            .parse::<toml::Table>()
            .map_err(|e| Error::Parse(format!("config file: {e}")))?,
        None => toml::Table::new(),
    };
    check_keys(&merged, known)?;
    check_keys(flags, known)?;
    for (k, v) in flags {
        merged.insert(k.clone(), v.clone());
    }
    T::deserialize(merged.clone()).map_err(|e| {
        // Deserialize key by key to find the one at fault.
        let key = merged
            .iter()
            .find(|(k, v)| {
                let mut single = toml::Table::new();
                single.insert((*k).clone(), (*v).clone());
                T::deserialize(single).is_err()
            })
            .map_or_else(|| "config".to_string(), |(k, _)| k.clone());
        Error::config(key, e.message().to_string())
    })
}

/// Builds a flag table from `(key, raw value)` pairs, inferring types the
/// way a TOML file would (integers, floats, booleans, else strings).
pub fn flag_table<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> toml::Table {
    let mut t = toml::Table::new();
    for (k, raw) in pairs {
        let value = if let Ok(i) = raw.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = raw.parse::<f64>() {
            toml::Value::Float(f)
        } else if let Ok(b) = raw.parse::<bool>() {
            toml::Value::Boolean(b)
        } else {
            toml::Value::String(raw)
        };
        t.insert(k.to_string(), value);
    }
    t
}

/// Reproducibility record written next to a run's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Artifacts,
    pub config: RunConfig,
}

/// Artifact file names, relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifacts {
    pub metrics: String,
    pub summary: String,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config_hash: config.hash(),
            seed: config.seed,
            artifacts: Artifacts {
                metrics: "metrics.csv".into(),
                summary: "summary.txt".into(),
            },
            config,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        m.config.validate()?;
        if m.config.hash() != m.config_hash {
            return Err(Error::config("config_hash", "does not match the embedded config"));
        }
        Ok(m)
    }
}

/// Reads either a run manifest (it has a `[config]` table) or a plain
/// config file, with flags layered on top.
pub fn load_run_config(text: Option<&str>, flags: &toml::Table) -> Result<RunConfig> {
    if let Some(t) = text {
        let table = t
            .parse::<toml::Table>()
            .map_err(|e| Error::Parse(format!("config file: {e}")))?;
        if let Some(toml::Value::Table(config)) = table.get("config") {
            if table.contains_key("config_hash") {
                RunManifest::from_toml(t)?;
                let inner = toml::to_string(config).expect("table serializes");
                return RunConfig::resolve(Some(&inner), flags);
            }
        }
    }
    RunConfig::resolve(text, flags)
}
