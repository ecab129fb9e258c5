//! The `igc` command. Every subcommand is a request to the igc service: with
//! `--server URL` an existing one, otherwise one started in-process on a
//! loopback port for the duration of the command.
//!
//! Flag precedence: `--set key=value` beats the named flags, which beat the
//! `--config` file, which beats built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use igc_client::{Client, ClientError, CompareEntry, CompareRequest, ConfigSource};
use igc_service::BackgroundServer;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const REPORT_FILE: &str = "report.txt";
pub const COMPARE_FILE: &str = "compare.csv";

/// Exit status for invalid configuration or usage.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for runs that failed or could not be written.
pub const EXIT_FAILURE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "igc", version, about = "Federated learning with intrinsic gradient compression")]
pub struct Cli {
    /// Use a running igc service instead of an in-process one.
    #[arg(long, global = true, value_name = "URL")]
    pub server: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one federated experiment; writes metrics.csv, summary.txt and manifest.toml.
    Run(RunArgs),
    /// Run a convergence probe on a quadratic; writes report.txt.
    Probe(ProbeArgs),
    /// Rerun several configs or manifests and tabulate them; writes compare.csv.
    Compare(CompareArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Set any config key, e.g. `--set model=mlp`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file or a manifest written by an earlier run.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    pub algorithm: Option<String>,
    #[arg(long, value_name = "d")]
    pub dimension: Option<String>,
    #[arg(long, value_name = "K")]
    pub subspaces: Option<String>,
    #[arg(long, value_name = "N")]
    pub clients: Option<String>,
    #[arg(long = "per-round", value_name = "W")]
    pub per_round: Option<String>,
    #[arg(long, value_name = "T")]
    pub rounds: Option<String>,
    #[arg(long, value_name = "E")]
    pub epochs: Option<String>,
    #[arg(long, value_name = "LR")]
    pub lr: Option<String>,
    #[arg(long, value_name = "S")]
    pub seed: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// rho, static, timevarying, ksub or compare-tv.
    #[arg(long, value_name = "KIND")]
    pub probe: Option<String>,
    #[arg(long, value_name = "d")]
    pub dimension: Option<String>,
    #[arg(long, value_name = "K")]
    pub subspaces: Option<String>,
    #[arg(long, value_name = "N")]
    pub clients: Option<String>,
    #[arg(long, value_name = "E")]
    pub epochs: Option<String>,
    #[arg(long, value_name = "LR")]
    pub lr: Option<String>,
    #[arg(long, value_name = "S")]
    pub seed: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Config files or manifests; each is labelled by its file name.
    #[arg(value_name = "MANIFEST")]
    pub manifests: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: io::Error },
    Client(ClientError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Client(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Client(ClientError::Api { status: 400, .. }) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        CliError::Client(e)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Named flags plus `--set` pairs as config keys. `--set` wins.
pub fn collect_flags(named: &[(&str, &Option<String>)], overrides: &Overrides) -> Result<BTreeMap<String, String>, CliError> {
    let mut flags: BTreeMap<String, String> = named
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect();
    for pair in &overrides.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        flags.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(flags)
}

fn source(config: Option<&Path>, flags: BTreeMap<String, String>) -> Result<ConfigSource, CliError> {
    Ok(ConfigSource {
        config_toml: config.map(read).transpose()?,
        flags,
    })
}

impl RunArgs {
    pub fn config_source(&self) -> Result<ConfigSource, CliError> {
        let flags = collect_flags(
            &[
                ("algorithm", &self.algorithm),
                ("dimension", &self.dimension),
                ("subspaces", &self.subspaces),
                ("clients", &self.clients),
                ("per_round", &self.per_round),
                ("rounds", &self.rounds),
                ("epochs", &self.epochs),
                ("lr", &self.lr),
                ("seed", &self.seed),
            ],
            &self.overrides,
        )?;
        source(self.config.as_deref(), flags)
    }
}

impl ProbeArgs {
    pub fn config_source(&self) -> Result<ConfigSource, CliError> {
        let flags = collect_flags(
            &[
                ("probe", &self.probe),
                ("dimension", &self.dimension),
                ("subspaces", &self.subspaces),
                ("clients", &self.clients),
                ("epochs", &self.epochs),
                ("lr", &self.lr),
                ("seed", &self.seed),
            ],
            &self.overrides,
        )?;
        source(self.config.as_deref(), flags)
    }
}

/// Labels from file stems; repeated stems get their position appended.
pub fn labels(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            // A manifest is usually `<dir>/manifest.toml`; its directory is the better name.
            if stem == "manifest" {
                if let Some(dir) = p.parent().and_then(|d| d.file_name()) {
                    return dir.to_string_lossy().into_owned();
                }
            }
            stem
        })
        .collect();
    stems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if stems.iter().filter(|t| *t == s).count() > 1 {
                format!("{s}-{i}")
            } else {
                s.clone()
            }
        })
        .collect()
}

enum Backend {
    Remote,
    Local(#[allow(dead_code)] BackgroundServer),
}

fn connect(server: Option<&str>) -> Result<(Client, Backend), CliError> {
    match server {
        Some(url) => Ok((Client::new(url)?, Backend::Remote)),
        None => {
            let local = BackgroundServer::start("127.0.0.1:0").map_err(|source| CliError::Io {
                path: PathBuf::from("127.0.0.1:0"),
                source,
            })?;
            Ok((Client::new(local.base_url())?, Backend::Local(local)))
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    if let Command::Serve { addr } = &cli.command {
        return igc_service::serve_forever(addr, |a| eprintln!("igc service listening on http://{a}")).map_err(
            |source| CliError::Io {
                path: PathBuf::from(addr),
                source,
            },
        );
    }
    let (client, _backend) = connect(cli.server.as_deref())?;
    match cli.command {
        Command::Run(args) => {
            let resp = client.run(&args.config_source()?)?;
            create_dir(&args.out)?;
            write(&args.out, METRICS_FILE, &resp.metrics_csv)?;
            write(&args.out, SUMMARY_FILE, &resp.summary)?;
            write(&args.out, MANIFEST_FILE, &resp.manifest_toml)?;
            print!("{}", resp.summary);
        }
        Command::Probe(args) => {
            let resp = client.probe(&args.config_source()?)?;
            create_dir(&args.out)?;
            write(&args.out, REPORT_FILE, &resp.report)?;
            print!("{}", resp.report);
        }
        Command::Compare(args) => {
            if args.manifests.len() < 2 {
                return Err(CliError::Usage(format!(
                    "compare needs at least two manifests, got {}",
                    args.manifests.len()
                )));
            }
            let entries = labels(&args.manifests)
                .into_iter()
                .zip(&args.manifests)
                .map(|(label, path)| {
                    Ok(CompareEntry {
                        label,
                        source: source(Some(path), BTreeMap::new())?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let resp = client.compare(&CompareRequest { entries })?;
            create_dir(&args.out)?;
            write(&args.out, COMPARE_FILE, &resp.table)?;
            print!("{}", resp.table);
        }
        Command::Serve { .. } => unreachable!(),
    }
    Ok(())
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("igc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
