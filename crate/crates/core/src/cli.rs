//! Command-line front end.
//!
//! Every command reads a [`RunConfig`] (or a manifest written by an earlier
//! run), validates it against the data, computes everything in memory and only
//! then writes its output files together with a `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{self, DatasetSource, LoadedData, RunConfig, SelectObjective};
use crate::error::Error;
use crate::harness::{self, ExperimentSpec, Method};
use crate::rng;
use crate::search::{self, Objective, SearchConfig};
use crate::synth;
use crate::variance;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "stratsel", version, about = "Stratification-variable selection for stratified sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Generate,
    Select,
    Allocate,
    Evaluate,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Generate => "generate",
            CommandKind::Select => "select",
            CommandKind::Allocate => "allocate",
            CommandKind::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/test populations as CSV.
    Generate(Overrides),
    /// Run the forward search on the training population.
    Select(Overrides),
    /// Stratify the training population and allocate the sample.
    Allocate(Overrides),
    /// Compare sampling designs by Monte Carlo on the test population.
    Evaluate(Overrides),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Run config JSON, or a manifest.json from a previous run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated method names, e.g. `SRS,SFS-KM-V`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: CommandKind,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Validation(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// I/O trouble while reading inputs is a runtime failure; anything else
/// found before computing starts is a validation failure.
fn classify(e: Error) -> Failure {
    match e {
        Error::Csv(_) => runtime(e),
        other => invalid(other),
    }
}

/// Reads either a plain run config or a manifest and returns the config.
pub fn read_config(path: &Path) -> anyhow::Result<(RunConfig, Option<CommandKind>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::BadConfig(e.to_string()))?;
    if value.get("tool").is_some() && value.get("config").is_some() {
        let manifest: Manifest =
            serde_json::from_value(value).map_err(|e| Error::BadConfig(e.to_string()))?;
        return Ok((manifest.config, Some(manifest.command)));
    }
    Ok((RunConfig::from_json(&text)?, None))
}

fn apply_overrides(config: &mut RunConfig, o: &Overrides) -> Result<(), Error> {
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(dir) = &o.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(r) = o.replications {
        config.replications = r;
    }
    if let Some(methods) = &o.methods {
        config.methods = methods
            .iter()
            .map(|m| m.trim().parse::<Method>())
            .collect::<Result<_, _>>()?;
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Output files held in memory until the whole command has succeeded.
struct Outputs {
    files: Vec<(&'static str, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn json<T: Serialize>(&mut self, name: &'static str, value: &T) -> anyhow::Result<()> {
        self.files.push((name, to_json(value)?.into_bytes()));
        Ok(())
    }

    fn raw(&mut self, name: &'static str, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    fn write(self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, bytes) in self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn manifest(kind: CommandKind, config: &RunConfig, seeds: BTreeMap<String, u64>) -> Manifest {
    Manifest {
        tool: "stratsel".into(),
        version: VERSION.into(),
        command: kind,
        config: config.clone(),
        seeds,
    }
}

fn feature_indices(data: &LoadedData, config: &RunConfig) -> Result<Vec<usize>, Error> {
    match &config.features {
        None => Ok((0..data.train.n_covariates()).collect()),
        Some(names) => {
            if names.is_empty() {
                return Err(Error::BadFeatureSubset("empty feature list".into()));
            }
            names
                .iter()
                .map(|n| {
                    data.train
                        .covariate_index(n)
                        .ok_or_else(|| Error::UnknownColumn(n.clone()))
                })
                .collect()
        }
    }
}

fn search_config(config: &RunConfig) -> Result<SearchConfig, Error> {
    let objective = match config.objective {
        SelectObjective::Variance => Objective::Variance {
            n: config.n_or_err()?,
            allocator: config.allocator,
        },
        SelectObjective::Wcss => Objective::Wcss,
    };
    Ok(SearchConfig {
        k: config.k,
        theta: config.theta,
        objective,
        seed: config.seed,
    })
}

fn experiment_spec(config: &RunConfig) -> Result<ExperimentSpec, Error> {
    Ok(ExperimentSpec {
        methods: config.methods.clone(),
        allocators: config.allocators(),
        k: config.k,
        theta: config.theta,
        n: config.n_or_err()?,
        replications: config.replications,
        seed: config.seed,
    })
}

fn cmd_generate(config: &RunConfig) -> Result<Outputs, Failure> {
    let synth_cfg = match &config.dataset {
        DatasetSource::Synthetic(_) => config.synth_config().map_err(invalid)?.expect("synthetic"),
        DatasetSource::Csv(_) => {
            return Err(invalid(Error::BadConfig("generate needs a synthetic dataset".into())));
        }
    };
    let (train, test) = synth::generate_train_test(&synth_cfg).map_err(runtime)?;
    let mut out = Outputs::new();
    for (name, frame) in [("train.csv", &train), ("test.csv", &test)] {
        let mut buf = Vec::new();
        frame.write_csv(&mut buf).map_err(runtime)?;
        out.raw(name, buf);
    }
    let seeds = BTreeMap::from([
        ("master".to_string(), config.seed),
        ("train".to_string(), rng::derive_seed(config.seed, &[0])),
        ("test".to_string(), rng::derive_seed(config.seed, &[1])),
    ]);
    out.json("manifest.json", &manifest(CommandKind::Generate, config, seeds))
        .map_err(runtime)?;
    Ok(out)
}

fn cmd_select(config: &RunConfig) -> Result<Outputs, Failure> {
    let cfg = search_config(config).map_err(invalid)?;
    let data = config::load_data(config).map_err(classify)?;
    search::validate_search(&data.train, &cfg).map_err(invalid)?;
    let result = search::forward_search(&data.train, &cfg).map_err(runtime)?;
    let mut out = Outputs::new();
    out.json("selection.json", &result).map_err(runtime)?;
    let seeds = BTreeMap::from([("master".to_string(), config.seed)]);
    out.json("manifest.json", &manifest(CommandKind::Select, config, seeds))
        .map_err(runtime)?;
    Ok(out)
}

#[derive(Serialize)]
struct PlanReport<'a> {
    dataset: &'a str,
    features: Vec<String>,
    plan: &'a crate::AllocationPlan,
    stats: &'a crate::StratumStats,
    stratified_variance: f64,
    srs_variance: f64,
}

fn cmd_allocate(config: &RunConfig) -> Result<Outputs, Failure> {
    let n = config.n_or_err().map_err(invalid)?;
    let data = config::load_data(config).map_err(classify)?;
    let features = feature_indices(&data, config).map_err(invalid)?;
    let check = SearchConfig {
        k: config.k,
        theta: 0,
        objective: Objective::Variance {
            n,
            allocator: config.allocator,
        },
        seed: config.seed,
    };
    search::validate_search(&data.train, &check).map_err(invalid)?;

    let (partition, stats, plan) =
        search::stratify_and_allocate(&data.train, &features, config.k, n, config.allocator, config.seed)
            .map_err(runtime)?;
    let report = PlanReport {
        dataset: &data.identity,
        features: features
            .iter()
            .map(|&j| data.train.covariate_names()[j].clone())
            .collect(),
        plan: &plan,
        stats: &stats,
        stratified_variance: variance::stratified_variance(&stats, &plan).map_err(runtime)?,
        srs_variance: variance::srs_variance(&stats, n).map_err(runtime)?,
    };
    let mut out = Outputs::new();
    out.json("partition.json", &partition).map_err(runtime)?;
    out.json("plan.json", &report).map_err(runtime)?;
    let seeds = BTreeMap::from([("master".to_string(), config.seed)]);
    out.json("manifest.json", &manifest(CommandKind::Allocate, config, seeds))
        .map_err(runtime)?;
    Ok(out)
}

fn cmd_evaluate(config: &RunConfig) -> Result<Outputs, Failure> {
    let spec = experiment_spec(config).map_err(invalid)?;
    let data = config::load_data(config).map_err(classify)?;
    harness::validate_experiment(&data.train, &data.test, &spec).map_err(invalid)?;
    let report = harness::run_experiment(&data.train, &data.test, &spec, &data.identity).map_err(runtime)?;
    let mut out = Outputs::new();
    out.json("report.json", &report).map_err(runtime)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(runtime)?;
    out.raw("report.csv", csv);
    let seeds = BTreeMap::from([
        ("master".to_string(), config.seed),
        ("kmeans".to_string(), rng::derive_seed(config.seed, &[3])),
        ("sfs_wcss".to_string(), rng::derive_seed(config.seed, &[4])),
    ]);
    out.json("manifest.json", &manifest(CommandKind::Evaluate, config, seeds))
        .map_err(runtime)?;
    Ok(out)
}

fn execute(kind: CommandKind, overrides: &Overrides) -> Result<PathBuf, Failure> {
    let (mut config, from_manifest) = read_config(&overrides.config).map_err(|e| {
        if e.downcast_ref::<std::io::Error>().is_some() {
            runtime(e)
        } else {
            invalid(e)
        }
    })?;
    if let Some(recorded) = from_manifest {
        if recorded != kind {
            return Err(invalid(Error::BadConfig(format!(
                "manifest was written by `{}`, not `{}`",
                recorded.name(),
                kind.name()
            ))));
        }
    }
    apply_overrides(&mut config, overrides).map_err(invalid)?;
    config.validate_static().map_err(invalid)?;
    let out = match kind {
        CommandKind::Generate => cmd_generate(&config)?,
        CommandKind::Select => cmd_select(&config)?,
        CommandKind::Allocate => cmd_allocate(&config)?,
        CommandKind::Evaluate => cmd_evaluate(&config)?,
    };
    out.write(&config.out_dir).map_err(runtime)?;
    Ok(config.out_dir)
}

/// Runs a parsed command line and maps failures to exit codes
/// (0 success, 2 validation error, 1 runtime error).
pub fn run(cli: Cli) -> ExitCode {
    let (kind, overrides) = match &cli.command {
        Command::Generate(o) => (CommandKind::Generate, o),
        Command::Select(o) => (CommandKind::Select, o),
        Command::Allocate(o) => (CommandKind::Allocate, o),
        Command::Evaluate(o) => (CommandKind::Evaluate, o),
    };
    match execute(kind, overrides) {
        Ok(dir) => {
            eprintln!("{}: wrote {}", kind.name(), dir.display());
            ExitCode::SUCCESS
        }
        Err(failure) => {
            let (label, err) = match &failure {
                Failure::Validation(e) => ("invalid configuration", e),
                Failure::Runtime(e) => ("error", e),
            };
            eprintln!("{label}: {err:#}");
            ExitCode::from(failure.exit_code())
        }
    }
}
