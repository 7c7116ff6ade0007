//! Declarative run configuration shared by all CLI commands.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{self, PopulationFrame, RowFilter, Table};
use crate::harness::Method;
use crate::search::Allocator;
use crate::synth::{self, BetaKind, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub population: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    pub beta: BetaKind,
    #[serde(default = "default_snr")]
    pub snr: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_p() -> usize {
    20
}
fn default_snr() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    0.35
}

/// CSV input: either one file split by row filters, or separate train/test
/// files. Categorical columns are one-hot encoded over the union of both
/// splits so indicator columns line up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub outcome: String,
    /// Raw covariate columns; defaults to every other column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default = "default_true")]
    pub drop_missing: bool,
    #[serde(default)]
    pub missing_token: Option<String>,
    #[serde(default)]
    pub train_filter: Option<String>,
    #[serde(default)]
    pub test_filter: Option<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv(CsvSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectObjective {
    Variance,
    Wcss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_theta")]
    pub theta: usize,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_allocator")]
    pub allocator: Allocator,
    /// Allocators compared by `evaluate`; defaults to `[allocator]`.
    #[serde(default)]
    pub allocators: Option<Vec<Allocator>>,
    #[serde(default = "default_objective")]
    pub objective: SelectObjective,
    /// Stratification variables for `allocate`; defaults to all covariates.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_k() -> usize {
    6
}
fn default_theta() -> usize {
    5
}
fn default_allocator() -> Allocator {
    Allocator::Proportional
}
fn default_objective() -> SelectObjective {
    SelectObjective::Variance
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_replications() -> usize {
    10_000
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))
    }

    pub fn allocators(&self) -> Vec<Allocator> {
        self.allocators.clone().unwrap_or_else(|| vec![self.allocator])
    }

    pub fn synth_config(&self) -> Result<Option<SynthConfig>> {
        let DatasetSource::Synthetic(s) = &self.dataset else {
            return Ok(None);
        };
        let cfg = SynthConfig {
            population: s.population,
            beta: synth::beta_pattern(s.beta, s.p)?,
            snr: s.snr,
            rho: s.rho,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(Some(cfg))
    }

    /// Checks that do not need the data.
    pub fn validate_static(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::BadConfig("k must be at least 1".into()));
        }
        if self.replications < 2 {
            return Err(Error::TooFewReplications {
                min: 2,
                actual: self.replications,
            });
        }
        if self.methods.is_empty() {
            return Err(Error::BadConfig("methods must not be empty".into()));
        }
        if let Some(a) = &self.allocators {
            if a.is_empty() {
                return Err(Error::BadConfig("allocators must not be empty".into()));
            }
        }
        if let DatasetSource::Csv(c) = &self.dataset {
            let split_files = c.train.is_some() && c.test.is_some();
            let filtered = c.path.is_some() && c.train_filter.is_some() && c.test_filter.is_some();
            if split_files == filtered {
                return Err(Error::BadConfig(
                    "csv dataset needs either `train` and `test`, or `path` with `train_filter` and `test_filter`"
                        .into(),
                ));
            }
            for f in c.train_filter.iter().chain(&c.test_filter) {
                RowFilter::parse(f)?;
            }
        }
        self.synth_config()?;
        Ok(())
    }

    pub fn n_or_err(&self) -> Result<usize> {
        self.n
            .ok_or_else(|| Error::BadConfig("sample size `n` is required".into()))
    }
}

/// Training and testing frames plus a short identity string.
pub struct LoadedData {
    pub train: PopulationFrame,
    pub test: PopulationFrame,
    pub identity: String,
}

fn concat(a: &Table, b: &Table) -> Result<Table> {
    if a.names() != b.names() {
        return Err(Error::BadConfig("train and test files have different headers".into()));
    }
    let columns = a
        .names()
        .iter()
        .map(|name| {
            let mut col = a.column(name).expect("own column").to_vec();
            col.extend_from_slice(b.column(name).expect("same header"));
            col
        })
        .collect();
    Table::new(a.names().to_vec(), columns)
}

fn split_rows(table: &Table, start: usize, end: usize) -> Result<Table> {
    let columns = table
        .names()
        .iter()
        .map(|n| table.column(n).expect("own column")[start..end].to_vec())
        .collect();
    Table::new(table.names().to_vec(), columns)
}

fn load_csv(spec: &CsvSpec) -> Result<(PopulationFrame, PopulationFrame)> {
    let token = spec.missing_token.as_deref();
    let filters: Vec<RowFilter> = spec
        .train_filter
        .iter()
        .chain(&spec.test_filter)
        .map(|f| RowFilter::parse(f))
        .collect::<Result<_>>()?;
    let mut filter_cols: Vec<String> = Vec::new();
    for f in &filters {
        if !filter_cols.contains(&f.column) {
            filter_cols.push(f.column.clone());
        }
    }

    let (raw, train_rows) = match (&spec.train, &spec.test, &spec.path) {
        (Some(train), Some(test), _) => {
            let a = Table::read_csv_path(train, token)?;
            let b = Table::read_csv_path(test, token)?;
            let rows = a.n_rows();
            (concat(&a, &b)?, Some(rows))
        }
        (_, _, Some(path)) => (Table::read_csv_path(path, token)?, None),
        _ => return Err(Error::BadConfig("no csv input".into())),
    };

    let raw_covariates: Vec<String> = match &spec.covariates {
        Some(c) => c.clone(),
        None => raw
            .names()
            .iter()
            .filter(|n| **n != spec.outcome && !spec.exclude.contains(n) && !filter_cols.contains(n))
            .cloned()
            .collect(),
    };
    let mut keep = vec![spec.outcome.clone()];
    keep.extend(raw_covariates.iter().cloned());
    let extra: Vec<String> = filter_cols
        .iter()
        .filter(|c| !keep.contains(c))
        .cloned()
        .collect();
    keep.extend(extra.iter().cloned());
    let projected = raw.project(&keep)?;

    // drop rows per split so row counts stay aligned with the source files
    let encoded = match train_rows {
        Some(rows) => {
            // a row of either split is dropped independently of the other
            let mask_keep: Vec<bool> = (0..projected.n_rows())
                .map(|r| {
                    !spec.drop_missing
                        || projected
                            .names()
                            .iter()
                            .all(|n| projected.column(n).expect("own")[r].is_some())
                })
                .collect();
            let kept_train = mask_keep[..rows].iter().filter(|k| **k).count();
            let table = frame::preprocess(&projected, &spec.categorical, spec.drop_missing);
            let total = table.n_rows();
            (split_rows(&table, 0, kept_train)?, split_rows(&table, kept_train, total)?)
        }
        None => {
            let table = frame::preprocess(&projected, &spec.categorical, spec.drop_missing);
            (table.filter(&filters[0])?, table.filter(&filters[1])?)
        }
    };
    let (train_t, test_t) = encoded;
    let covariates: Vec<String> = train_t
        .names()
        .iter()
        .filter(|n| **n != spec.outcome && !extra.contains(n))
        .cloned()
        .collect();
    Ok((
        frame::build_frame(&train_t, &spec.outcome, &covariates)?,
        frame::build_frame(&test_t, &spec.outcome, &covariates)?,
    ))
}

pub fn load_data(config: &RunConfig) -> Result<LoadedData> {
    match &config.dataset {
        DatasetSource::Synthetic(s) => {
            let cfg = config.synth_config()?.expect("synthetic source");
            let (train, test) = synth::generate_train_test(&cfg)?;
            Ok(LoadedData {
                train,
                test,
                identity: format!(
                    "synthetic:{:?}:N={}:p={}:snr={}:rho={}:seed={}",
                    s.beta, s.population, s.p, s.snr, s.rho, config.seed
                )
                .to_lowercase(),
            })
        }
        DatasetSource::Csv(c) => {
            let (train, test) = load_csv(c)?;
            let identity = match (&c.train, &c.test, &c.path) {
                (Some(a), Some(b), _) => format!("csv:{}|{}", a.display(), b.display()),
                (_, _, Some(p)) => format!(
                    "csv:{}[{}|{}]",
                    p.display(),
                    c.train_filter.as_deref().unwrap_or(""),
                    c.test_filter.as_deref().unwrap_or("")
                ),
                _ => "csv".into(),
            };
            Ok(LoadedData { train, test, identity })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"{"dataset": {"synthetic": {"population": 10, "beta": "type1"}}, "n": 4}"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json(SYNTH).unwrap();
        assert_eq!((c.k, c.theta, c.replications, c.seed), (6, 5, 10_000, 0));
        assert_eq!(c.methods.len(), 6);
        assert_eq!(c.allocators(), vec![Allocator::Proportional]);
        c.validate_static().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"dataset": {"synthetic": {"population": 10, "beta": "type1"}}, "bogus": 1}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::BadConfig(_))));
        let text = r#"{"dataset": {"synthetic": {"population": 10, "beta": "type1", "extra": 2}}}"#;
        assert!(RunConfig::from_json(text).is_err());
    }

    #[test]
    fn missing_beta_kind_rejected() {
        let text = r#"{"dataset": {"synthetic": {"population": 10}}}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::BadConfig(_))));
    }

    #[test]
    fn csv_source_needs_a_split() {
        let text = r#"{"dataset": {"csv": {"path": "x.csv", "outcome": "y"}}}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert!(matches!(c.validate_static(), Err(Error::BadConfig(_))));
    }

    #[test]
    fn synthetic_data_loads() {
        let c = RunConfig::from_json(SYNTH).unwrap();
        let d = load_data(&c).unwrap();
        assert_eq!(d.train.n_units(), 10);
        assert_eq!(d.test.n_covariates(), 20);
        assert_ne!(d.train, d.test);
    }

    #[test]
    fn csv_filter_split_with_one_hot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(
            &path,
            "year,city,temp,pm\n2014,a,1.0,10\n2014,b,2.0,NA\n2015,b,3.0,30\n2015,c,,40\n2015,a,5.0,50\n",
        )
        .unwrap();
        let text = format!(
            r#"{{"dataset": {{"csv": {{"path": {:?}, "outcome": "pm", "categorical": ["city"],
                "missing_token": "NA", "train_filter": "year == 2014", "test_filter": "year == 2015"}}}}}}"#,
            path
        );
        let c = RunConfig::from_json(&text).unwrap();
        c.validate_static().unwrap();
        let d = load_data(&c).unwrap();
        assert_eq!(d.train.n_units(), 1);
        assert_eq!(d.test.n_units(), 2);
        // levels come from rows surviving missing-data removal: a and b
        assert_eq!(d.train.covariate_names(), &["city_a", "city_b", "temp"]);
        assert_eq!(d.test.outcome(), &[30.0, 50.0]);
    }

    #[test]
    fn csv_separate_files_share_levels() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("train.csv");
        let b = dir.path().join("test.csv");
        std::fs::write(&a, "g,x,y\nu,1,2\n,2,3\n").unwrap();
        std::fs::write(&b, "g,x,y\nv,3,4\nw,4,5\n").unwrap();
        let text = format!(
            r#"{{"dataset": {{"csv": {{"train": {:?}, "test": {:?}, "outcome": "y", "categorical": ["g"]}}}}}}"#,
            a, b
        );
        let d = load_data(&RunConfig::from_json(&text).unwrap()).unwrap();
        assert_eq!(d.train.n_units(), 1);
        assert_eq!(d.test.n_units(), 2);
        assert_eq!(d.train.covariate_names(), d.test.covariate_names());
        assert_eq!(d.test.covariate_names(), &["g_u", "g_v", "g_w", "x"]);
    }
}
