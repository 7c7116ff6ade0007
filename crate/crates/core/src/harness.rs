//! Monte Carlo evaluation of sampling designs.
//!
//! Every design is fitted on a training population and evaluated on a
//! separate testing population: partitions, plans, covariate choices and
//! regression slopes come from training data, and the sampling variance of
//! each estimator is estimated by repeated draws from the testing data.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{largest_remainder, AllocationPlan};
use crate::baselines::{self, CossSampler};
use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::kmeans::{self, StratumPartition};
use crate::rng::{self, Rng};
use crate::search::{self, Allocator};
use crate::stats::{stratum_stats, StratumStats};
use crate::variance;

/// Population-convention variance of the realizations of `sampler`, each
/// run on its own RNG stream. Results are gathered in replication order, so
/// the estimate does not depend on scheduling.
pub fn estimate_sampling_variance<F>(sampler: F, replications: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Rng) -> Result<f64> + Sync,
{
    let draws = realizations(sampler, replications, seed)?;
    Ok(population_variance(&draws))
}

pub fn realizations<F>(sampler: F, replications: usize, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&mut Rng) -> Result<f64> + Sync,
{
    if replications < 2 {
        return Err(Error::TooFewReplications {
            min: 2,
            actual: replications,
        });
    }
    (0..replications as u64)
        .into_par_iter()
        .map(|r| sampler(&mut rng::stream(seed, r)))
        .collect()
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// `(1 - var_method / var_srs) * 100`.
pub fn variance_reduction_rate(var_method: f64, var_srs: f64) -> Result<f64> {
    if !(var_srs > 0.0) {
        return Err(Error::ZeroBaselineVariance);
    }
    Ok((1.0 - var_method / var_srs) * 100.0)
}

/// Draws a stratified sample with a fixed plan and returns the weighted mean.
#[derive(Debug, Clone)]
pub struct StratifiedSampler<'a> {
    outcome: &'a [f64],
    members: Vec<Vec<usize>>,
    sizes: Vec<usize>,
    weights: Vec<f64>,
}

impl<'a> StratifiedSampler<'a> {
    /// `plan.sizes[k]` applies to the k-th nonempty stratum of `labels` in
    /// increasing label order.
    pub fn new(frame: &'a PopulationFrame, labels: &[usize], plan: &AllocationPlan) -> Result<Self> {
        if labels.len() != frame.n_units() {
            return Err(Error::LengthMismatch {
                expected: frame.n_units(),
                actual: labels.len(),
            });
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        members.retain(|m| !m.is_empty());
        if plan.sizes.len() != members.len() {
            return Err(Error::LengthMismatch {
                expected: members.len(),
                actual: plan.sizes.len(),
            });
        }
        for (s, (&nk, m)) in plan.sizes.iter().zip(&members).enumerate() {
            if nk == 0 {
                return Err(Error::EmptyAllocation(s));
            }
            if nk > m.len() {
                return Err(Error::OverAllocated {
                    stratum: s,
                    allocated: nk,
                    size: m.len(),
                });
            }
        }
        let population = frame.n_units() as f64;
        Ok(Self {
            outcome: frame.outcome(),
            weights: members.iter().map(|m| m.len() as f64 / population).collect(),
            members,
            sizes: plan.sizes.clone(),
        })
    }

    pub fn sample_mean(&self, rng: &mut Rng) -> f64 {
        let mut total = 0.0;
        for ((m, &nk), w) in self.members.iter().zip(&self.sizes).zip(&self.weights) {
            let sum: f64 = index::sample(rng, m.len(), nk)
                .into_iter()
                .map(|i| self.outcome[m[i]])
                .sum();
            total += w * sum / nk as f64;
        }
        total
    }
}

/// One stratified draw from `frame_test`, stratified by the partition's
/// centroids, with `plan` aligned to the nonempty test strata.
pub fn stratified_sample_mean(
    frame_test: &PopulationFrame,
    partition: &StratumPartition,
    plan: &AllocationPlan,
    rng: &mut Rng,
) -> Result<f64> {
    let labels = kmeans::kmeans_assign(partition, frame_test)?;
    Ok(StratifiedSampler::new(frame_test, &labels, plan)?.sample_mean(rng))
}

/// Carries a plan computed on training strata over to the testing strata.
///
/// Sizes follow stratum ids. Units that do not fit (a stratum is smaller on
/// the test set, or empty there) are redistributed by largest remainder in
/// proportion to the remaining capacity; strata that exist only on the test
/// set receive one unit.
pub fn align_plan(
    train: &StratumStats,
    plan: &AllocationPlan,
    test: &StratumStats,
) -> Result<AllocationPlan> {
    let n = plan.total;
    let (k, population) = (test.k(), test.population());
    if n < k {
        return Err(Error::SampleTooSmall { n, k });
    }
    if n > population {
        return Err(Error::SampleExceedsPopulation { n, population });
    }
    let mut sizes: Vec<usize> = test
        .stratum_ids
        .iter()
        .zip(&test.sizes)
        .map(|(&id, &cap)| train.position_of(id).map_or(0, |pos| plan.sizes[pos]).min(cap))
        .collect();
    let mut excess = n - sizes.iter().sum::<usize>().min(n);
    for s in 0..k {
        if sizes[s] > 0 {
            continue;
        }
        if excess > 0 {
            excess -= 1;
        } else {
            let donor = (0..k).fold(0, |b, i| if sizes[i] > sizes[b] { i } else { b });
            sizes[donor] -= 1;
        }
        sizes[s] = 1;
    }
    if excess > 0 {
        let capacity: Vec<f64> = sizes
            .iter()
            .zip(&test.sizes)
            .map(|(&nk, &cap)| (cap - nk) as f64)
            .collect();
        let total_cap: f64 = capacity.iter().sum();
        let quotas: Vec<f64> = capacity.iter().map(|c| c * excess as f64 / total_cap).collect();
        for (s, extra) in largest_remainder(&quotas, excess).into_iter().enumerate() {
            sizes[s] += extra;
        }
    }
    Ok(AllocationPlan {
        sizes,
        total: n,
        method: plan.method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SRS")]
    Srs,
    #[serde(rename = "CUPED")]
    Cuped,
    #[serde(rename = "COSS")]
    Coss,
    #[serde(rename = "K-means")]
    KMeans,
    #[serde(rename = "SFS-KM")]
    SfsKm,
    #[serde(rename = "SFS-KM-V")]
    SfsKmV,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Srs,
        Method::Cuped,
        Method::Coss,
        Method::KMeans,
        Method::SfsKm,
        Method::SfsKmV,
    ];

    pub fn is_stratified(self) -> bool {
        matches!(self, Method::KMeans | Method::SfsKm | Method::SfsKmV)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Srs => "SRS",
            Method::Cuped => "CUPED",
            Method::Coss => "COSS",
            Method::KMeans => "K-means",
            Method::SfsKm => "SFS-KM",
            Method::SfsKmV => "SFS-KM-V",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "srs" => Method::Srs,
            "cuped" => Method::Cuped,
            "coss" => Method::Coss,
            "kmeans" => Method::KMeans,
            "sfskm" => Method::SfsKm,
            "sfskmv" => Method::SfsKmV,
            _ => return Err(Error::BadConfig(format!("unknown method `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    /// Allocators to evaluate for each stratified method.
    pub allocators: Vec<Allocator>,
    pub k: usize,
    pub theta: usize,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub allocator: Option<Allocator>,
    pub variance: f64,
    pub variance_reduction_percent: f64,
    /// Covariates used: the CUPED/COSS covariate or the stratification subset.
    pub variables: Vec<String>,
    /// Closed-form variance of the stratified estimator on the test strata.
    pub analytic_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub methods: Vec<MethodResult>,
    pub replications: usize,
    pub n: usize,
    pub k: usize,
    pub theta: usize,
    pub p: usize,
    pub population_train: usize,
    pub population_test: usize,
    pub seed: u64,
}

impl EvaluationReport {
    pub fn get(&self, method: Method, allocator: Option<Allocator>) -> Option<&MethodResult> {
        self.methods
            .iter()
            .find(|m| m.method == method && m.allocator == allocator)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method",
            "allocator",
            "variance",
            "variance_reduction_percent",
            "variables",
        ])?;
        for m in &self.methods {
            w.write_record([
                m.method.name().to_string(),
                m.allocator.map(|a| a.to_string()).unwrap_or_default(),
                m.variance.to_string(),
                m.variance_reduction_percent.to_string(),
                m.variables.join(" "),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// A fitted stratified design carried over to the test population.
pub struct StratifiedDesign {
    pub partition: StratumPartition,
    pub train_stats: StratumStats,
    pub train_plan: AllocationPlan,
    pub test_labels: Vec<usize>,
    pub test_stats: StratumStats,
    pub test_plan: AllocationPlan,
}

impl StratifiedDesign {
    pub fn fit(
        train: &PopulationFrame,
        test: &PopulationFrame,
        features: &[usize],
        k: usize,
        n: usize,
        allocator: Allocator,
        seed: u64,
    ) -> Result<Self> {
        let (partition, train_stats, train_plan) =
            search::stratify_and_allocate(train, features, k, n, allocator, seed)?;
        let test_labels = kmeans::kmeans_assign(&partition, test)?;
        let test_stats = stratum_stats(test, &test_labels)?;
        let test_plan = align_plan(&train_stats, &train_plan, &test_stats)?;
        Ok(Self {
            partition,
            train_stats,
            train_plan,
            test_labels,
            test_stats,
            test_plan,
        })
    }

    pub fn analytic_variance(&self) -> Result<f64> {
        variance::stratified_variance(&self.test_stats, &self.test_plan)
    }
}

/// Checks `spec` against both frames without fitting anything.
pub fn validate_experiment(train: &PopulationFrame, test: &PopulationFrame, spec: &ExperimentSpec) -> Result<()> {
    if train.covariate_names() != test.covariate_names() {
        return Err(Error::BadConfig("train and test covariates differ".into()));
    }
    if spec.methods.is_empty() {
        return Err(Error::BadConfig("no methods requested".into()));
    }
    if spec.replications < 2 {
        return Err(Error::TooFewReplications {
            min: 2,
            actual: spec.replications,
        });
    }
    let stratified = spec.methods.iter().any(|m| m.is_stratified());
    if stratified && spec.allocators.is_empty() {
        return Err(Error::BadConfig("stratified methods need an allocator".into()));
    }
    let searched = spec.methods.iter().any(|m| matches!(m, Method::SfsKm | Method::SfsKmV));
    if searched && (spec.theta == 0 || spec.theta > train.n_covariates()) {
        return Err(Error::ThetaExceedsP {
            theta: spec.theta,
            p: train.n_covariates(),
        });
    }
    let smallest = train.n_units().min(test.n_units());
    if spec.n == 0 || spec.n > smallest {
        return Err(Error::SampleExceedsPopulation {
            n: spec.n,
            population: smallest,
        });
    }
    if stratified && (spec.k == 0 || spec.k > spec.n) {
        return Err(Error::SampleTooSmall { n: spec.n, k: spec.k });
    }
    Ok(())
}

fn names(frame: &PopulationFrame, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&j| frame.covariate_names()[j].clone()).collect()
}

/// Fits every requested method on `train` and estimates its sampling variance
/// on `test`. Simple random sampling is always evaluated as the baseline and
/// listed first.
pub fn run_experiment(
    train: &PopulationFrame,
    test: &PopulationFrame,
    spec: &ExperimentSpec,
    dataset: &str,
) -> Result<EvaluationReport> {
    validate_experiment(train, test, spec)?;
    let (n, reps, seed) = (spec.n, spec.replications, spec.seed);
    let variance_seed = |tag: u64, sub: u64| rng::derive_seed(seed, &[1, tag, sub]);

    let srs_var = estimate_sampling_variance(|r| baselines::srs_mean(test, n, r), reps, variance_seed(0, 0))?;
    let mut results = vec![MethodResult {
        method: Method::Srs,
        allocator: None,
        variance: srs_var,
        variance_reduction_percent: variance_reduction_rate(srs_var, srs_var)?,
        variables: Vec::new(),
        analytic_variance: None,
    }];

    let mut wcss_selection: Option<search::SelectionResult> = None;
    for (tag, &method) in (1u64..).zip(&spec.methods) {
        match method {
            Method::Srs => {}
            Method::Cuped => {
                let j = baselines::pick_covariate(train)?;
                let model = baselines::cuped_fit(train, j)?.for_population(test);
                let v = estimate_sampling_variance(
                    |r| baselines::cuped_sample_mean(test, &model, n, r),
                    reps,
                    variance_seed(tag, 0),
                )?;
                results.push(MethodResult {
                    method,
                    allocator: None,
                    variance: v,
                    variance_reduction_percent: variance_reduction_rate(v, srs_var)?,
                    variables: names(train, &[j]),
                    analytic_variance: None,
                });
            }
            Method::Coss => {
                let j = baselines::pick_covariate(train)?;
                let sampler = CossSampler::new(test, j)?;
                let v = estimate_sampling_variance(|r| sampler.sample_mean(n, r), reps, variance_seed(tag, 0))?;
                results.push(MethodResult {
                    method,
                    allocator: None,
                    variance: v,
                    variance_reduction_percent: variance_reduction_rate(v, srs_var)?,
                    variables: names(train, &[j]),
                    analytic_variance: None,
                });
            }
            Method::KMeans | Method::SfsKm | Method::SfsKmV => {
                for (sub, &allocator) in (0u64..).zip(&spec.allocators) {
                    let (features, fit_seed) = match method {
                        Method::KMeans => (
                            (0..train.n_covariates()).collect::<Vec<_>>(),
                            rng::derive_seed(seed, &[3]),
                        ),
                        Method::SfsKm => {
                            if wcss_selection.is_none() {
                                let s = search::sfs_wcss(train, spec.k, spec.theta, rng::derive_seed(seed, &[4]))?;
                                wcss_selection = Some(s);
                            }
                            let s = wcss_selection.as_ref().expect("just computed");
                            (s.selected.clone(), s.final_seed.unwrap_or(0))
                        }
                        _ => {
                            let s = search::sfs_variance_reduction(
                                train,
                                spec.k,
                                spec.theta,
                                n,
                                allocator,
                                rng::derive_seed(seed, &[5, sub]),
                            )?;
                            (s.selected, s.final_seed.unwrap_or(0))
                        }
                    };
                    let design = StratifiedDesign::fit(train, test, &features, spec.k, n, allocator, fit_seed)?;
                    let sampler = StratifiedSampler::new(test, &design.test_labels, &design.test_plan)?;
                    let v = estimate_sampling_variance(
                        |r| Ok(sampler.sample_mean(r)),
                        reps,
                        variance_seed(tag, sub),
                    )?;
                    results.push(MethodResult {
                        method,
                        allocator: Some(allocator),
                        variance: v,
                        variance_reduction_percent: variance_reduction_rate(v, srs_var)?,
                        variables: names(train, &features),
                        analytic_variance: Some(design.analytic_variance()?),
                    });
                }
            }
        }
    }

    Ok(EvaluationReport {
        dataset: dataset.to_string(),
        methods: results,
        replications: reps,
        n,
        k: spec.k,
        theta: spec.theta,
        p: train.n_covariates(),
        population_train: train.n_units(),
        population_test: test.n_units(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(y: Vec<f64>) -> PopulationFrame {
        let x = (0..y.len()).map(|i| i as f64).collect();
        PopulationFrame::new(vec!["X1".into()], vec![x], "Y", y).unwrap()
    }

    #[test]
    fn constant_sampler_has_zero_variance() {
        assert_eq!(estimate_sampling_variance(|_| Ok(3.5), 100, 0).unwrap(), 0.0);
        assert!(matches!(
            estimate_sampling_variance(|_| Ok(1.0), 1, 0),
            Err(Error::TooFewReplications { .. })
        ));
    }

    #[test]
    fn reduction_rate() {
        assert_eq!(variance_reduction_rate(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(variance_reduction_rate(1.0, 2.0).unwrap(), 50.0);
        assert_eq!(variance_reduction_rate(4.0, 2.0).unwrap(), -100.0);
        assert_eq!(variance_reduction_rate(1.0, 0.0), Err(Error::ZeroBaselineVariance));
    }

    #[test]
    fn census_plan_returns_population_mean() {
        let f = frame(vec![1.0, 2.0, 3.0, 10.0, 20.0]);
        let labels = [0, 0, 0, 1, 1];
        let s = StratifiedSampler::new(&f, &labels, &AllocationPlan::manual(vec![3, 2])).unwrap();
        let mut r = rng::seeded(0);
        assert!((s.sample_mean(&mut r) - f.outcome_mean()).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_two_by_two() {
        // strata {0, 2} and {4, 10}; each draw takes one unit from each,
        // 4 equally likely outcomes: 0.5 * (a + b)
        let f = frame(vec![0.0, 2.0, 4.0, 10.0]);
        let labels = [0, 0, 1, 1];
        let outcomes: Vec<f64> = [0.0, 2.0]
            .iter()
            .flat_map(|a| [4.0, 10.0].map(|b| 0.5 * (a + b)))
            .collect();
        let exhaustive = population_variance(&outcomes);
        assert!((exhaustive - 2.5).abs() < 1e-12);
        let s = StratifiedSampler::new(&f, &labels, &AllocationPlan::manual(vec![1, 1])).unwrap();
        let mc = estimate_sampling_variance(|r| Ok(s.sample_mean(r)), 10_000, 4).unwrap();
        assert!((mc / exhaustive - 1.0).abs() < 0.05, "{mc}");
    }

    #[test]
    fn sampler_rejects_infeasible_plans() {
        let f = frame(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            StratifiedSampler::new(&f, &[0, 0, 1], &AllocationPlan::manual(vec![3, 1])),
            Err(Error::OverAllocated { stratum: 0, .. })
        ));
        assert!(matches!(
            StratifiedSampler::new(&f, &[0, 0, 1], &AllocationPlan::manual(vec![1])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    fn stats_with_ids(ids: Vec<usize>, sizes: Vec<usize>) -> StratumStats {
        let k = sizes.len();
        let mut s = StratumStats::from_parts(sizes, vec![0.0; k], vec![1.0; k]).unwrap();
        s.stratum_ids = ids;
        s
    }

    #[test]
    fn aligned_plan_unchanged_when_feasible() {
        let train = stats_with_ids(vec![0, 1, 2], vec![50, 30, 20]);
        let test = stats_with_ids(vec![0, 1, 2], vec![40, 40, 20]);
        let plan = AllocationPlan::manual(vec![5, 3, 2]);
        assert_eq!(align_plan(&train, &plan, &test).unwrap().sizes, vec![5, 3, 2]);
    }

    #[test]
    fn aligned_plan_moves_excess_by_capacity() {
        let train = stats_with_ids(vec![0, 1], vec![50, 50]);
        let test = stats_with_ids(vec![0, 1], vec![2, 98]);
        let plan = AllocationPlan::manual(vec![5, 5]);
        let aligned = align_plan(&train, &plan, &test).unwrap();
        assert_eq!(aligned.sizes, vec![2, 8]);
    }

    #[test]
    fn aligned_plan_handles_missing_strata() {
        // stratum 1 is empty on test; stratum 3 exists only on test
        let train = stats_with_ids(vec![0, 1, 2], vec![10, 10, 10]);
        let test = stats_with_ids(vec![0, 2, 3], vec![10, 10, 10]);
        let plan = AllocationPlan::manual(vec![2, 4, 3]);
        let aligned = align_plan(&train, &plan, &test).unwrap();
        assert_eq!(aligned.sizes.iter().sum::<usize>(), 9);
        assert!(aligned.sizes.iter().all(|&s| s >= 1));
        assert_eq!(aligned.sizes[0], 2 + 1);
    }

    #[test]
    fn method_parsing() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("sfs_km_v".parse::<Method>().unwrap(), Method::SfsKmV);
        assert!("nope".parse::<Method>().is_err());
        assert_eq!(serde_json::to_string(&Method::SfsKmV).unwrap(), "\"SFS-KM-V\"");
    }
}
