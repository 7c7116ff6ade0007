//! Sequential forward search over stratification variables.
//!
//! Each step tries every unselected covariate `f`, stratifies the training
//! frame by K-means on `F + {f}` and scores the result; the best candidate is
//! kept only if it strictly improves on the incumbent score. The variance
//! objective scores a stratification by the stratified-mean sampling variance
//! after allocating `n` units; the WCSS objective is the conventional
//! clustering-only criterion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{self, AllocationBounds, AllocationMethod, AllocationPlan};
use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::kmeans::{self, StratumPartition};
use crate::rng;
use crate::stats::{stratum_stats, StratumStats};
use crate::variance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocator {
    Proportional,
    Optimal,
}

impl Allocator {
    pub fn allocate(self, stats: &StratumStats, n: usize) -> Result<AllocationPlan> {
        match self {
            Allocator::Proportional => allocation::proportional(stats, n),
            Allocator::Optimal => {
                allocation::optimal(stats, n, &AllocationBounds::default_for(stats, n))
            }
        }
    }

    pub fn method(self) -> AllocationMethod {
        match self {
            Allocator::Proportional => AllocationMethod::Proportional,
            Allocator::Optimal => AllocationMethod::Optimal,
        }
    }
}

impl std::fmt::Display for Allocator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.method().fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    /// Stratified-mean variance after allocating `n` units.
    Variance { n: usize, allocator: Allocator },
    /// Within-cluster sum of squares of the standardized features.
    Wcss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    pub theta: usize,
    pub objective: Objective,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub feature: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub step: usize,
    pub candidates: Vec<CandidateScore>,
    pub chosen: usize,
    pub metric: f64,
    pub accepted: bool,
    /// K-means seed of the chosen candidate's fit.
    pub chosen_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Covariate indices in selection order.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    /// Score of the selected subset; absent when nothing was selected.
    pub final_metric: Option<f64>,
    /// Seed that reproduces the stratification of the selected subset.
    pub final_seed: Option<u64>,
    pub trace: Vec<SearchStep>,
    pub terminated_early: bool,
    pub evaluations: usize,
    pub config: SearchConfig,
}

/// Seed for the K-means fit of candidate `feature` at `step`.
pub fn candidate_seed(seed: u64, step: usize, feature: usize) -> u64 {
    rng::derive_seed(seed, &[step as u64, feature as u64])
}

/// Fits K-means on `features`, summarizes the training strata and allocates
/// `n` units across them.
pub fn stratify_and_allocate(
    frame: &PopulationFrame,
    features: &[usize],
    k: usize,
    n: usize,
    allocator: Allocator,
    seed: u64,
) -> Result<(StratumPartition, StratumStats, AllocationPlan)> {
    let partition = kmeans::kmeans_fit(frame, features, k, seed)?;
    let stats = stratum_stats(frame, &partition.train_labels)?;
    let plan = allocator.allocate(&stats, n)?;
    Ok((partition, stats, plan))
}

fn score(frame: &PopulationFrame, features: &[usize], cfg: &SearchConfig, seed: u64) -> Result<f64> {
    match cfg.objective {
        Objective::Variance { n, allocator } => {
            let (_, stats, plan) = stratify_and_allocate(frame, features, cfg.k, n, allocator, seed)?;
            variance::stratified_variance(&stats, &plan)
        }
        Objective::Wcss => {
            let partition = kmeans::kmeans_fit(frame, features, cfg.k, seed)?;
            kmeans::wcss(&partition, frame)
        }
    }
}

/// Checks `cfg` against `frame` without fitting anything.
pub fn validate_search(frame: &PopulationFrame, cfg: &SearchConfig) -> Result<()> {
    let p = frame.n_covariates();
    if cfg.theta > p {
        return Err(Error::ThetaExceedsP { theta: cfg.theta, p });
    }
    let population = frame.n_units();
    if cfg.k == 0 || cfg.k > population {
        return Err(Error::KExceedsPopulation { k: cfg.k, n: population });
    }
    if let Objective::Variance { n, .. } = cfg.objective {
        if n < cfg.k {
            return Err(Error::SampleTooSmall { n, k: cfg.k });
        }
        if n > population {
            return Err(Error::SampleExceedsPopulation { n, population });
        }
    }
    Ok(())
}

pub fn forward_search(frame: &PopulationFrame, cfg: &SearchConfig) -> Result<SelectionResult> {
    validate_search(frame, cfg)?;
    let p = frame.n_covariates();
    let mut selected: Vec<usize> = Vec::new();
    let mut incumbent = f64::INFINITY;
    let mut final_seed = None;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut terminated_early = false;

    while selected.len() < cfg.theta {
        let step = selected.len();
        let candidates: Vec<usize> = (0..p).filter(|f| !selected.contains(f)).collect();
        let scores = candidates
            .par_iter()
            .map(|&f| {
                let mut subset = selected.clone();
                subset.push(f);
                score(frame, &subset, cfg, candidate_seed(cfg.seed, step, f))
                    .map(|metric| CandidateScore { feature: f, metric })
            })
            .collect::<Result<Vec<_>>>()?;
        evaluations += scores.len();
        // candidates are in increasing index order, so the first minimum wins ties
        let best = scores
            .iter()
            .fold(None::<&CandidateScore>, |acc, c| match acc {
                Some(b) if b.metric <= c.metric => Some(b),
                _ => Some(c),
            })
            .expect("at least one unselected covariate");
        let (chosen, metric) = (best.feature, best.metric);
        let accepted = metric < incumbent;
        let chosen_seed = candidate_seed(cfg.seed, step, chosen);
        trace.push(SearchStep {
            step,
            candidates: scores,
            chosen,
            metric,
            accepted,
            chosen_seed,
        });
        if !accepted {
            terminated_early = true;
            break;
        }
        selected.push(chosen);
        incumbent = metric;
        final_seed = Some(chosen_seed);
    }

    Ok(SelectionResult {
        selected_names: selected
            .iter()
            .map(|&j| frame.covariate_names()[j].clone())
            .collect(),
        selected,
        final_metric: incumbent.is_finite().then_some(incumbent),
        final_seed,
        trace,
        terminated_early,
        evaluations,
        config: cfg.clone(),
    })
}

/// Forward search scored by the stratified-mean variance.
pub fn sfs_variance_reduction(
    frame: &PopulationFrame,
    k: usize,
    theta: usize,
    n: usize,
    allocator: Allocator,
    seed: u64,
) -> Result<SelectionResult> {
    forward_search(
        frame,
        &SearchConfig {
            k,
            theta,
            objective: Objective::Variance { n, allocator },
            seed,
        },
    )
}

/// Forward search scored by within-cluster sum of squares.
pub fn sfs_wcss(frame: &PopulationFrame, k: usize, theta: usize, seed: u64) -> Result<SelectionResult> {
    forward_search(
        frame,
        &SearchConfig {
            k,
            theta,
            objective: Objective::Wcss,
            seed,
        },
    )
}
