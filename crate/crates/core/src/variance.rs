//! Closed-form sampling variances of the stratified and simple-random sample
//! means under sampling without replacement, and the two-sample t-statistic.

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationPlan;
use crate::error::{Error, Result};
use crate::stats::StratumStats;

/// Group means and the sampling variances of those means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentEstimate {
    pub mean_treatment: f64,
    pub mean_control: f64,
    pub var_treatment: f64,
    pub var_control: f64,
}

impl TreatmentEstimate {
    pub fn effect(&self) -> f64 {
        self.mean_treatment - self.mean_control
    }
}

/// `sum_k (N_k / N) * ybar_k`.
pub fn stratified_mean(stratum_means: &[f64], stats: &StratumStats) -> Result<f64> {
    if stratum_means.len() != stats.k() {
        return Err(Error::LengthMismatch {
            expected: stats.k(),
            actual: stratum_means.len(),
        });
    }
    let n = stats.population() as f64;
    Ok(stats
        .sizes
        .iter()
        .zip(stratum_means)
        .map(|(&s, m)| s as f64 / n * m)
        .sum())
}

/// Variance with finite population correction for real-valued stratum sample
/// sizes: `(sum N_k^2 s_k^2 / n_k - sum N_k s_k^2) / N^2`. Strata with zero
/// variance contribute nothing regardless of their size.
pub fn stratified_variance_real(stats: &StratumStats, sizes: &[f64]) -> Result<f64> {
    if sizes.len() != stats.k() {
        return Err(Error::LengthMismatch {
            expected: stats.k(),
            actual: sizes.len(),
        });
    }
    let big_n = stats.population() as f64;
    let mut total = 0.0;
    for (k, (&nk, &var)) in sizes.iter().zip(&stats.variances).enumerate() {
        let size = stats.sizes[k] as f64;
        if !(nk > 0.0) {
            return Err(Error::EmptyAllocation(k));
        }
        if var == 0.0 {
            continue;
        }
        // N_k^2 s^2 / n_k - N_k s^2 = N_k s^2 (N_k - n_k) / n_k
        total += size * var * (size - nk) / nk;
    }
    Ok(total / (big_n * big_n))
}

pub fn stratified_variance(stats: &StratumStats, plan: &AllocationPlan) -> Result<f64> {
    if plan.sizes.len() != stats.k() {
        return Err(Error::LengthMismatch {
            expected: stats.k(),
            actual: plan.sizes.len(),
        });
    }
    for (k, (&nk, &size)) in plan.sizes.iter().zip(&stats.sizes).enumerate() {
        if nk == 0 {
            return Err(Error::EmptyAllocation(k));
        }
        if nk > size {
            return Err(Error::OverAllocated {
                stratum: k,
                allocated: nk,
                size,
            });
        }
    }
    let sizes: Vec<f64> = plan.sizes.iter().map(|&n| n as f64).collect();
    stratified_variance_real(stats, &sizes)
}

fn check_sample(stats: &StratumStats, n: usize) -> Result<()> {
    let population = stats.population();
    if n == 0 {
        return Err(Error::SampleTooSmall { n, k: 1 });
    }
    if n > population {
        return Err(Error::SampleExceedsPopulation { n, population });
    }
    Ok(())
}

/// `(sigma^2 / n)(1 - n / N)`.
pub fn srs_variance(stats: &StratumStats, n: usize) -> Result<f64> {
    check_sample(stats, n)?;
    let big_n = stats.population() as f64;
    let n = n as f64;
    Ok(stats.overall_variance / n * ((big_n - n) / big_n))
}

/// Between-strata term `sum N_k (mu_k - mu)^2 / (n N)`, without the
/// finite-population factor.
pub fn srs_gap(stats: &StratumStats, n: usize) -> Result<f64> {
    check_sample(stats, n)?;
    let big_n = stats.population() as f64;
    let between: f64 = stats
        .sizes
        .iter()
        .zip(&stats.means)
        .map(|(&s, m)| s as f64 * (m - stats.overall_mean).powi(2))
        .sum();
    Ok(between / (n as f64 * big_n))
}

pub fn t_statistic(est: &TreatmentEstimate) -> Result<f64> {
    let var = est.var_treatment + est.var_control;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(est.effect() / var.sqrt())
}
