//! Comparison estimators: CUPED control variates, covariate-ordered
//! systematic sampling (COSS) and simple random sampling without replacement.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PopulationFrame;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population covariance and the variance of `x`.
fn cov_var(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let n = x.len() as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / n, sxx / n, syy / n)
}

fn is_constant(var: f64, m: f64) -> bool {
    !(var > 1e-24 * m.abs().max(1.0).powi(2))
}

/// Index of the covariate with the largest absolute Pearson correlation with
/// the outcome. Constant covariates score zero; ties go to the lower index.
pub fn pick_covariate(frame: &PopulationFrame) -> Result<usize> {
    let y = frame.outcome();
    let mut best: Option<(usize, f64)> = None;
    for j in 0..frame.n_covariates() {
        let x = frame.covariate(j);
        let (c, vx, vy) = cov_var(x, y);
        if is_constant(vx, mean(x)) {
            continue;
        }
        let r = if vy > 0.0 { (c / (vx * vy).sqrt()).abs() } else { 0.0 };
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((j, r));
        }
    }
    best.map(|(j, _)| j).ok_or(Error::AllConstantCovariates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CupedModel {
    pub covariate_index: usize,
    pub theta_coefficient: f64,
    /// Mean of the covariate on the population the estimator is applied to.
    pub covariate_population_mean: f64,
}

impl CupedModel {
    /// Same slope, with the covariate mean taken from `population`.
    pub fn for_population(&self, population: &PopulationFrame) -> Self {
        Self {
            covariate_population_mean: mean(population.covariate(self.covariate_index)),
            ..self.clone()
        }
    }
}

/// Regression slope `cov(X, Y) / var(X)` on `train`. The covariate mean is
/// initialised from `train`; use [`CupedModel::for_population`] to rebase it.
pub fn cuped_fit(train: &PopulationFrame, covariate_index: usize) -> Result<CupedModel> {
    let p = train.n_covariates();
    if covariate_index >= p {
        return Err(Error::BadFeatureIndex {
            index: covariate_index,
            p,
        });
    }
    let x = train.covariate(covariate_index);
    let (c, vx, _) = cov_var(x, train.outcome());
    if is_constant(vx, mean(x)) {
        return Err(Error::ZeroVarianceCovariate(covariate_index));
    }
    Ok(CupedModel {
        covariate_index,
        theta_coefficient: c / vx,
        covariate_population_mean: mean(x),
    })
}

/// `ybar - theta (xbar - mu_x)`.
pub fn cuped_adjusted_mean(sample_mean: f64, sample_covariate_mean: f64, model: &CupedModel) -> f64 {
    sample_mean - model.theta_coefficient * (sample_covariate_mean - model.covariate_population_mean)
}

/// Draws without replacement and returns the CUPED-adjusted sample mean.
pub fn cuped_sample_mean<R: Rng + ?Sized>(
    frame: &PopulationFrame,
    model: &CupedModel,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    check_n(frame, n)?;
    let x = frame.covariate(model.covariate_index);
    let y = frame.outcome();
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in index::sample(rng, frame.n_units(), n) {
        sx += x[i];
        sy += y[i];
    }
    Ok(cuped_adjusted_mean(sy / n as f64, sx / n as f64, model))
}

fn check_n(frame: &PopulationFrame, n: usize) -> Result<()> {
    let population = frame.n_units();
    if n == 0 {
        return Err(Error::SampleTooSmall { n, k: 1 });
    }
    if n > population {
        return Err(Error::SampleExceedsPopulation { n, population });
    }
    Ok(())
}

/// Systematic sampler over units sorted by one covariate.
#[derive(Debug, Clone)]
pub struct CossSampler {
    /// Outcomes in covariate order (stable for ties).
    sorted_outcome: Vec<f64>,
}

impl CossSampler {
    pub fn new(frame: &PopulationFrame, covariate_index: usize) -> Result<Self> {
        let p = frame.n_covariates();
        if covariate_index >= p {
            return Err(Error::BadFeatureIndex {
                index: covariate_index,
                p,
            });
        }
        let x = frame.covariate(covariate_index);
        let mut order: Vec<usize> = (0..frame.n_units()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let y = frame.outcome();
        Ok(Self {
            sorted_outcome: order.iter().map(|&i| y[i]).collect(),
        })
    }

    /// Sorted positions `floor((i + offset) N / n)` for `i < n`.
    pub fn positions(population: usize, n: usize, offset: f64) -> impl Iterator<Item = usize> {
        let stride = population as f64 / n as f64;
        (0..n).map(move |i| (((i as f64 + offset) * stride).floor() as usize).min(population - 1))
    }

    pub fn mean_at_offset(&self, n: usize, offset: f64) -> f64 {
        let total: f64 = Self::positions(self.sorted_outcome.len(), n, offset)
            .map(|pos| self.sorted_outcome[pos])
            .sum();
        total / n as f64
    }

    pub fn sample_mean<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<f64> {
        let population = self.sorted_outcome.len();
        if n == 0 || n > population {
            return Err(Error::SampleExceedsPopulation { n, population });
        }
        Ok(self.mean_at_offset(n, rng.random::<f64>()))
    }
}

pub fn coss_mean<R: Rng + ?Sized>(
    frame: &PopulationFrame,
    covariate_index: usize,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    check_n(frame, n)?;
    CossSampler::new(frame, covariate_index)?.sample_mean(n, rng)
}

/// Mean outcome of a uniform without-replacement sample of size `n`.
pub fn srs_mean<R: Rng + ?Sized>(frame: &PopulationFrame, n: usize, rng: &mut R) -> Result<f64> {
    check_n(frame, n)?;
    let y = frame.outcome();
    let total: f64 = index::sample(rng, frame.n_units(), n).into_iter().map(|i| y[i]).sum();
    Ok(total / n as f64)
}
