//! Synthetic populations from a sparse linear model with AR(1)-correlated
//! Gaussian covariates and a target signal-to-noise ratio.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::rng;

/// 1-based positions of the nonzero coefficients in both patterns.
pub const ACTIVE_POSITIONS: [usize; 5] = [1, 5, 9, 13, 17];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaKind {
    /// Five equal unit coefficients.
    Type1,
    /// Decreasing coefficients 10, 8, 6, 4, 2.
    Type2,
}

pub fn beta_pattern(kind: BetaKind, p: usize) -> Result<Vec<f64>> {
    if p < 17 {
        return Err(Error::PTooSmall(p));
    }
    let values = match kind {
        BetaKind::Type1 => [1.0; 5],
        BetaKind::Type2 => [10.0, 8.0, 6.0, 4.0, 2.0],
    };
    let mut beta = vec![0.0; p];
    for (pos, v) in ACTIVE_POSITIONS.iter().zip(values) {
        beta[pos - 1] = v;
    }
    Ok(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub population: usize,
    pub beta: Vec<f64>,
    pub snr: f64,
    pub rho: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(population: usize, kind: BetaKind, p: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            population,
            beta: beta_pattern(kind, p)?,
            snr: 1.0,
            rho: 0.35,
            seed,
        })
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.population == 0 {
            return bad("population must be at least 1");
        }
        if self.beta.is_empty() {
            return bad("need at least one covariate");
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return bad("snr must be positive");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return bad("coefficients must be finite");
        }
        if !(self.signal_variance() > 0.0) {
            return bad("coefficient vector carries no signal");
        }
        Ok(())
    }

    /// `beta' Sigma beta` with `Sigma_ij = rho^|i-j|`.
    pub fn signal_variance(&self) -> f64 {
        let p = self.p();
        let mut total = 0.0;
        for i in 0..p {
            for j in 0..p {
                total += self.beta[i] * self.beta[j] * self.rho.powi(i.abs_diff(j) as i32);
            }
        }
        total
    }

    pub fn noise_variance(&self) -> f64 {
        self.signal_variance() / self.snr
    }
}

pub fn covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("X{j}")).collect()
}

pub const OUTCOME_NAME: &str = "Y";

pub fn generate(config: &SynthConfig) -> Result<PopulationFrame> {
    config.validate()?;
    let (n, p) = (config.population, config.p());
    let rho = config.rho;
    let innovation = (1.0 - rho * rho).sqrt();
    let noise_sd = config.noise_variance().sqrt();
    let mut rng = rng::seeded(config.seed);
    let mut columns = vec![Vec::with_capacity(n); p];
    let mut outcome = Vec::with_capacity(n);
    for _ in 0..n {
        let mut prev = 0.0;
        let mut y = 0.0;
        for (j, col) in columns.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = if j == 0 { z } else { rho * prev + innovation * z };
            y += config.beta[j] * x;
            col.push(x);
            prev = x;
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        outcome.push(y + noise_sd * eps);
    }
    PopulationFrame::new(covariate_names(p), columns, OUTCOME_NAME, outcome)
}

/// Independent training and testing populations from one master seed.
pub fn generate_train_test(config: &SynthConfig) -> Result<(PopulationFrame, PopulationFrame)> {
    let train = SynthConfig {
        seed: rng::derive_seed(config.seed, &[0]),
        ..config.clone()
    };
    let test = SynthConfig {
        seed: rng::derive_seed(config.seed, &[1]),
        ..config.clone()
    };
    Ok((generate(&train)?, generate(&test)?))
}
