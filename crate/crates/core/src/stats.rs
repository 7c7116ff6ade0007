use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PopulationFrame;

/// Per-stratum outcome summaries under the finite-population (divide by
/// `N_k`) variance convention. Empty strata are dropped; `stratum_ids[k]` is
/// the original label of the k-th retained stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    pub stratum_ids: Vec<usize>,
    pub sizes: Vec<usize>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub overall_mean: f64,
    pub overall_variance: f64,
}

impl StratumStats {
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn population(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Position of an original label among the retained strata.
    pub fn position_of(&self, label: usize) -> Option<usize> {
        self.stratum_ids.iter().position(|&id| id == label)
    }

    /// Builds stats directly from sizes, means and variances (labels 0..K).
    /// Overall mean and variance follow from the law of total variance.
    pub fn from_parts(sizes: Vec<usize>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = sizes.len();
        if means.len() != k || variances.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: means.len().min(variances.len()),
            });
        }
        if k == 0 || sizes.contains(&0) {
            return Err(Error::InvalidFrame("strata must be nonempty".into()));
        }
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidFrame("stratum variances must be finite and >= 0".into()));
        }
        let n: f64 = sizes.iter().sum::<usize>() as f64;
        let overall_mean = sizes.iter().zip(&means).map(|(&s, m)| s as f64 * m).sum::<f64>() / n;
        let overall_variance = sizes
            .iter()
            .zip(means.iter().zip(&variances))
            .map(|(&s, (m, v))| s as f64 * (v + (m - overall_mean).powi(2)))
            .sum::<f64>()
            / n;
        Ok(Self {
            stratum_ids: (0..k).collect(),
            sizes,
            means,
            variances,
            overall_mean,
            overall_variance,
        })
    }
}

fn mean_and_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, count) = values.clone().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    let mean = sum / count as f64;
    let ss = values.map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, ss / count as f64)
}

/// Per-stratum outcome statistics for a labeling of the frame's units.
pub fn stratum_stats(frame: &PopulationFrame, labels: &[usize]) -> Result<StratumStats> {
    let y = frame.outcome();
    if labels.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut stats = StratumStats {
        stratum_ids: Vec::new(),
        sizes: Vec::new(),
        means: Vec::new(),
        variances: Vec::new(),
        overall_mean: 0.0,
        overall_variance: 0.0,
    };
    for (id, rows) in members.iter().enumerate().filter(|(_, r)| !r.is_empty()) {
        let (m, v) = mean_and_variance(rows.iter().map(|&i| y[i]));
        stats.stratum_ids.push(id);
        stats.sizes.push(rows.len());
        stats.means.push(m);
        stats.variances.push(v);
    }
    let (m, v) = mean_and_variance(y.iter().copied());
    stats.overall_mean = m;
    stats.overall_variance = v;
    Ok(stats)
}
