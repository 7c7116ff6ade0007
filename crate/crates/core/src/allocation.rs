//! Per-stratum sample sizes.
//!
//! Proportional allocation rounds `N_k n / N` by largest remainder. Optimal
//! allocation minimizes `sum_k N_k^2 sigma_k^2 / n_k` over integer box-bounded
//! vectors summing to `n`; the objective is separable and convex in each
//! `n_k`, so handing out units one at a time to the largest marginal decrease
//! reaches an exact minimizer.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::StratumStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMethod {
    Proportional,
    Optimal,
    Manual,
}

impl std::fmt::Display for AllocationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Proportional => "proportional",
            Self::Optimal => "optimal",
            Self::Manual => "manual",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub sizes: Vec<usize>,
    pub total: usize,
    pub method: AllocationMethod,
}

impl AllocationPlan {
    pub fn manual(sizes: Vec<usize>) -> Self {
        Self {
            total: sizes.iter().sum(),
            sizes,
            method: AllocationMethod::Manual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationBounds {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

impl AllocationBounds {
    /// `1 <= n_k <= min(N_k, n)`.
    pub fn default_for(stats: &StratumStats, n: usize) -> Self {
        Self {
            lower: vec![1; stats.k()],
            upper: stats.sizes.iter().map(|&s| s.min(n)).collect(),
        }
    }

    pub fn check(&self, stats: &StratumStats, n: usize) -> Result<()> {
        let k = stats.k();
        if self.lower.len() != k || self.upper.len() != k {
            return Err(Error::InfeasibleBounds(format!(
                "bounds have {}/{} entries for {k} strata",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for i in 0..k {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l < 1 || l > u || u > stats.sizes[i] {
                return Err(Error::InfeasibleBounds(format!(
                    "stratum {i}: need 1 <= {l} <= {u} <= {}",
                    stats.sizes[i]
                )));
            }
        }
        let lo: usize = self.lower.iter().sum();
        let hi: usize = self.upper.iter().sum();
        if n < lo || n > hi {
            return Err(Error::InfeasibleBounds(format!(
                "n = {n} outside [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Largest-remainder rounding of nonnegative real quotas that sum to
/// `total`; remainder ties go to the lower index.
pub(crate) fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Proportional allocation before the zero-raising repair.
pub(crate) fn proportional_rounded(stats: &StratumStats, n: usize) -> Vec<usize> {
    let population = stats.population() as f64;
    let quotas: Vec<f64> = stats
        .sizes
        .iter()
        .map(|&s| s as f64 * n as f64 / population)
        .collect();
    largest_remainder(&quotas, n)
}

pub fn proportional(stats: &StratumStats, n: usize) -> Result<AllocationPlan> {
    let k = stats.k();
    if n < k {
        return Err(Error::SampleTooSmall { n, k });
    }
    if n > stats.population() {
        return Err(Error::SampleExceedsPopulation {
            n,
            population: stats.population(),
        });
    }
    let mut sizes = proportional_rounded(stats, n);
    while let Some(zero) = sizes.iter().position(|&s| s == 0) {
        let donor = (0..k).fold(0, |b, i| if sizes[i] > sizes[b] { i } else { b });
        sizes[donor] -= 1;
        sizes[zero] = 1;
    }
    Ok(AllocationPlan {
        sizes,
        total: n,
        method: AllocationMethod::Proportional,
    })
}

/// Heap entry: larger gain first, then lower stratum index.
#[derive(PartialEq)]
struct Gain {
    value: f64,
    stratum: usize,
}

impl Eq for Gain {}

impl Ord for Gain {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.stratum.cmp(&self.stratum))
    }
}

impl PartialOrd for Gain {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn weights(stats: &StratumStats) -> Vec<f64> {
    stats
        .sizes
        .iter()
        .zip(&stats.variances)
        .map(|(&s, v)| (s as f64).powi(2) * v)
        .collect()
}

/// `sum_k N_k^2 sigma_k^2 / n_k`.
pub fn objective(stats: &StratumStats, sizes: &[usize]) -> f64 {
    weights(stats)
        .iter()
        .zip(sizes)
        .map(|(w, &n)| if *w == 0.0 { 0.0 } else { w / n as f64 })
        .sum()
}

fn marginal_gain(weight: f64, n: usize) -> f64 {
    let n = n as f64;
    weight / (n * (n + 1.0))
}

pub fn optimal(stats: &StratumStats, n: usize, bounds: &AllocationBounds) -> Result<AllocationPlan> {
    optimal_traced(stats, n, bounds, None)
}

pub(crate) fn optimal_traced(
    stats: &StratumStats,
    n: usize,
    bounds: &AllocationBounds,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<AllocationPlan> {
    bounds.check(stats, n)?;
    let w = weights(stats);
    let mut sizes = bounds.lower.clone();
    let mut heap: BinaryHeap<Gain> = (0..stats.k())
        .filter(|&k| sizes[k] < bounds.upper[k])
        .map(|k| Gain {
            value: marginal_gain(w[k], sizes[k]),
            stratum: k,
        })
        .collect();
    let remaining = n - sizes.iter().sum::<usize>();
    if let Some(t) = trace.as_deref_mut() {
        t.push(objective(stats, &sizes));
    }
    for _ in 0..remaining {
        let Gain { stratum, .. } = heap.pop().expect("feasible bounds leave capacity");
        sizes[stratum] += 1;
        if sizes[stratum] < bounds.upper[stratum] {
            heap.push(Gain {
                value: marginal_gain(w[stratum], sizes[stratum]),
                stratum,
            });
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective(stats, &sizes));
        }
    }
    Ok(AllocationPlan {
        sizes,
        total: n,
        method: AllocationMethod::Optimal,
    })
}

pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Number of integer vectors within the bounds summing to `n`.
fn lattice_size(bounds: &AllocationBounds, n: usize) -> u128 {
    let lo: usize = bounds.lower.iter().sum();
    let slack = n - lo;
    // ways[s] = vectors over the processed strata using s units above the lower bounds
    let mut ways = vec![0u128; slack + 1];
    ways[0] = 1;
    for (l, u) in bounds.lower.iter().zip(&bounds.upper) {
        let width = u - l;
        let mut next = vec![0u128; slack + 1];
        for (s, &w) in ways.iter().enumerate().filter(|(_, w)| **w > 0) {
            for extra in 0..=width.min(slack - s) {
                next[s + extra] = next[s + extra].saturating_add(w);
            }
        }
        ways = next;
    }
    ways[slack]
}

/// Exhaustive minimizer, ties to the lexicographically smallest vector.
pub fn brute_force_optimal(
    stats: &StratumStats,
    n: usize,
    bounds: &AllocationBounds,
) -> Result<AllocationPlan> {
    brute_force_optimal_capped(stats, n, bounds, DEFAULT_ENUMERATION_CAP)
}

pub fn brute_force_optimal_capped(
    stats: &StratumStats,
    n: usize,
    bounds: &AllocationBounds,
    cap: u128,
) -> Result<AllocationPlan> {
    bounds.check(stats, n)?;
    let points = lattice_size(bounds, n);
    if points > cap {
        return Err(Error::InstanceTooLarge { points, cap });
    }
    let w = weights(stats);
    let k = stats.k();
    let mut current = bounds.lower.clone();
    let mut best: Option<(f64, Vec<usize>)> = None;

    fn visit(
        i: usize,
        left: usize,
        w: &[f64],
        bounds: &AllocationBounds,
        current: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let k = w.len();
        if i == k - 1 {
            if left < bounds.lower[i] || left > bounds.upper[i] {
                return;
            }
            current[i] = left;
            let value: f64 = w
                .iter()
                .zip(current.iter())
                .map(|(w, &n)| if *w == 0.0 { 0.0 } else { w / n as f64 })
                .sum();
            // lexicographic enumeration order: first strict minimum wins ties
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                *best = Some((value, current.clone()));
            }
            return;
        }
        let rest_lo: usize = bounds.lower[i + 1..].iter().sum();
        let rest_hi: usize = bounds.upper[i + 1..].iter().sum();
        for v in bounds.lower[i]..=bounds.upper[i] {
            if v + rest_lo > left {
                break;
            }
            if v + rest_hi < left {
                continue;
            }
            current[i] = v;
            visit(i + 1, left - v, w, bounds, current, best);
        }
    }

    visit(0, n, &w, bounds, &mut current, &mut best);
    debug_assert_eq!(current.len(), k);
    let (_, sizes) = best.ok_or_else(|| Error::InfeasibleBounds("no feasible vector".into()))?;
    Ok(AllocationPlan {
        sizes,
        total: n,
        method: AllocationMethod::Optimal,
    })
}
