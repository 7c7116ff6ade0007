//! Stratification by K-means on a covariate subset.
//!
//! Features are z-scored with parameters fitted on the training frame and the
//! same standardizer is reused when test units are assigned to the fitted
//! centroids. Fitting is Lloyd's algorithm from a k-means++ seeding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::rng::{self, Rng};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            restarts: 1,
        }
    }
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    fn fit(frame: &PopulationFrame, features: &[usize]) -> Self {
        let n = frame.n_units() as f64;
        let mut means = Vec::with_capacity(features.len());
        let mut scales = Vec::with_capacity(features.len());
        for &f in features {
            let x = frame.covariate(f);
            let mean = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            // constant columns: summation roundoff leaves sd ~ 1e-17 instead of 0
            let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
            means.push(mean);
            scales.push(scale);
        }
        Self { means, scales }
    }
}

/// A fitted stratifier. Centroids live in standardized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumPartition {
    pub feature_subset: Vec<usize>,
    pub standardizer: Standardizer,
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    pub seed: u64,
    pub options: KMeansOptions,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub train_labels: Vec<usize>,
}

/// Row-major standardized points.
struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    fn extract(frame: &PopulationFrame, features: &[usize], st: &Standardizer) -> Self {
        let n = frame.n_units();
        let dim = features.len();
        let mut data = vec![0.0; n * dim];
        for (d, &f) in features.iter().enumerate() {
            let (m, s) = (st.means[d], st.scales[d]);
            for (i, &v) in frame.covariate(f).iter().enumerate() {
                data[i * dim + d] = (v - m) / s;
            }
        }
        Self { data, dim }
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign_all(points: &Points, centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) {
    for i in 0..points.len() {
        let (k, d) = nearest(points.row(i), centroids);
        labels[i] = k;
        dists[i] = d;
    }
}

fn plus_plus_seed(points: &Points, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // roundoff can leave target just above the final partial sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

struct LloydOutcome {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    iterations: usize,
    converged: bool,
    wcss: f64,
}

/// Moves the point farthest from its centroid into each empty cluster, taken
/// only from clusters that keep at least one member.
fn repair_empty(
    points: &Points,
    centroids: &mut [Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        let Some(i) = donor else { continue };
        if dists[i] == 0.0 {
            continue;
        }
        counts[labels[i]] -= 1;
        counts[empty] += 1;
        labels[i] = empty;
        dists[i] = 0.0;
        centroids[empty] = points.row(i).to_vec();
    }
}

fn lloyd(
    points: &Points,
    mut centroids: Vec<Vec<f64>>,
    opts: &KMeansOptions,
    mut history: Option<&mut Vec<f64>>,
) -> LloydOutcome {
    let n = points.len();
    let k = centroids.len();
    let dim = points.dim;
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        assign_all(points, &centroids, &mut labels, &mut dists);
        repair_empty(points, &mut centroids, &mut labels, &mut dists);
        if let Some(h) = history.as_deref_mut() {
            h.push(dists.iter().sum());
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let l = labels[i];
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let updated: Vec<f64> = sums[c].iter().map(|s| s * inv).collect();
            shift = shift.max(sq_dist(&updated, &centroids[c]).sqrt());
            centroids[c] = updated;
        }
        if shift < opts.tol {
            converged = true;
            break;
        }
    }
    assign_all(points, &centroids, &mut labels, &mut dists);
    LloydOutcome {
        centroids,
        labels,
        iterations,
        converged,
        wcss: dists.iter().sum(),
    }
}

fn validate(frame: &PopulationFrame, features: &[usize]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::BadFeatureSubset("empty feature subset".into()));
    }
    let p = frame.n_covariates();
    for (i, &f) in features.iter().enumerate() {
        if f >= p {
            return Err(Error::BadFeatureIndex { index: f, p });
        }
        if features[..i].contains(&f) {
            return Err(Error::BadFeatureSubset(format!("feature {f} repeated")));
        }
    }
    Ok(())
}

/// Fits K-means with the default options.
pub fn kmeans_fit(
    frame: &PopulationFrame,
    features: &[usize],
    k: usize,
    seed: u64,
) -> Result<StratumPartition> {
    kmeans_fit_with(frame, features, k, seed, &KMeansOptions::default())
}

pub fn kmeans_fit_with(
    frame: &PopulationFrame,
    features: &[usize],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<StratumPartition> {
    validate(frame, features)?;
    let n = frame.n_units();
    if k == 0 || k > n {
        return Err(Error::KExceedsPopulation { k, n });
    }
    let standardizer = Standardizer::fit(frame, features);
    let points = Points::extract(frame, features, &standardizer);
    let mut best: Option<LloydOutcome> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = if restart == 0 {
            rng::seeded(seed)
        } else {
            rng::seeded(rng::derive_seed(seed, &[restart as u64]))
        };
        let init = plus_plus_seed(&points, k, &mut rng);
        let run = lloyd(&points, init, opts, None);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(StratumPartition {
        feature_subset: features.to_vec(),
        standardizer,
        centroids: best.centroids,
        k,
        seed,
        options: *opts,
        iterations: best.iterations,
        converged: best.converged,
        train_labels: best.labels,
    })
}

/// Runs Lloyd iterations from caller-supplied centroids (standardized space),
/// skipping the k-means++ seeding. Used for warm-started refinement.
pub fn kmeans_fit_from(
    frame: &PopulationFrame,
    features: &[usize],
    initial_centroids: Vec<Vec<f64>>,
    opts: &KMeansOptions,
) -> Result<StratumPartition> {
    validate(frame, features)?;
    let k = initial_centroids.len();
    if k == 0 || k > frame.n_units() {
        return Err(Error::KExceedsPopulation {
            k,
            n: frame.n_units(),
        });
    }
    if initial_centroids.iter().any(|c| c.len() != features.len()) {
        return Err(Error::LengthMismatch {
            expected: features.len(),
            actual: initial_centroids[0].len(),
        });
    }
    let standardizer = Standardizer::fit(frame, features);
    let points = Points::extract(frame, features, &standardizer);
    let run = lloyd(&points, initial_centroids, opts, None);
    Ok(StratumPartition {
        feature_subset: features.to_vec(),
        standardizer,
        centroids: run.centroids,
        k,
        seed: 0,
        options: *opts,
        iterations: run.iterations,
        converged: run.converged,
        train_labels: run.labels,
    })
}

fn check_frame(partition: &StratumPartition, frame: &PopulationFrame) -> Result<()> {
    let p = frame.n_covariates();
    match partition.feature_subset.iter().find(|&&f| f >= p) {
        Some(&index) => Err(Error::BadFeatureIndex { index, p }),
        None => Ok(()),
    }
}

/// Nearest-centroid labels for every unit of `frame`, using the partition's
/// training standardizer.
pub fn kmeans_assign(partition: &StratumPartition, frame: &PopulationFrame) -> Result<Vec<usize>> {
    check_frame(partition, frame)?;
    let points = Points::extract(frame, &partition.feature_subset, &partition.standardizer);
    Ok((0..points.len())
        .map(|i| nearest(points.row(i), &partition.centroids).0)
        .collect())
}

/// Within-cluster sum of squared standardized distances.
pub fn wcss(partition: &StratumPartition, frame: &PopulationFrame) -> Result<f64> {
    check_frame(partition, frame)?;
    let points = Points::extract(frame, &partition.feature_subset, &partition.standardizer);
    Ok((0..points.len())
        .map(|i| nearest(points.row(i), &partition.centroids).1)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_1d(x: &[f64]) -> PopulationFrame {
        PopulationFrame::new(vec!["x".into()], vec![x.to_vec()], "y", vec![0.0; x.len()]).unwrap()
    }

    fn frame_cols(cols: Vec<Vec<f64>>) -> PopulationFrame {
        let n = cols[0].len();
        let names = (0..cols.len()).map(|j| format!("x{j}")).collect();
        PopulationFrame::new(names, cols, "y", vec![0.0; n]).unwrap()
    }

    /// Exhaustive 2-partition search; returns the minimizing label vector
    /// with the cluster containing unit 0 labeled 0.
    fn brute_force_two_means(x: &[f64]) -> (Vec<usize>, f64) {
        let n = x.len();
        let mut best = (Vec::new(), f64::INFINITY);
        for mask in 0u32..(1 << n) {
            if mask & 1 == 1 || mask == 0 {
                continue;
            }
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut cost = 0.0;
            for c in 0..2 {
                let members: Vec<f64> = (0..n).filter(|&i| labels[i] == c).map(|i| x[i]).collect();
                let m = members.iter().sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            }
            if cost < best.1 {
                best = (labels, cost);
            }
        }
        best
    }

    fn canonical(labels: &[usize]) -> Vec<usize> {
        let mut map = Vec::new();
        labels
            .iter()
            .map(|l| match map.iter().position(|m| m == l) {
                Some(p) => p,
                None => {
                    map.push(*l);
                    map.len() - 1
                }
            })
            .collect()
    }

    #[test]
    fn two_well_separated_pairs() {
        let x = [0.0, 0.1, 10.0, 10.1];
        let (oracle, _) = brute_force_two_means(&x);
        assert_eq!(oracle, vec![0, 0, 1, 1]);
        let f = frame_1d(&x);
        for seed in 0..10 {
            let part = kmeans_fit(&f, &[0], 2, seed).unwrap();
            assert_eq!(canonical(&part.train_labels), oracle);
            assert!(part.converged);
        }
    }

    #[test]
    fn wcss_of_optimal_pair_partition() {
        // mean 5.05, population variance (2*5.05^2 + 2*4.95^2)/4 = 25.0025;
        // each pair deviates +-0.05 raw from its centroid, so the raw WCSS is
        // 4 * 0.0025 = 0.01 and the standardized WCSS is 0.01 / 25.0025.
        let x = [0.0, 0.1, 10.0, 10.1];
        let f = frame_1d(&x);
        let part = kmeans_fit(&f, &[0], 2, 1).unwrap();
        assert!((part.standardizer.means[0] - 5.05).abs() < 1e-12);
        assert!((part.standardizer.scales[0].powi(2) - 25.0025).abs() < 1e-10);
        let w = wcss(&part, &f).unwrap();
        assert!((w - 0.01 / 25.0025).abs() < 1e-14, "{w}");
        let (_, raw_cost) = brute_force_two_means(&x);
        assert!((w - raw_cost / 25.0025).abs() < 1e-14);
    }

    #[test]
    fn single_cluster() {
        let f = frame_1d(&[1.0, 2.0, 4.0, 9.0, -3.0]);
        let part = kmeans_fit(&f, &[0], 1, 5).unwrap();
        assert!(part.train_labels.iter().all(|&l| l == 0));
        assert!(part.centroids[0][0].abs() < 1e-12);
        assert!((wcss(&part, &f).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn saturated_clusters() {
        let f = frame_cols(vec![vec![3.0, -1.0, 7.5, 2.2, 0.0], vec![1.0, 1.0, 0.0, 5.0, 2.0]]);
        let part = kmeans_fit(&f, &[0, 1], 5, 11).unwrap();
        let mut seen = part.train_labels.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(wcss(&part, &f).unwrap(), 0.0);
    }

    #[test]
    fn assignment_reproduces_training_labels() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 * 0.3).collect();
        let z: Vec<f64> = (0..200).map(|i| ((i * 13) % 17) as f64).collect();
        let f = frame_cols(vec![x, z]);
        let part = kmeans_fit(&f, &[0, 1], 4, 2).unwrap();
        assert_eq!(kmeans_assign(&part, &f).unwrap(), part.train_labels);
    }

    fn manual_partition(centroids: Vec<Vec<f64>>) -> StratumPartition {
        StratumPartition {
            feature_subset: vec![0],
            standardizer: Standardizer {
                means: vec![0.0],
                scales: vec![1.0],
            },
            k: centroids.len(),
            centroids,
            seed: 0,
            options: KMeansOptions::default(),
            iterations: 0,
            converged: true,
            train_labels: Vec::new(),
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let part = manual_partition(vec![vec![-5.0], vec![-1.0], vec![1.0]]);
        let labels = kmeans_assign(&part, &frame_1d(&[0.0])).unwrap();
        assert_eq!(labels, vec![1]);
    }

    #[test]
    fn nearest_centroid_arithmetic() {
        let part = manual_partition(vec![vec![0.0], vec![10.0]]);
        // |3-0|^2 = 9 < |3-10|^2 = 49
        assert_eq!(kmeans_assign(&part, &frame_1d(&[3.0])).unwrap(), vec![0]);
    }

    #[test]
    fn bad_inputs() {
        let f = frame_1d(&[1.0, 2.0]);
        assert_eq!(
            kmeans_fit(&f, &[0], 3, 0).unwrap_err(),
            Error::KExceedsPopulation { k: 3, n: 2 }
        );
        assert_eq!(
            kmeans_fit(&f, &[1], 1, 0).unwrap_err(),
            Error::BadFeatureIndex { index: 1, p: 1 }
        );
        assert!(kmeans_fit(&f, &[], 1, 0).is_err());
        let mut part = kmeans_fit(&f, &[0], 1, 0).unwrap();
        part.feature_subset = vec![4];
        assert!(matches!(kmeans_assign(&part, &f), Err(Error::BadFeatureIndex { .. })));
    }

    #[test]
    fn constant_feature_gets_unit_scale() {
        let f = frame_cols(vec![vec![0.1; 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        let part = kmeans_fit(&f, &[0, 1], 2, 0).unwrap();
        assert_eq!(part.standardizer.scales[0], 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 7919) % 211) as f64).collect();
        let f = frame_1d(&x);
        let a = kmeans_fit(&f, &[0], 5, 42).unwrap();
        let b = kmeans_fit(&f, &[0], 5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wcss_never_increases_during_lloyd() {
        let x: Vec<f64> = (0..500).map(|i| ((i * 7919) % 997) as f64).collect();
        let z: Vec<f64> = (0..500).map(|i| ((i * 31) % 89) as f64).collect();
        let f = frame_cols(vec![x, z]);
        let st = Standardizer::fit(&f, &[0, 1]);
        let points = Points::extract(&f, &[0, 1], &st);
        for seed in 0..5 {
            let init = plus_plus_seed(&points, 7, &mut rng::seeded(seed));
            let mut history = Vec::new();
            lloyd(&points, init, &KMeansOptions::default(), Some(&mut history));
            assert!(history.len() > 1);
            for w in history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{history:?}");
            }
        }
    }

    #[test]
    fn warm_started_refinement_does_not_increase_wcss() {
        let x: Vec<f64> = (0..400).map(|i| ((i * 7919) % 503) as f64).collect();
        let z: Vec<f64> = (0..400).map(|i| ((i * 17) % 41) as f64).collect();
        let f = frame_cols(vec![x, z]);
        for k in 1..6 {
            let base = kmeans_fit(&f, &[0, 1], k, 3).unwrap();
            let w_k = wcss(&base, &f).unwrap();
            let mut init = base.centroids.clone();
            // extra centroid at the unit currently farthest from its centroid
            let st = &base.standardizer;
            let points = Points::extract(&f, &[0, 1], st);
            let far = (0..points.len())
                .max_by(|&a, &b| {
                    nearest(points.row(a), &init).1.total_cmp(&nearest(points.row(b), &init).1)
                })
                .unwrap();
            init.push(points.row(far).to_vec());
            let refined = kmeans_fit_from(&f, &[0, 1], init, &KMeansOptions::default()).unwrap();
            assert!(wcss(&refined, &f).unwrap() <= w_k + 1e-9);
        }
    }

    #[test]
    fn assignment_invariant_to_affine_rescaling() {
        let x: Vec<f64> = (0..120).map(|i| ((i * 53) % 61) as f64).collect();
        let z: Vec<f64> = (0..120).map(|i| ((i * 11) % 23) as f64).collect();
        let a = frame_cols(vec![x.clone(), z.clone()]);
        let b = frame_cols(vec![
            x.iter().map(|v| 3.0 * v - 7.0).collect(),
            z.iter().map(|v| 0.5 * v + 100.0).collect(),
        ]);
        let pa = kmeans_fit(&a, &[0, 1], 3, 9).unwrap();
        let pb = kmeans_fit(&b, &[0, 1], 3, 9).unwrap();
        assert_eq!(pa.train_labels, pb.train_labels);
    }

    #[test]
    fn partition_json_round_trip() {
        let f = frame_1d(&[0.0, 1.0, 5.0, 6.0]);
        let part = kmeans_fit(&f, &[0], 2, 4).unwrap();
        let json = serde_json::to_string(&part).unwrap();
        let back: StratumPartition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, part);
    }
}
