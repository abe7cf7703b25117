//! Seeded k-means++ / Lloyd clustering with restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Result};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;

/// Result of clustering: labels run from 1 to `k`, numbered by first
/// appearance in point order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub assignment: Vec<u32>,
    pub centroids: Vec<Vec<f64>>,
    /// Seed of the winning restart.
    pub seed: u64,
    /// Within-cluster sum of squares of the winning restart.
    pub objective: f64,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.assignment {
            s[l as usize - 1] += 1;
        }
        s
    }
}

/// A single Lloyd run from one k-means++ initialisation.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
    /// Objective after every centroid update.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(points: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 {
        return input("k must be at least 1");
    }
    if k > points.len() {
        return input(format!("k = {k} exceeds the number of points ({})", points.len()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return input("points must share one dimension and be finite");
    }
    Ok(())
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every point coincides with a center; pick among unused ones.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    centers
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn update(points: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= n as f64;
        }
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centers: &[Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(p, &centers[c]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n guarantees a cluster with two points");
        assignment[i] = empty;
    }
}

fn objective(points: &[Vec<f64>], assignment: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, &centers[c]))
        .sum()
}

/// One k-means++ initialisation followed by Lloyd iterations until the
/// assignment stops changing or `max_iter` updates have run.
pub fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<LloydRun> {
    check(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        repair_empty(points, &mut assignment, &centers);
        centers = update(points, &assignment, k);
        history.push(objective(points, &assignment, &centers));
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    // Reassignment may have emptied a cluster on the final iteration.
    repair_empty(points, &mut assignment, &centers);
    centers = update(points, &assignment, k);
    let obj = objective(points, &assignment, &centers);
    Ok(LloydRun {
        assignment,
        centroids: centers,
        objective: obj,
        history,
        iterations,
    })
}

/// Best of `restarts` Lloyd runs with seeds `seed..seed + restarts`,
/// compared by objective then seed.
pub fn kmeans_restarts(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterModel> {
    check(points, k)?;
    let mut best: Option<(LloydRun, u64)> = None;
    for r in 0..restarts.max(1) as u64 {
        let s = seed.wrapping_add(r);
        let run = lloyd(points, k, s, DEFAULT_MAX_ITER)?;
        if best.as_ref().is_none_or(|(b, _)| run.objective < b.objective) {
            best = Some((run, s));
        }
    }
    let (run, s) = best.expect("at least one restart");

    // Relabel 1..k by first appearance.
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &c in &run.assignment {
        if map[c] == usize::MAX {
            map[c] = next;
            next += 1;
        }
    }
    let mut centroids = vec![Vec::new(); k];
    for (old, &new) in map.iter().enumerate() {
        centroids[new] = run.centroids[old].clone();
    }
    Ok(ClusterModel {
        k,
        assignment: run.assignment.iter().map(|&c| map[c] as u32 + 1).collect(),
        centroids,
        seed: s,
        objective: run.objective,
    })
}

/// k-means with the default ten restarts.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    kmeans_restarts(points, k, seed, DEFAULT_RESTARTS)
}
