//! Spherical k-means: Lloyd iterations under cosine similarity with
//! unit-normalized centers.
//!
//! Seeding is k-means++ over the cosine distance `1 - S_c` (which equals half
//! the squared Euclidean distance between unit vectors). When Lloyd
//! converges, single-point moves that still lower the objective are applied
//! and Lloyd resumes, which escapes many of its fixed points. Each call runs a
//! fixed number of seeded restarts and keeps the lowest objective; every
//! random choice derives from the caller's seed.

use rand::Rng;

use crate::encoder::{cosine_unchecked, Embedding};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_RESTARTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iters: DEFAULT_MAX_ITERS,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub centers: Vec<Embedding>,
    pub assignment: Vec<usize>,
    /// `Σ (1 - S_c(point, assigned center))` against the returned centers.
    pub objective: f64,
    /// Objective after the initial assignment and after every Lloyd step of
    /// the winning restart.
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterResult {
    pub fn k_effective(&self) -> usize {
        self.centers.len()
    }
}

/// Clusters `points` into at most `k` groups with the default restart count.
pub fn spherical_kmeans(points: &[Embedding], k: usize, seed: u64, max_iters: usize) -> Result<ClusterResult> {
    spherical_kmeans_with(
        points,
        &KMeansConfig {
            k,
            seed,
            max_iters,
            restarts: DEFAULT_RESTARTS,
        },
    )
}

pub fn spherical_kmeans_with(points: &[Embedding], cfg: &KMeansConfig) -> Result<ClusterResult> {
    if points.is_empty() {
        return Err(Error::invalid("cannot cluster an empty point set"));
    }
    if cfg.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if cfg.max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    let dim = points[0].dimension();
    if points.iter().any(|p| p.dimension() != dim) {
        return Err(Error::invalid("points have mixed dimensions"));
    }

    // Unit vectors in f64, so a cluster's cost is `members - |sum|` exactly.
    let data: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let v: Vec<f64> = p.values().iter().map(|&v| f64::from(v)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();

    let distinct = distinct_indices(points);
    if distinct.len() <= cfg.k {
        let centers: Vec<Vec<f64>> = distinct.iter().map(|&i| data[i].clone()).collect();
        let assignment = assign(&data, &centers);
        return Ok(finish(points, &centers, assignment, Vec::new(), 0));
    }

    let mut best: Option<LloydRun> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = seed::rng(cfg.seed, "kmeans-init", r as u64);
        let init = plus_plus_init(&data, &distinct, cfg.k, &mut rng);
        let run = descend(&data, init, cfg.max_iters);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    Ok(finish(points, &run.centers, run.assignment, run.history, run.iterations))
}

fn finish(
    points: &[Embedding],
    centers: &[Vec<f64>],
    assignment: Vec<usize>,
    history: Vec<f64>,
    iterations: usize,
) -> ClusterResult {
    let centers: Vec<Embedding> = centers
        .iter()
        .map(|c| Embedding::normalized(c).expect("finite center"))
        .collect();
    let objective = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| 1.0 - cosine_unchecked(p.values(), centers[a].values()))
        .sum();
    ClusterResult {
        centers,
        assignment,
        objective,
        history,
        iterations,
    }
}

/// Indices of the first occurrence of each bitwise-distinct point.
fn distinct_indices(points: &[Embedding]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !out.iter().any(|&j| points[j].values() == p.values()) {
            out.push(i);
        }
    }
    out
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let d = (na * nb).sqrt();
    if d == 0.0 {
        0.0
    } else {
        (dot / d).clamp(-1.0, 1.0)
    }
}

fn plus_plus_init(data: &[Vec<f64>], distinct: &[usize], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![distinct[rng.random_range(0..distinct.len())]];
    let mut best_sim: Vec<f64> = distinct.iter().map(|&i| cos(&data[i], &data[chosen[0]])).collect();
    while chosen.len() < k {
        let weights: Vec<f64> = best_sim.iter().map(|&s| (1.0 - s).max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (slot, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(slot);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            distinct[pick.expect("positive total weight")]
        } else {
            // Remaining points all coincide in direction with a chosen center.
            match distinct.iter().find(|i| !chosen.contains(i)) {
                Some(&i) => i,
                None => break,
            }
        };
        chosen.push(pick);
        for (slot, &i) in distinct.iter().enumerate() {
            best_sim[slot] = best_sim[slot].max(cos(&data[i], &data[pick]));
        }
    }
    chosen.into_iter().map(|i| data[i].clone()).collect()
}

/// Assigns each point to the center of highest similarity; ties go to the lowest index.
fn assign(data: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<usize> {
    data.iter()
        .map(|p| {
            let mut best = 0;
            let mut best_s = f64::NEG_INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let s = cos(p, center);
                if s > best_s {
                    best_s = s;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn objective(data: &[Vec<f64>], centers: &[Vec<f64>], assignment: &[usize]) -> f64 {
    data.iter()
        .zip(assignment)
        .map(|(p, &a)| 1.0 - cos(p, &centers[a]))
        .sum()
}

/// Outcome of one Lloyd descent.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Runs Lloyd iterations from the given initial centers.
///
/// Each step repairs empty clusters, recomputes every center as the
/// normalized sum of its members (summed in point order), then reassigns.
/// Stops when the assignment is unchanged or after `max_iters` steps.
pub fn lloyd(data: &[Vec<f64>], init: Vec<Vec<f64>>, max_iters: usize) -> LloydRun {
    let mut centers = init;
    let mut assignment = assign(data, &centers);
    let mut history = vec![objective(data, &centers, &assignment)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        repair_empty(data, &centers, &mut assignment);
        centers = update_centers(data, &assignment, &centers);
        let next = assign(data, &centers);
        let converged = next == assignment;
        assignment = next;
        history.push(objective(data, &centers, &assignment));
        if converged {
            break;
        }
    }
    LloydRun {
        objective: *history.last().unwrap(),
        centers,
        assignment,
        history,
        iterations,
    }
}

/// Lloyd descent alternated with single-point local search until neither
/// improves the objective.
fn descend(data: &[Vec<f64>], init: Vec<Vec<f64>>, max_iters: usize) -> LloydRun {
    let mut run = lloyd(data, init, max_iters);
    while run.iterations < max_iters && improve_by_moves(data, &mut run.assignment, run.centers.len()) {
        let centers = update_centers(data, &run.assignment, &run.centers);
        run.history.push(objective(data, &centers, &run.assignment));
        let next = lloyd(data, centers, max_iters - run.iterations);
        run.history.extend_from_slice(&next.history[1..]);
        run.iterations += next.iterations;
        run.centers = next.centers;
        run.assignment = next.assignment;
        run.objective = *run.history.last().unwrap();
    }
    run
}

/// Minimum decrease for a local-search move to count.
const MOVE_EPS: f64 = 1e-9;

/// One pass of first-variation moves: each point in turn moves to the
/// cluster that lowers the objective most, using the cost `n - |sum|` of a
/// cluster of unit vectors. Returns whether any point moved.
fn improve_by_moves(data: &[Vec<f64>], assignment: &mut [usize], k: usize) -> bool {
    let dim = data[0].len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in data.iter().zip(assignment.iter()) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let shifted = |s: &[f64], p: &[f64], sign: f64| -> f64 {
        s.iter().zip(p).map(|(a, b)| (a + sign * b).powi(2)).sum::<f64>().sqrt()
    };
    let mut moved = false;
    for (i, p) in data.iter().enumerate() {
        let from = assignment[i];
        if counts[from] < 2 {
            continue;
        }
        let leave = norm(&sums[from]) - shifted(&sums[from], p, -1.0);
        let mut best: Option<(usize, f64)> = None;
        for to in (0..k).filter(|&c| c != from) {
            let delta = leave + norm(&sums[to]) - shifted(&sums[to], p, 1.0);
            if delta < -MOVE_EPS && best.is_none_or(|(_, d)| delta < d) {
                best = Some((to, delta));
            }
        }
        if let Some((to, _)) = best {
            for (d, v) in p.iter().enumerate() {
                sums[from][d] -= v;
                sums[to][d] += v;
            }
            counts[from] -= 1;
            counts[to] += 1;
            assignment[i] = to;
            moved = true;
        }
    }
    moved
}

/// Moves the worst-fitting point of a multi-member cluster into each empty cluster.
fn repair_empty(data: &[Vec<f64>], centers: &[Vec<f64>], assignment: &mut [usize]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut worst: Option<(usize, f64)> = None;
        for (i, p) in data.iter().enumerate() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            let s = cos(p, &centers[assignment[i]]);
            if worst.is_none_or(|(_, ws)| s < ws) {
                worst = Some((i, s));
            }
        }
        match worst {
            Some((i, _)) => assignment[i] = empty,
            None => return,
        }
    }
}

fn update_centers(data: &[Vec<f64>], assignment: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = data[0].len();
    let mut sums = vec![vec![0.0f64; dim]; previous.len()];
    for (p, &a) in data.iter().zip(assignment) {
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(previous)
        .map(|(s, prev)| {
            let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                prev.clone()
            } else {
                s.iter().map(|v| v / norm).collect()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::normalized(v).unwrap()
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(spherical_kmeans(&[], 2, 0, 10).is_err());
        assert!(spherical_kmeans(&[e(&[1.0, 0.0])], 0, 0, 10).is_err());
    }

    #[test]
    fn k_one_is_mean_direction() {
        let pts = vec![e(&[1.0, 0.0, 0.0]), e(&[0.0, 1.0, 0.0]), e(&[0.0, 1.0, 1.0])];
        let res = spherical_kmeans(&pts, 1, 3, 100).unwrap();
        let mut sum = [0.0f64; 3];
        for p in &pts {
            for (s, &v) in sum.iter_mut().zip(p.values()) {
                *s += f64::from(v);
            }
        }
        let expect = e(&sum);
        for (a, b) in res.centers[0].values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn k_equals_n_fits_exactly() {
        let pts = vec![e(&[1.0, 0.0]), e(&[0.0, 1.0]), e(&[1.0, 1.0])];
        let res = spherical_kmeans(&pts, 3, 0, 100).unwrap();
        assert_eq!(res.k_effective(), 3);
        assert_eq!(res.objective, 0.0);
        assert_eq!(res.assignment, vec![0, 1, 2]);
    }

    #[test]
    fn duplicates_reduce_k_effective() {
        let a = e(&[1.0, 0.0]);
        let b = e(&[0.0, 1.0]);
        let pts = vec![a.clone(), b.clone(), a.clone(), b, a];
        let res = spherical_kmeans(&pts, 5, 0, 100).unwrap();
        assert_eq!(res.k_effective(), 2);
        assert_eq!(res.objective, 0.0);
    }

    #[test]
    fn separates_antipodal_groups() {
        let pts = vec![
            e(&[1.0, 0.1]),
            e(&[1.0, -0.1]),
            e(&[1.0, 0.0]),
            e(&[-1.0, 0.1]),
            e(&[-1.0, -0.1]),
        ];
        let res = spherical_kmeans(&pts, 2, 9, 100).unwrap();
        let a = res.assignment.clone();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[1], a[2]);
        assert_eq!(a[3], a[4]);
        assert_ne!(a[0], a[3]);
    }

    #[test]
    fn repair_fills_empty_cluster() {
        let data = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]];
        let centers = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let mut assignment = vec![0, 0, 0];
        repair_empty(&data, &centers, &mut assignment);
        assert_eq!(assignment, vec![0, 0, 1]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let pts: Vec<Embedding> = (0..30)
            .map(|i| e(&[(i as f64 * 0.7).sin().abs(), (i as f64 * 1.3).cos().abs(), 0.2]))
            .collect();
        let a = spherical_kmeans(&pts, 3, 11, 100).unwrap();
        let b = spherical_kmeans(&pts, 3, 11, 100).unwrap();
        assert_eq!(a, b);
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
