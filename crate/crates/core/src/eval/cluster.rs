use mn_autodiff::Matrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use super::EvalError;
use crate::rng::{stream_rng, Stream};

pub const KMEANS_MAX_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Matrix,
    pub inertia: f64,
    /// Index of the restart that produced this result.
    pub restart: usize,
    pub iterations: usize,
    /// Inertia after every assignment step of the winning restart.
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center and its squared distance; ties go to the lower index.
fn nearest(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed(x: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = x.rows();
    let mut centers = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a center
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centers
}

fn lloyd(x: &Matrix, k: usize, seed: u64, restart: usize) -> KMeansResult {
    let mut rng = stream_rng(seed, Stream::KMeans, restart as u64, 0);
    let (n, d) = x.shape();
    let mut centers = plus_plus_seed(x, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, dd) = nearest(x.row(i), &centers);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dists[i] = dd;
            inertia += dd;
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignments[i]] += 1;
            for (s, v) in sums.row_mut(assignments[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                // move the empty center onto the worst-served point
                let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
                centers.row_mut(c).copy_from_slice(x.row(far));
                dists[far] = 0.0;
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x.row(i), centers.row(assignments[i]))).sum();
    KMeansResult {
        assignments,
        centers,
        inertia,
        restart,
        iterations,
        trace,
    }
}

/// Lloyd's algorithm with k-means++ seeding, best inertia over `restarts`
/// independently seeded runs. Ties between restarts go to the earlier one.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult, EvalError> {
    if x.rows() == 0 || k == 0 || restarts == 0 {
        return Err(EvalError::Empty);
    }
    if k > x.rows() {
        return Err(EvalError::TooManyClusters { k, rows: x.rows() });
    }
    let runs: Vec<KMeansResult> = (0..restarts).into_par_iter().map(|r| lloyd(x, k, seed, r)).collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(best)
}

fn contingency(a: &[usize], b: &[usize]) -> Result<(Vec<u64>, Vec<u64>, Vec<u64>), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Length(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![0u64; ka * kb];
    let mut ra = vec![0u64; ka];
    let mut rb = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    Ok((table, ra, rb))
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the geometric mean of the two entropies. A
/// partition with zero entropy yields 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64, EvalError> {
    let (table, ra, rb) = contingency(a, b)?;
    let n = a.len() as f64;
    let ha = entropy(&ra, n);
    let hb = entropy(&rb, n);
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mi = ha + hb - entropy(&table, n);
    Ok(mi / (ha * hb).sqrt())
}

fn pairs(c: u64) -> u64 {
    c * c.saturating_sub(1) / 2
}

/// Adjusted Rand index. Two partitions that are both all-singletons or both a
/// single block give 1.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64, EvalError> {
    let (table, ra, rb) = contingency(a, b)?;
    let index = table.iter().map(|&c| pairs(c)).sum::<u64>() as f64;
    let sa = ra.iter().map(|&c| pairs(c)).sum::<u64>() as f64;
    let sb = rb.iter().map(|&c| pairs(c)).sum::<u64>() as f64;
    let total = pairs(a.len() as u64) as f64;
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Mean silhouette coefficient with Euclidean distances. Points in singleton
/// clusters score 0.
pub fn silhouette(x: &Matrix, labels: &[usize]) -> Result<f64, EvalError> {
    let n = x.rows();
    if labels.len() != n {
        return Err(EvalError::Length(n, labels.len()));
    }
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let k = labels.iter().max().unwrap() + 1;
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(EvalError::SingleCluster);
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += sq_dist(x.row(i), x.row(j)).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}
