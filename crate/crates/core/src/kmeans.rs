//! Seeded Lloyd's k-means with k-means++ seeding.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthetic::rng;

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T: Scalar> {
    /// Cluster of each row, relabelled in order of first appearance.
    pub labels: Vec<usize>,
    /// `k × d` centroids, rows aligned with `labels`.
    pub centroids: DMatrix<T>,
    pub iterations: usize,
}

fn sq_dist<T: Scalar>(points: &DMatrix<T>, i: usize, centroids: &DMatrix<T>, c: usize) -> T {
    let mut s = T::zero();
    for d in 0..points.ncols() {
        let diff = points[(i, d)] - centroids[(c, d)];
        s += diff * diff;
    }
    s
}

fn seed_centroids<T: Scalar, R: Rng>(points: &DMatrix<T>, k: usize, rng: &mut R) -> DMatrix<T> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut best = vec![f64::INFINITY; n];
    while chosen.len() < k {
        let last = *chosen.last().unwrap();
        for i in 0..n {
            let mut s = 0.0;
            for d in 0..points.ncols() {
                let diff = (points[(i, d)] - points[(last, d)]).as_f64();
                s += diff * diff;
            }
            best[i] = best[i].min(s);
        }
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if b > 0.0 && target < b {
                    pick = i;
                    break;
                }
                target -= b;
            }
            while best[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // every point coincides with a centre; take any unchosen row
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
    }
    DMatrix::from_fn(k, points.ncols(), |c, d| points[(chosen[c], d)])
}

/// Clusters the rows of `points` into `k` non-empty groups.
pub fn kmeans<T: Scalar>(points: &DMatrix<T>, k: usize, seed: u64) -> Result<KMeansResult<T>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let dim = points.ncols();
    let mut rng = rng(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(points, i, &centroids, 0);
            for c in 1..k {
                let d = sq_dist(points, i, &centroids, c);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            *label = best;
        }
        fill_empty_clusters(points, &mut labels, &centroids, k);
        let mut next = DMatrix::<T>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for d in 0..dim {
                next[(c, d)] += points[(i, d)];
            }
        }
        for c in 0..k {
            let inv = T::one() / T::from_count(counts[c]);
            for d in 0..dim {
                next[(c, d)] *= inv;
            }
        }
        let shift = (&next - &centroids).amax();
        centroids = next;
        if shift.as_f64() <= TOLERANCE || iterations >= MAX_ITERATIONS {
            break;
        }
    }
    // canonical labelling: clusters numbered by their first member
    let mut map = vec![usize::MAX; k];
    let mut next_label = 0;
    for &c in &labels {
        if map[c] == usize::MAX {
            map[c] = next_label;
            next_label += 1;
        }
    }
    let labels: Vec<usize> = labels.iter().map(|&c| map[c]).collect();
    let mut ordered = DMatrix::zeros(k, dim);
    for c in 0..k {
        ordered.set_row(map[c], &centroids.row(c));
    }
    Ok(KMeansResult { labels, centroids: ordered, iterations })
}

/// Moves the point farthest from the centroid of the largest cluster into
/// each empty cluster.
fn fill_empty_clusters<T: Scalar>(points: &DMatrix<T>, labels: &mut [usize], centroids: &DMatrix<T>, k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in labels.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        let mut far = None;
        let mut far_d = -T::one();
        for (i, &c) in labels.iter().enumerate() {
            if c == largest {
                let d = sq_dist(points, i, centroids, largest);
                if d > far_d {
                    far = Some(i);
                    far_d = d;
                }
            }
        }
        labels[far.unwrap()] = empty;
    }
}
