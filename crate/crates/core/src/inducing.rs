//! Inducing-vertex selection.
//!
//! Vertices are scored by eigenvector centrality of `Q = A_v D_v^{-1}`,
//! grouped by k-means on the low end of the Laplacian spectrum, and then
//! drawn cluster by cluster: a cluster is sampled with probability
//! proportional to its size and its most central unselected vertex is taken.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{Hypergraph, HypergraphLaplacian};
use crate::kernel::eigendecompose;
use crate::kmeans::kmeans;
use crate::scalar::Scalar;
use crate::synthetic::rng;

pub const POWER_MAX_ITERATIONS: usize = 10_000;
pub const POWER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores<T: Scalar> {
    /// Nonnegative, largest entry exactly one.
    pub gamma: DVector<T>,
    /// Dominant eigenvalue of `Q`.
    pub eigenvalue: T,
    pub iterations: usize,
}

/// Dominant eigenvector of `A D^{-1}` by power iteration from the all-ones
/// vector, rescaled to max entry one.
pub fn eigencentrality<T: Scalar>(adjacency: &DMatrix<T>, degrees: &DVector<T>) -> Result<ImportanceScores<T>> {
    let n = adjacency.nrows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if adjacency.ncols() != n {
        return Err(Error::DimensionMismatch { what: "adjacency columns", expected: n, found: adjacency.ncols() });
    }
    if degrees.len() != n {
        return Err(Error::DimensionMismatch { what: "degree vector", expected: n, found: degrees.len() });
    }
    if adjacency.iter().any(|&a| a < T::zero() || !a.is_finite()) {
        return Err(Error::InvalidAdjacency("entries must be finite and nonnegative".into()));
    }
    if let Some(v) = degrees.iter().position(|&d| d <= T::zero()) {
        return Err(Error::IsolatedVertex { vertex: v });
    }
    let q = DMatrix::from_fn(n, n, |i, j| adjacency[(i, j)] / degrees[j]);
    let mut gamma = DVector::from_element(n, T::one());
    let mut change = f64::INFINITY;
    for it in 1..=POWER_MAX_ITERATIONS {
        let next = &q * &gamma;
        let peak = next.max();
        if peak <= T::zero() {
            return Err(Error::InvalidAdjacency("Q annihilates the positive vector".into()));
        }
        let next = next / peak;
        change = (&next - &gamma).amax().as_f64();
        gamma = next;
        if change <= POWER_TOLERANCE {
            let qg = &q * &gamma;
            // gamma has max one, so the eigenvalue is read off at its peak
            let top = gamma.imax();
            let eigenvalue = qg[top] / gamma[top];
            return Ok(ImportanceScores { gamma, eigenvalue, iterations: it });
        }
    }
    Err(Error::PowerIterationNoConvergence { iterations: POWER_MAX_ITERATIONS, change })
}

/// Centrality on `H W Hᵀ` with the weighted vertex degrees.
pub fn hypergraph_centrality<T: Scalar>(h: &Hypergraph<T>) -> Result<ImportanceScores<T>> {
    eigencentrality(&h.weighted_vertex_adjacency(), &h.degrees().vertex_degrees)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T: Scalar> {
    pub labels: Vec<usize>,
    pub k: usize,
    /// `k × k` centroids in spectral coordinates.
    pub centroids: DMatrix<T>,
}

impl<T: Scalar> ClusterAssignment<T> {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// k-means on the rows of the eigenvectors for the `k` smallest eigenvalues.
pub fn spectral_clusters<T: Scalar>(delta: &HypergraphLaplacian<T>, k: usize, seed: u64) -> Result<ClusterAssignment<T>> {
    let n = delta.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let spectrum = eigendecompose(delta.matrix())?;
    let coords = spectrum.eigenvectors.columns(0, k).into_owned();
    let result = kmeans(&coords, k, seed)?;
    Ok(ClusterAssignment { labels: result.labels, k, centroids: result.centroids })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InducingSet {
    pub indices: Vec<usize>,
    pub seed: u64,
}

/// Draws `j` distinct vertices. Exhausted clusters drop out of the draw.
pub fn select_inducing<T: Scalar>(
    gamma: &ImportanceScores<T>,
    clusters: &ClusterAssignment<T>,
    j: usize,
    seed: u64,
) -> Result<InducingSet> {
    let n = gamma.gamma.len();
    if clusters.labels.len() != n {
        return Err(Error::DimensionMismatch { what: "cluster labels", expected: n, found: clusters.labels.len() });
    }
    if j > n {
        return Err(Error::InvalidJ { j, n });
    }
    // members of each cluster in order of decreasing centrality
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); clusters.k];
    for (v, &c) in clusters.labels.iter().enumerate() {
        queues[c].push(v);
    }
    for q in &mut queues {
        q.sort_by(|&a, &b| {
            gamma.gamma[b].partial_cmp(&gamma.gamma[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
    }
    let sizes: Vec<f64> = queues.iter().map(|q| q.len() as f64).collect();
    let mut taken = vec![0usize; clusters.k];
    let mut rng = rng(seed);
    let mut indices = Vec::with_capacity(j);
    while indices.len() < j {
        let weights: Vec<f64> =
            (0..clusters.k).map(|c| if taken[c] < queues[c].len() { sizes[c] } else { 0.0 }).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let s = dist.sample(&mut rng);
        indices.push(queues[s][taken[s]]);
        taken[s] += 1;
    }
    Ok(InducingSet { indices, seed })
}

/// `max(2, ⌊J/4⌋)`, capped at `N`.
pub fn default_cluster_count(j: usize, n: usize) -> usize {
    (j / 4).max(2).min(n)
}

/// Everything produced by one run of the selection pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingSelection {
    pub seed: u64,
    pub k: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub indices: Vec<usize>,
    pub gamma_of_selected: Vec<f64>,
}

/// Centrality, clustering and selection on a hypergraph. `k` defaults to
/// [`default_cluster_count`].
pub fn select_for_hypergraph<T: Scalar>(
    h: &Hypergraph<T>,
    j: usize,
    k: Option<usize>,
    seed: u64,
) -> Result<InducingSelection> {
    let n = h.num_vertices();
    if j > n {
        return Err(Error::InvalidJ { j, n });
    }
    let k = k.unwrap_or_else(|| default_cluster_count(j, n));
    let gamma = hypergraph_centrality(h)?;
    let clusters = spectral_clusters(&h.laplacian(), k, seed)?;
    let set = select_inducing(&gamma, &clusters, j, seed)?;
    let gamma_of_selected = set.indices.iter().map(|&v| gamma.gamma[v].as_f64()).collect();
    Ok(InducingSelection { seed, k, j, indices: set.indices, gamma_of_selected })
}
