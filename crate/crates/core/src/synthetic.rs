//! Seeded generators and small reference hypergraphs used by tests, examples
//! and the CLI's synthetic benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::hypergraph::Hypergraph;
use crate::linalg::cholesky_with_jitter;
use crate::scalar::Scalar;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Six vertices, hyperedges {v1,v2,v4}, {v1,v2,v3}, {v4,v5}, {v6} (zero-based here).
pub fn figure_one<T: Scalar>() -> Hypergraph<T> {
    Hypergraph::new(6, vec![vec![0, 1, 3], vec![0, 1, 2], vec![3, 4], vec![5]], None)
        .expect("valid fixture")
}

/// The five-vertex, four-hyperedge clique-expansion example.
pub fn clique_example<T: Scalar>() -> Hypergraph<T> {
    Hypergraph::new(
        5,
        vec![vec![0, 1, 2, 3], vec![1, 3, 4], vec![0, 1, 2, 3, 4], vec![1, 2, 3]],
        None,
    )
    .expect("valid fixture")
}

/// Two disjoint hyperedges `{0..size}` and `{size..2·size}`.
pub fn two_blocks<T: Scalar>(size: usize) -> Hypergraph<T> {
    Hypergraph::new(2 * size, vec![(0..size).collect(), (size..2 * size).collect()], None)
        .expect("valid fixture")
}

/// Path `0 – 1 – … – (n-1)` as a 2-uniform hypergraph.
pub fn path<T: Scalar>(n: usize) -> Hypergraph<T> {
    Hypergraph::new(n, (0..n - 1).map(|i| vec![i, i + 1]).collect(), None).expect("valid fixture")
}

/// Cycle on `n ≥ 3` vertices as a 2-uniform hypergraph.
pub fn cycle<T: Scalar>(n: usize) -> Hypergraph<T> {
    Hypergraph::new(n, (0..n).map(|i| vec![i, (i + 1) % n]).collect(), None).expect("valid fixture")
}

/// Random hypergraph with `num_edges` hyperedges of size 1..=`max_edge_size`.
/// Vertices left uncovered are appended to random existing hyperedges, so the
/// edge count is preserved. Weights are drawn from [0.5, 2] when `weighted`.
pub fn random_hypergraph<T: Scalar, R: Rng>(
    rng: &mut R,
    num_vertices: usize,
    num_edges: usize,
    max_edge_size: usize,
    weighted: bool,
) -> Hypergraph<T> {
    let num_edges = num_edges.max(1);
    let vertices: Vec<usize> = (0..num_vertices).collect();
    let mut edges: Vec<Vec<usize>> = (0..num_edges)
        .map(|_| {
            let size = rng.random_range(1..=max_edge_size.min(num_vertices).max(1));
            vertices.choose_multiple(rng, size).copied().collect()
        })
        .collect();
    let mut covered = vec![false; num_vertices];
    for e in &edges {
        for &v in e {
            covered[v] = true;
        }
    }
    for v in 0..num_vertices {
        if !covered[v] {
            let e = rng.random_range(0..num_edges);
            edges[e].push(v);
        }
    }
    let weights = weighted.then(|| (0..num_edges).map(|_| T::lit(rng.random_range(0.5..2.0))).collect());
    Hypergraph::new(num_vertices, edges, weights).expect("generator produces valid hypergraphs")
}

/// Random 2-uniform hypergraph: a random spanning tree plus `extra_edges`
/// distinct random pairs.
pub fn random_two_uniform<T: Scalar, R: Rng>(rng: &mut R, num_vertices: usize, extra_edges: usize) -> Hypergraph<T> {
    let mut order: Vec<usize> = (0..num_vertices).collect();
    order.shuffle(rng);
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..num_vertices {
        let parent = order[rng.random_range(0..i)];
        let child = order[i];
        pairs.insert((parent.min(child), parent.max(child)));
    }
    let mut attempts = 0;
    while pairs.len() < num_vertices - 1 + extra_edges && attempts < 100 * (extra_edges + 1) {
        attempts += 1;
        let a = rng.random_range(0..num_vertices);
        let b = rng.random_range(0..num_vertices);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges = pairs.into_iter().map(|(a, b)| vec![a, b]).collect();
    Hypergraph::new(num_vertices, edges, None).expect("generator produces valid hypergraphs")
}

/// Planted-partition hypergraph with labelled groups.
#[derive(Debug, Clone)]
pub struct PlantedHypergraph<T: Scalar> {
    pub hypergraph: Hypergraph<T>,
    pub labels: Vec<usize>,
}

/// Settings for [`planted_partition`].
#[derive(Debug, Clone, Copy)]
pub struct PlantedConfig {
    pub num_groups: usize,
    pub group_size: usize,
    /// Within-group hyperedges per group.
    pub edges_per_group: usize,
    pub min_edge_size: usize,
    pub max_edge_size: usize,
    /// Hyperedges mixing vertices from different groups.
    pub cross_edges: usize,
}

impl Default for PlantedConfig {
    /// Three groups of 15 vertices with size-3..5 hyperedges.
    fn default() -> Self {
        Self { num_groups: 3, group_size: 15, edges_per_group: 12, min_edge_size: 3, max_edge_size: 5, cross_edges: 10 }
    }
}

/// Vertices are split into equal groups; each group receives
/// `edges_per_group` hyperedges drawn within the group, and `cross_edges`
/// hyperedges draw their members from the whole vertex set.
pub fn planted_partition<T: Scalar>(config: &PlantedConfig, seed: u64) -> PlantedHypergraph<T> {
    let mut rng = rng(seed);
    let n = config.num_groups * config.group_size;
    let labels: Vec<usize> = (0..n).map(|v| v / config.group_size).collect();
    let mut edges = Vec::new();
    for g in 0..config.num_groups {
        let members: Vec<usize> = (g * config.group_size..(g + 1) * config.group_size).collect();
        // a chain of overlapping edges first so that every vertex is covered
        let size = config.min_edge_size.max(2).min(config.group_size);
        let mut start = 0;
        while start < config.group_size {
            let edge: Vec<usize> = (0..size).map(|o| members[(start + o) % config.group_size]).collect();
            let mut edge = edge;
            edge.sort_unstable();
            edge.dedup();
            edges.push(edge);
            start += size - 1;
        }
        for _ in 0..config.edges_per_group {
            let s = rng.random_range(config.min_edge_size..=config.max_edge_size).min(config.group_size);
            edges.push(members.choose_multiple(&mut rng, s).copied().collect());
        }
    }
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..config.cross_edges {
        let s = rng.random_range(config.min_edge_size..=config.max_edge_size).min(n);
        edges.push(all.choose_multiple(&mut rng, s).copied().collect());
    }
    let hypergraph = Hypergraph::new(n, edges, None).expect("generator produces valid hypergraphs");
    PlantedHypergraph { hypergraph, labels }
}

pub fn standard_normal_vector<T: Scalar, R: Rng>(rng: &mut R, n: usize) -> DVector<T> {
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z)
    })
}

pub fn standard_normal_matrix<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let z: f64 = StandardNormal.sample(rng);
            m[(i, j)] = T::lit(z);
        }
    }
    m
}

/// One draw from `N(0, cov)` per column.
pub fn sample_gaussian<T: Scalar, R: Rng>(rng: &mut R, cov: &DMatrix<T>, columns: usize) -> Result<DMatrix<T>> {
    let chol = cholesky_with_jitter(cov, "sampling covariance")?;
    Ok(chol.l() * standard_normal_matrix(rng, cov.nrows(), columns))
}

/// Synthetic ratings with group structure shared by users and items.
#[derive(Debug, Clone)]
pub struct SyntheticRatings {
    pub num_users: usize,
    pub num_items: usize,
    /// `(user, item, rating)` triples.
    pub triples: Vec<(usize, usize, f64)>,
    pub user_groups: Vec<usize>,
    pub item_groups: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct RatingsConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_groups: usize,
    pub rank: usize,
    /// Probability that a user rates an item from their own group.
    pub within_density: f64,
    /// Probability that a user rates an item from another group.
    pub across_density: f64,
    pub noise_std: f64,
    /// Spread of individual factors around their group centre.
    pub individual_std: f64,
}

impl Default for RatingsConfig {
    fn default() -> Self {
        Self {
            num_users: 40,
            num_items: 30,
            num_groups: 3,
            rank: 3,
            within_density: 0.55,
            across_density: 0.08,
            noise_std: 0.3,
            individual_std: 0.3,
        }
    }
}

/// Low-rank ratings `U* W*ᵀ + ε` where users and items in the same group share
/// a factor centre, and a user tends to rate items from their own group, so
/// the co-rating hypergraph mirrors the factor structure.
pub fn low_rank_ratings(config: &RatingsConfig, seed: u64) -> SyntheticRatings {
    let mut rng = rng(seed);
    let g = config.num_groups;
    let user_groups: Vec<usize> = (0..config.num_users).map(|u| u * g / config.num_users).collect();
    let item_groups: Vec<usize> = (0..config.num_items).map(|i| i * g / config.num_items).collect();
    let user_centres = standard_normal_matrix::<f64, _>(&mut rng, g, config.rank);
    let item_centres = standard_normal_matrix::<f64, _>(&mut rng, g, config.rank);
    let u = DMatrix::from_fn(config.num_users, config.rank, |i, d| {
        let z: f64 = StandardNormal.sample(&mut rng);
        user_centres[(user_groups[i], d)] + config.individual_std * z
    });
    let w = DMatrix::from_fn(config.num_items, config.rank, |i, d| {
        let z: f64 = StandardNormal.sample(&mut rng);
        item_centres[(item_groups[i], d)] + config.individual_std * z
    });
    let mut triples = Vec::new();
    for user in 0..config.num_users {
        for item in 0..config.num_items {
            let p = if user_groups[user] == item_groups[item] { config.within_density } else { config.across_density };
            if rng.random::<f64>() < p {
                let z: f64 = StandardNormal.sample(&mut rng);
                let value = u.row(user).dot(&w.row(item)) + config.noise_std * z;
                triples.push((user, item, value));
            }
        }
    }
    SyntheticRatings { num_users: config.num_users, num_items: config.num_items, triples, user_groups, item_groups }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        assert_eq!(figure_one::<f64>().num_edges(), 4);
        assert_eq!(clique_example::<f64>().incidence().to_dense::<f64>().row(1).sum(), 4.0);
        assert_eq!(two_blocks::<f64>(5).connected_components().1, 2);
        assert_eq!(path::<f64>(4).num_edges(), 3);
    }

    #[test]
    fn generators_are_seeded() {
        let a = planted_partition::<f64>(&PlantedConfig::default(), 3);
        let b = planted_partition::<f64>(&PlantedConfig::default(), 3);
        assert_eq!(a.hypergraph, b.hypergraph);
        assert_eq!(a.hypergraph.num_vertices(), 45);
        let r1 = low_rank_ratings(&RatingsConfig::default(), 1);
        let r2 = low_rank_ratings(&RatingsConfig::default(), 1);
        assert_eq!(r1.triples, r2.triples);
        let g: Hypergraph<f64> = random_hypergraph(&mut rng(0), 30, 20, 5, true);
        assert_eq!(g.num_edges(), 20);
    }
}
