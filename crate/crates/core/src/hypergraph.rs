//! Hypergraph construction and its matrix representations.
//!
//! A hypergraph on `N` vertices is stored as a list of `M` hyperedges, each a
//! sorted set of vertex indices, together with one positive weight per
//! hyperedge. From it we derive the incidence matrix `H` (N×M, binary), the
//! vertex and hyperedge degrees, the normalised hypergraph Laplacian
//!
//! ```text
//! Δ = I − D_v^{-1/2} H W D_e^{-1} Hᵀ D_v^{-1/2}
//! ```
//!
//! and the graph reductions used as baselines (clique expansions).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph<T: Scalar> {
    num_vertices: usize,
    hyperedges: Vec<Vec<usize>>,
    weights: Vec<T>,
}

impl<T: Scalar> Hypergraph<T> {
    /// Builds and validates a hypergraph.
    ///
    /// Every hyperedge must be a non-empty, duplicate-free set of indices in
    /// `[0, num_vertices)`, weights must be strictly positive and every vertex
    /// must belong to at least one hyperedge. `weights = None` means unit weights.
    pub fn new(
        num_vertices: usize,
        hyperedges: Vec<Vec<usize>>,
        weights: Option<Vec<T>>,
    ) -> Result<Self> {
        if num_vertices == 0 {
            return Err(Error::EmptyInput);
        }
        let weights = match weights {
            Some(w) => {
                if w.len() != hyperedges.len() {
                    return Err(Error::DimensionMismatch {
                        what: "hyperedge weights",
                        expected: hyperedges.len(),
                        found: w.len(),
                    });
                }
                w
            }
            None => vec![T::one(); hyperedges.len()],
        };
        let mut covered = vec![false; num_vertices];
        let mut edges = Vec::with_capacity(hyperedges.len());
        for (e, mut members) in hyperedges.into_iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyHyperedge { edge: e });
            }
            members.sort_unstable();
            for pair in members.windows(2) {
                if pair[0] == pair[1] {
                    return Err(Error::DuplicateVertexInEdge { edge: e, vertex: pair[0] });
                }
            }
            if let Some(&last) = members.last() {
                if last >= num_vertices {
                    return Err(Error::IndexOutOfRange { index: last, bound: num_vertices });
                }
            }
            let w = weights[e];
            if !(w > T::zero()) || !w.is_finite() {
                return Err(Error::NonPositiveWeight { edge: e, weight: w.as_f64() });
            }
            for &v in &members {
                covered[v] = true;
            }
            edges.push(members);
        }
        if let Some(vertex) = covered.iter().position(|c| !c) {
            return Err(Error::IsolatedVertex { vertex });
        }
        Ok(Self { num_vertices, hyperedges: edges, weights })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.iter().any(|&w| w != T::one())
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix {
            num_vertices: self.num_vertices,
            columns: self.hyperedges.clone(),
        }
    }

    pub fn degrees(&self) -> DegreeMatrices<T> {
        let mut vertex = DVector::zeros(self.num_vertices);
        for (members, &w) in self.hyperedges.iter().zip(&self.weights) {
            for &v in members {
                vertex[v] += w;
            }
        }
        let edge = self.hyperedges.iter().map(Vec::len).collect();
        DegreeMatrices { vertex_degrees: vertex, edge_degrees: edge }
    }

    /// Normalised hypergraph Laplacian, symmetrised to remove round-off.
    pub fn laplacian(&self) -> HypergraphLaplacian<T> {
        let n = self.num_vertices;
        let degrees = self.degrees();
        let inv_sqrt: Vec<T> = degrees.vertex_degrees.iter().map(|&d| T::one() / d.sqrt()).collect();
        let mut m = DMatrix::<T>::identity(n, n);
        for (members, &w) in self.hyperedges.iter().zip(&self.weights) {
            let scale = w / T::from_count(members.len());
            for &i in members {
                for &j in members {
                    m[(i, j)] -= scale * inv_sqrt[i] * inv_sqrt[j];
                }
            }
        }
        let sym = (&m + m.transpose()) * T::lit(0.5);
        HypergraphLaplacian { matrix: sym }
    }

    /// Hypergraph whose incidence matrix is `Hᵀ`; weights reset to one.
    pub fn dual(&self) -> Result<Hypergraph<T>> {
        let mut edges = vec![Vec::new(); self.num_vertices];
        for (e, members) in self.hyperedges.iter().enumerate() {
            for &v in members {
                edges[v].push(e);
            }
        }
        Hypergraph::new(self.num_edges(), edges, None)
    }

    /// `H W Hᵀ`: co-membership weights with the weighted vertex degrees on
    /// the diagonal. Equals [`vertex_adjacency`] for unit weights.
    pub fn weighted_vertex_adjacency(&self) -> DMatrix<T> {
        let n = self.num_vertices;
        let mut a = DMatrix::zeros(n, n);
        for (members, &w) in self.hyperedges.iter().zip(&self.weights) {
            for &i in members {
                for &j in members {
                    a[(i, j)] += w;
                }
            }
        }
        a
    }

    /// Connected components as a per-vertex label in `[0, count)`, labelled
    /// in order of first vertex.
    pub fn connected_components(&self) -> (Vec<usize>, usize) {
        let n = self.num_vertices;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for members in &self.hyperedges {
            let first = members[0];
            for &v in &members[1..] {
                let (a, b) = (find(&mut parent, first), find(&mut parent, v));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut labels = vec![usize::MAX; n];
        let mut root_label = vec![usize::MAX; n];
        let mut count = 0;
        for v in 0..n {
            let r = find(&mut parent, v);
            if root_label[r] == usize::MAX {
                root_label[r] = count;
                count += 1;
            }
            labels[v] = root_label[r];
        }
        (labels, count)
    }
}

/// Binary incidence structure: column `i` lists the vertices of hyperedge `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    num_vertices: usize,
    columns: Vec<Vec<usize>>,
}

impl IncidenceMatrix {
    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<usize>] {
        &self.columns
    }

    pub fn contains(&self, vertex: usize, edge: usize) -> bool {
        self.columns[edge].binary_search(&vertex).is_ok()
    }

    pub fn to_dense<T: Scalar>(&self) -> DMatrix<T> {
        let mut h = DMatrix::zeros(self.num_vertices, self.columns.len());
        for (e, members) in self.columns.iter().enumerate() {
            for &v in members {
                h[(v, e)] = T::one();
            }
        }
        h
    }

    pub fn transpose(&self) -> IncidenceMatrix {
        let mut columns = vec![Vec::new(); self.num_vertices];
        for (e, members) in self.columns.iter().enumerate() {
            for &v in members {
                columns[v].push(e);
            }
        }
        IncidenceMatrix { num_vertices: self.columns.len(), columns }
    }

    /// Coordinate list `(vertex_index, edge_index)` in column-major order.
    pub fn coordinates(&self) -> Vec<(usize, usize)> {
        self.columns
            .iter()
            .enumerate()
            .flat_map(|(e, members)| members.iter().map(move |&v| (v, e)))
            .collect()
    }

    fn comembership(&self) -> Vec<Vec<u64>> {
        let n = self.num_vertices;
        let mut counts = vec![vec![0u64; n]; n];
        for members in &self.columns {
            for &i in members {
                for &j in members {
                    counts[i][j] += 1;
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliqueMode {
    Weighted,
    Binary,
}

/// Clique-expansion adjacency: co-membership counts (weighted) or their
/// indicators (binary), with a zero diagonal.
pub fn clique_expansion<T: Scalar>(h: &IncidenceMatrix, mode: CliqueMode) -> DMatrix<T> {
    let counts = h.comembership();
    let n = h.num_vertices;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j || counts[i][j] == 0 {
            T::zero()
        } else {
            match mode {
                CliqueMode::Weighted => T::lit(counts[i][j] as f64),
                CliqueMode::Binary => T::one(),
            }
        }
    })
}

/// `A_v = H Hᵀ`, keeping the vertex degrees on the diagonal.
pub fn vertex_adjacency<T: Scalar>(h: &IncidenceMatrix) -> DMatrix<T> {
    let counts = h.comembership();
    let n = h.num_vertices;
    DMatrix::from_fn(n, n, |i, j| T::lit(counts[i][j] as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeMatrices<T: Scalar> {
    /// Weighted vertex degrees `Σ_e w(e) h(v, e)`.
    pub vertex_degrees: DVector<T>,
    /// Hyperedge cardinalities `|e|`.
    pub edge_degrees: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypergraphLaplacian<T: Scalar> {
    matrix: DMatrix<T>,
}

impl<T: Scalar> HypergraphLaplacian<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }
}

/// Symmetric normalised graph Laplacian `I − D^{-1/2} A D^{-1/2}`.
///
/// `adjacency` must be symmetric, nonnegative, have a zero diagonal and no
/// isolated vertices.
pub fn normalized_graph_laplacian<T: Scalar>(adjacency: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::DimensionMismatch { what: "adjacency columns", expected: n, found: adjacency.ncols() });
    }
    let mut max_asym = T::zero();
    for i in 0..n {
        for j in 0..n {
            max_asym = max_asym.max((adjacency[(i, j)] - adjacency[(j, i)]).abs());
        }
    }
    if max_asym > T::lit(1e-8) {
        return Err(Error::NotSymmetric { max_asymmetry: max_asym.as_f64() });
    }
    for i in 0..n {
        if adjacency[(i, i)] != T::zero() {
            return Err(Error::InvalidAdjacency(format!("nonzero diagonal at vertex {i}")));
        }
        if adjacency.row(i).iter().any(|&a| a < T::zero()) {
            return Err(Error::InvalidAdjacency(format!("negative entry in row {i}")));
        }
    }
    let degree: Vec<T> = (0..n).map(|i| adjacency.row(i).sum()).collect();
    if let Some(vertex) = degree.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::IsolatedVertex { vertex });
    }
    let inv_sqrt: Vec<T> = degree.iter().map(|&d| T::one() / d.sqrt()).collect();
    let l = DMatrix::from_fn(n, n, |i, j| {
        let off = adjacency[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j { T::one() - off } else { -off }
    });
    Ok((&l + l.transpose()) * T::lit(0.5))
}
