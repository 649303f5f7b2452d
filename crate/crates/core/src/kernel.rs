//! Vertex kernels built as spectral maps of a Laplacian.
//!
//! Every kernel here has the form `K = U diag(φ(λ)) Uᵀ` where `U Λ Uᵀ` is the
//! eigendecomposition of a (hyper)graph Laplacian. The decomposition is
//! computed once and shared through [`SymmetricSpectrum`]; changing
//! hyperparameters only re-evaluates the scalar map `φ`.
//!
//! * Matérn: `φ(λ) = (2ν/ℓ² + λ)^{-ν}`
//! * diffusion: `φ(λ) = exp(-βλ)`

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::normalized_graph_laplacian;
use crate::scalar::Scalar;

/// Default bandwidth of the diffusion baseline.
pub const DEFAULT_DIFFUSION_BETA: f64 = 0.01;

/// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSpectrum<T: Scalar> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
}

impl<T: Scalar> SymmetricSpectrum<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(weights) Uᵀ`, symmetrised.
    pub fn reconstruct_with(&self, weights: &DVector<T>) -> DMatrix<T> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= weights[j];
        }
        let m = scaled * u.transpose();
        (&m + m.transpose()) * T::lit(0.5)
    }

    /// Applies `f` to every eigenvalue and reassembles the matrix.
    pub fn map<F: Fn(T) -> T>(&self, f: F) -> DMatrix<T> {
        self.reconstruct_with(&self.eigenvalues.map(f))
    }

    /// Eigenvalues with negative round-off clamped to zero.
    pub fn clamped_eigenvalues(&self) -> DVector<T> {
        self.eigenvalues.map(|l| l.max(T::zero()))
    }

    /// `diag(Uᵀ G U)`: contracts an upstream gradient with respect to a
    /// spectral-map matrix into a gradient with respect to its spectral weights.
    pub fn project_gradient(&self, grad: &DMatrix<T>) -> DVector<T> {
        let gu = grad * &self.eigenvectors;
        DVector::from_fn(self.dim(), |i, _| self.eigenvectors.column(i).dot(&gu.column(i)))
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues. Each eigenvector
/// is sign-fixed so that its largest-magnitude entry is positive.
pub fn eigendecompose<T: Scalar>(m: &DMatrix<T>) -> Result<SymmetricSpectrum<T>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch { what: "square matrix columns", expected: n, found: m.ncols() });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let scale = m.amax().max(T::one());
    let mut max_asym = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asym > T::lit(1e-8) * scale {
        return Err(Error::NotSymmetric { max_asymmetry: max_asym.as_f64() });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenSolverFailure("non-finite matrix entry".into()));
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::try_new(sym, T::epsilon(), 100_000)
        .ok_or_else(|| Error::EigenSolverFailure("QR iteration did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() + T::lit(1e-12) {
                pivot = i;
            }
        }
        let sign = if col[pivot] < T::zero() { -T::one() } else { T::one() };
        eigenvectors.set_column(dst, &(col * sign));
    }
    Ok(SymmetricSpectrum { eigenvalues, eigenvectors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternHyperparams<T: Scalar> {
    pub nu: T,
    pub lengthscale: T,
    pub variance: T,
}

impl<T: Scalar> MaternHyperparams<T> {
    pub fn new(nu: T, lengthscale: T, variance: T) -> Result<Self> {
        let hp = Self { nu, lengthscale, variance };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("nu", self.nu), ("lengthscale", self.lengthscale), ("variance", self.variance)] {
            if !(value > T::zero()) || !value.is_finite() {
                return Err(Error::NonPositiveHyperparameter { name, value: value.as_f64() });
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for MaternHyperparams<T> {
    /// ν = 1.5, ℓ = 5, variance = 1.
    fn default() -> Self {
        Self { nu: T::lit(1.5), lengthscale: T::lit(5.0), variance: T::one() }
    }
}

/// How the `variance` hyperparameter sets the kernel amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AmplitudeScaling {
    /// `K = variance · K_raw / mean(diag K_raw)`.
    #[default]
    UnitMeanDiagonal,
    /// `K = variance · K_raw`.
    Raw,
}

/// Provenance record attached to every gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    HypergraphMatern { nu: f64, lengthscale: f64, variance: f64, scaling: AmplitudeScaling },
    GraphMatern { nu: f64, lengthscale: f64, variance: f64, scaling: AmplitudeScaling },
    Diffusion { beta: f64 },
    Composite { lengthscale: f64, variance: f64 },
    Custom,
}

impl KernelFamily {
    pub fn tag(&self) -> u8 {
        match self {
            KernelFamily::HypergraphMatern { .. } => 0,
            KernelFamily::GraphMatern { .. } => 1,
            KernelFamily::Diffusion { .. } => 2,
            KernelFamily::Composite { .. } => 3,
            KernelFamily::Custom => 255,
        }
    }

    pub fn hyperparameters(&self) -> Vec<f64> {
        match *self {
            KernelFamily::HypergraphMatern { nu, lengthscale, variance, .. }
            | KernelFamily::GraphMatern { nu, lengthscale, variance, .. } => vec![nu, lengthscale, variance],
            KernelFamily::Diffusion { beta } => vec![beta],
            KernelFamily::Composite { lengthscale, variance } => vec![lengthscale, variance],
            KernelFamily::Custom => vec![],
        }
    }
}

/// A positive semi-definite vertex-by-vertex covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GramKernel<T: Scalar> {
    matrix: DMatrix<T>,
    family: KernelFamily,
}

impl<T: Scalar> GramKernel<T> {
    /// Wraps a matrix after checking it is square and symmetric.
    pub fn from_matrix(matrix: DMatrix<T>, family: KernelFamily) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::DimensionMismatch { what: "gram columns", expected: n, found: matrix.ncols() });
        }
        let scale = matrix.amax().max(T::one());
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if d > T::lit(1e-8) * scale {
                    return Err(Error::NotSymmetric { max_asymmetry: d.as_f64() });
                }
            }
        }
        Ok(Self { matrix, family })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Smallest eigenvalue divided by the largest (PSD when ≥ −1e-8).
    pub fn min_eigenvalue_ratio(&self) -> Result<T> {
        let spec = eigendecompose(&self.matrix)?;
        let n = spec.dim();
        let max = spec.eigenvalues[n - 1];
        if max <= T::zero() {
            return Ok(if spec.eigenvalues[0] < T::zero() { -T::one() } else { T::zero() });
        }
        Ok(spec.eigenvalues[0] / max)
    }
}

/// Extracts `K[rows, cols]`.
pub fn gram_blocks<T: Scalar>(k: &GramKernel<T>, rows: &[usize], cols: &[usize]) -> Result<DMatrix<T>> {
    let n = k.dim();
    for list in [rows, cols] {
        let mut seen = vec![false; n];
        for &i in list {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, bound: n });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::DuplicateIndex(i));
            }
        }
    }
    Ok(submatrix(k.matrix(), rows, cols))
}

pub(crate) fn submatrix<T: Scalar>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Matérn spectral weights `(2ν/ℓ² + λ)^{-ν}` scaled per `scaling`.
/// Negative eigenvalues are clamped to zero first.
pub fn matern_spectral_weights<T: Scalar>(
    eigenvalues: &DVector<T>,
    hp: &MaternHyperparams<T>,
    scaling: AmplitudeScaling,
) -> Result<DVector<T>> {
    hp.validate()?;
    let shift = T::lit(2.0) * hp.nu / (hp.lengthscale * hp.lengthscale);
    let raw = eigenvalues.map(|l| (shift + l.max(T::zero())).powf(-hp.nu));
    Ok(match scaling {
        AmplitudeScaling::Raw => raw * hp.variance,
        AmplitudeScaling::UnitMeanDiagonal => {
            let mean = raw.mean();
            raw * (hp.variance / mean)
        }
    })
}

/// Derivatives of [`matern_spectral_weights`] with respect to `(ν, ℓ, variance)`.
pub fn matern_spectral_weight_derivatives<T: Scalar>(
    eigenvalues: &DVector<T>,
    hp: &MaternHyperparams<T>,
    scaling: AmplitudeScaling,
) -> [DVector<T>; 3] {
    let two = T::lit(2.0);
    let (nu, ell) = (hp.nu, hp.lengthscale);
    let shift = two * nu / (ell * ell);
    let a = eigenvalues.map(|l| shift + l.max(T::zero()));
    let g = a.map(|ai| ai.powf(-nu));
    let dg_dnu = DVector::from_fn(g.len(), |i, _| g[i] * (-a[i].ln() - two * nu / (ell * ell * a[i])));
    let dg_dell = DVector::from_fn(g.len(), |i, _| g[i] * T::lit(4.0) * nu * nu / (ell * ell * ell * a[i]));
    match scaling {
        AmplitudeScaling::Raw => [dg_dnu * hp.variance, dg_dell * hp.variance, g],
        AmplitudeScaling::UnitMeanDiagonal => {
            let rho = g.mean();
            let normalise = |dg: DVector<T>| {
                let drho = dg.mean();
                DVector::from_fn(g.len(), |i, _| hp.variance / rho * (dg[i] - g[i] * drho / rho))
            };
            let dv = &g / rho;
            [normalise(dg_dnu), normalise(dg_dell), dv]
        }
    }
}

/// Hypergraph Matérn gram with unit-mean-diagonal amplitude scaling.
pub fn matern_gram<T: Scalar>(spec: &SymmetricSpectrum<T>, hp: &MaternHyperparams<T>) -> Result<GramKernel<T>> {
    matern_gram_scaled(spec, hp, AmplitudeScaling::UnitMeanDiagonal)
}

pub fn matern_gram_scaled<T: Scalar>(
    spec: &SymmetricSpectrum<T>,
    hp: &MaternHyperparams<T>,
    scaling: AmplitudeScaling,
) -> Result<GramKernel<T>> {
    let w = matern_spectral_weights(&spec.eigenvalues, hp, scaling)?;
    Ok(GramKernel {
        matrix: spec.reconstruct_with(&w),
        family: KernelFamily::HypergraphMatern {
            nu: hp.nu.as_f64(),
            lengthscale: hp.lengthscale.as_f64(),
            variance: hp.variance.as_f64(),
            scaling,
        },
    })
}

/// Heat kernel `exp(-βΔ)`.
pub fn diffusion_gram<T: Scalar>(spec: &SymmetricSpectrum<T>, beta: T) -> Result<GramKernel<T>> {
    if beta < T::zero() || !beta.is_finite() {
        return Err(Error::NegativeBandwidth(beta.as_f64()));
    }
    let matrix = if beta == T::zero() {
        DMatrix::identity(spec.dim(), spec.dim())
    } else {
        spec.map(|l| (-beta * l.max(T::zero())).exp())
    };
    Ok(GramKernel { matrix, family: KernelFamily::Diffusion { beta: beta.as_f64() } })
}

/// Matérn gram over the symmetric normalised Laplacian of a simple graph.
pub fn graph_matern_gram<T: Scalar>(adjacency: &DMatrix<T>, hp: &MaternHyperparams<T>) -> Result<GramKernel<T>> {
    Ok(SpectralMatern::graph(adjacency, *hp, AmplitudeScaling::UnitMeanDiagonal)?.gram)
}

/// Which Laplacian a [`SpectralMatern`] kernel was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianKind {
    Hypergraph,
    Graph,
}

/// Matérn kernel bound to a cached spectrum, with hyperparameter gradients.
#[derive(Debug, Clone)]
pub struct SpectralMatern<T: Scalar> {
    spectrum: Arc<SymmetricSpectrum<T>>,
    hp: MaternHyperparams<T>,
    scaling: AmplitudeScaling,
    kind: LaplacianKind,
    gram: GramKernel<T>,
}

impl<T: Scalar> SpectralMatern<T> {
    pub fn new(
        spectrum: Arc<SymmetricSpectrum<T>>,
        hp: MaternHyperparams<T>,
        scaling: AmplitudeScaling,
        kind: LaplacianKind,
    ) -> Result<Self> {
        let w = matern_spectral_weights(&spectrum.eigenvalues, &hp, scaling)?;
        let (nu, lengthscale, variance) = (hp.nu.as_f64(), hp.lengthscale.as_f64(), hp.variance.as_f64());
        let family = match kind {
            LaplacianKind::Hypergraph => KernelFamily::HypergraphMatern { nu, lengthscale, variance, scaling },
            LaplacianKind::Graph => KernelFamily::GraphMatern { nu, lengthscale, variance, scaling },
        };
        let gram = GramKernel { matrix: spectrum.reconstruct_with(&w), family };
        Ok(Self { spectrum, hp, scaling, kind, gram })
    }

    /// Builds from a hypergraph Laplacian matrix (decomposed once).
    pub fn hypergraph(laplacian: &DMatrix<T>, hp: MaternHyperparams<T>, scaling: AmplitudeScaling) -> Result<Self> {
        let spec = Arc::new(eigendecompose(laplacian)?);
        Self::new(spec, hp, scaling, LaplacianKind::Hypergraph)
    }

    /// Builds from a graph adjacency via its symmetric normalised Laplacian.
    pub fn graph(adjacency: &DMatrix<T>, hp: MaternHyperparams<T>, scaling: AmplitudeScaling) -> Result<Self> {
        let l = normalized_graph_laplacian(adjacency)?;
        let spec = Arc::new(eigendecompose(&l)?);
        Self::new(spec, hp, scaling, LaplacianKind::Graph)
    }

    pub fn hyperparams(&self) -> &MaternHyperparams<T> {
        &self.hp
    }

    pub fn spectrum(&self) -> &Arc<SymmetricSpectrum<T>> {
        &self.spectrum
    }

    pub fn gram(&self) -> &GramKernel<T> {
        &self.gram
    }

    pub fn with_hyperparams(&self, hp: MaternHyperparams<T>) -> Result<Self> {
        Self::new(Arc::clone(&self.spectrum), hp, self.scaling, self.kind)
    }
}

/// A kernel whose positive hyperparameters can be learned by gradient ascent.
pub trait TrainableKernel<T: Scalar>: Clone {
    fn gram(&self) -> &GramKernel<T>;

    /// Current hyperparameters (all strictly positive).
    fn hyperparameters(&self) -> Vec<T>;

    fn hyperparameter_names(&self) -> Vec<&'static str>;

    fn with_hyperparameters(&self, values: &[T]) -> Result<Self>;

    /// Chain rule: given `∂f/∂K` as a full matrix, returns `∂f/∂θ` for each
    /// hyperparameter.
    fn hyperparameter_gradient(&self, grad_k: &DMatrix<T>) -> Vec<T>;
}

impl<T: Scalar> TrainableKernel<T> for GramKernel<T> {
    fn gram(&self) -> &GramKernel<T> {
        self
    }

    fn hyperparameters(&self) -> Vec<T> {
        Vec::new()
    }

    fn hyperparameter_names(&self) -> Vec<&'static str> {
        Vec::new()
    }

    fn with_hyperparameters(&self, _values: &[T]) -> Result<Self> {
        Ok(self.clone())
    }

    fn hyperparameter_gradient(&self, _grad_k: &DMatrix<T>) -> Vec<T> {
        Vec::new()
    }
}

impl<T: Scalar> TrainableKernel<T> for SpectralMatern<T> {
    fn gram(&self) -> &GramKernel<T> {
        &self.gram
    }

    fn hyperparameters(&self) -> Vec<T> {
        vec![self.hp.nu, self.hp.lengthscale, self.hp.variance]
    }

    fn hyperparameter_names(&self) -> Vec<&'static str> {
        vec!["nu", "lengthscale", "variance"]
    }

    fn with_hyperparameters(&self, values: &[T]) -> Result<Self> {
        if values.len() != 3 {
            return Err(Error::DimensionMismatch { what: "matern hyperparameters", expected: 3, found: values.len() });
        }
        self.with_hyperparams(MaternHyperparams::new(values[0], values[1], values[2])?)
    }

    fn hyperparameter_gradient(&self, grad_k: &DMatrix<T>) -> Vec<T> {
        let projected = self.spectrum.project_gradient(grad_k);
        matern_spectral_weight_derivatives(&self.spectrum.eigenvalues, &self.hp, self.scaling)
            .iter()
            .map(|d| d.dot(&projected))
            .collect()
    }
}
