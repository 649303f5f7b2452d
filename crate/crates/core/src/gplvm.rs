//! Latent embeddings of hypergraph vertices.
//!
//! Each column of the incidence matrix is modelled as an independent draw
//! `h_j ~ N(0, K_se(X) ⊙ K_VV + σ² I)` where `K_se` is a squared-exponential
//! kernel on latent coordinates `X` and `K_VV` a fixed hypergraph kernel.
//! `X` is fitted by MAP under independent standard-normal priors.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hypergraph::{Hypergraph, HypergraphLaplacian};
use crate::kernel::{eigendecompose, GramKernel, KernelFamily};
use crate::linalg::cholesky_with_jitter;
use crate::optim::{Adam, OptConfig};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Scalar};
use crate::synthetic::rng;

pub const DEFAULT_NOISE_VARIANCE: f64 = 0.01;
pub const INIT_JITTER: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfiguration<T: Scalar> {
    /// `N × Q` coordinates.
    pub x: DMatrix<T>,
    pub lengthscale: T,
    pub variance: T,
    pub noise_variance: T,
}

impl<T: Scalar> LatentConfiguration<T> {
    /// Unit lengthscale and variance, noise 0.01.
    pub fn new(x: DMatrix<T>) -> Self {
        Self { x, lengthscale: T::one(), variance: T::one(), noise_variance: T::lit(DEFAULT_NOISE_VARIANCE) }
    }

    pub fn latent_dim(&self) -> usize {
        self.x.ncols()
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("lengthscale", self.lengthscale), ("variance", self.variance), ("noise_variance", self.noise_variance)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::NonPositiveHyperparameter { name, value: v.as_f64() });
            }
        }
        if self.x.ncols() == 0 {
            return Err(Error::InvalidQ { q: 0, n: self.x.nrows() });
        }
        Ok(())
    }
}

/// Squared-exponential gram `s² exp(−‖x_i − x_j‖² / 2ℓ²)`.
pub fn squared_exponential<T: Scalar>(x: &DMatrix<T>, lengthscale: T, variance: T) -> DMatrix<T> {
    let n = x.nrows();
    let inv = T::one() / (T::lit(2.0) * lengthscale * lengthscale);
    DMatrix::from_fn(n, n, |i, j| variance * (-(sq_distance(x, i, j)) * inv).exp())
}

fn sq_distance<T: Scalar>(x: &DMatrix<T>, i: usize, j: usize) -> T {
    let mut s = T::zero();
    for q in 0..x.ncols() {
        let d = x[(i, q)] - x[(j, q)];
        s += d * d;
    }
    s
}

/// Hadamard product of the squared-exponential gram on `X` with `K_VV`.
pub fn composite_gram<T: Scalar>(
    x: &DMatrix<T>,
    lengthscale: T,
    variance: T,
    kvv: &GramKernel<T>,
) -> Result<GramKernel<T>> {
    if x.nrows() != kvv.dim() {
        return Err(Error::DimensionMismatch { what: "latent coordinates rows", expected: kvv.dim(), found: x.nrows() });
    }
    let kse = squared_exponential(x, lengthscale, variance);
    GramKernel::from_matrix(
        kse.component_mul(kvv.matrix()),
        KernelFamily::Composite { lengthscale: lengthscale.as_f64(), variance: variance.as_f64() },
    )
}

/// Objective split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GplvmObjective<T> {
    pub data: T,
    pub prior: T,
}

impl<T: Scalar> GplvmObjective<T> {
    pub fn total(&self) -> T {
        self.data + self.prior
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GplvmGradient<T: Scalar> {
    pub x: DMatrix<T>,
    pub lengthscale: T,
    pub variance: T,
    pub noise_variance: T,
}

fn log_2pi<T: Scalar>() -> T {
    T::lit((2.0 * std::f64::consts::PI).ln())
}

/// Log marginal likelihood of the columns of `h` (dense `N × M`) plus the
/// latent prior.
pub fn gplvm_marginal_loglik<T: Scalar>(
    latent: &LatentConfiguration<T>,
    kvv: &GramKernel<T>,
    h: &DMatrix<T>,
) -> Result<GplvmObjective<T>> {
    Ok(evaluate(latent, kvv, h, false)?.0)
}

pub fn gplvm_gradient<T: Scalar>(
    latent: &LatentConfiguration<T>,
    kvv: &GramKernel<T>,
    h: &DMatrix<T>,
) -> Result<(GplvmObjective<T>, GplvmGradient<T>)> {
    let (obj, grad) = evaluate(latent, kvv, h, true)?;
    Ok((obj, grad.expect("gradient requested")))
}

fn evaluate<T: Scalar>(
    latent: &LatentConfiguration<T>,
    kvv: &GramKernel<T>,
    h: &DMatrix<T>,
    with_gradient: bool,
) -> Result<(GplvmObjective<T>, Option<GplvmGradient<T>>)> {
    latent.validate()?;
    let n = kvv.dim();
    if h.nrows() != n {
        return Err(Error::DimensionMismatch { what: "incidence rows", expected: n, found: h.nrows() });
    }
    if latent.x.nrows() != n {
        return Err(Error::DimensionMismatch { what: "latent coordinates rows", expected: n, found: latent.x.nrows() });
    }
    let m = T::from_count(h.ncols());
    let kse = squared_exponential(&latent.x, latent.lengthscale, latent.variance);
    let mut sigma = kse.component_mul(kvv.matrix());
    for i in 0..n {
        sigma[(i, i)] += latent.noise_variance;
    }
    let chol = cholesky_with_jitter(&sigma, "GPLVM covariance")?;
    let alpha = chol.solve(h);
    let quad = h.component_mul(&alpha).sum();
    let half = T::lit(0.5);
    let data = -half * (m * (T::from_count(n) * log_2pi::<T>() + chol.log_det()) + quad);
    let nq = T::from_count(latent.x.len());
    let prior = -half * (nq * log_2pi::<T>() + latent.x.norm_squared());
    let obj = GplvmObjective { data, prior };
    if !with_gradient {
        return Ok((obj, None));
    }
    // G = ∂data/∂Σ, B = ∂data/∂K_se
    let g = (&alpha * alpha.transpose() - chol.inverse() * m) * half;
    let b = g.component_mul(kvv.matrix());
    let ls = latent.lengthscale;
    let q = latent.x.ncols();
    let mut gx = -latent.x.clone();
    let mut g_ls = T::zero();
    let mut g_var = T::zero();
    let two = T::lit(2.0);
    for i in 0..n {
        for j in 0..n {
            let bk = b[(i, j)] * kse[(i, j)];
            g_var += bk;
            if i == j {
                continue;
            }
            g_ls += bk * sq_distance(&latent.x, i, j);
            for d in 0..q {
                gx[(i, d)] -= two * bk * (latent.x[(i, d)] - latent.x[(j, d)]) / (ls * ls);
            }
        }
    }
    let grad = GplvmGradient {
        x: gx,
        lengthscale: g_ls / (ls * ls * ls),
        variance: g_var / latent.variance,
        noise_variance: g.trace(),
    };
    Ok((obj, Some(grad)))
}

/// Coordinates from the `q` lowest eigenvectors of `Δ` orthogonal to the
/// trivial null vector `D_v^{1/2} 1`, ascending, each sign-fixed.
pub fn spectral_embedding<T: Scalar>(
    delta: &HypergraphLaplacian<T>,
    vertex_degrees: &DVector<T>,
    q: usize,
) -> Result<DMatrix<T>> {
    let n = delta.dim();
    if q == 0 || q + 1 > n {
        return Err(Error::InvalidQ { q, n });
    }
    if vertex_degrees.len() != n {
        return Err(Error::DimensionMismatch { what: "degree vector", expected: n, found: vertex_degrees.len() });
    }
    let mut t = vertex_degrees.map(|d| d.sqrt());
    t /= t.norm();
    // Δ has spectrum in [0, 1]; lifting t to 2 moves it past every other eigenvalue.
    let lifted = delta.matrix() + &t * t.transpose() * T::lit(2.0);
    let spectrum = eigendecompose(&lifted)?;
    Ok(spectrum.eigenvectors.columns(0, q).into_owned())
}

/// Spectral coordinates scaled to unit column variance with seeded
/// Gaussian jitter of scale 1e-3.
pub fn initial_latent<T: Scalar>(h: &Hypergraph<T>, q: usize, seed: u64) -> Result<DMatrix<T>> {
    let mut x = spectral_embedding(&h.laplacian(), &h.degrees().vertex_degrees, q)?;
    let n = T::from_count(x.nrows());
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > T::zero() {
            col /= sd;
        }
    }
    let mut rng = rng(seed);
    for v in x.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += T::lit(INIT_JITTER * z);
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct EmbeddingResult<T: Scalar> {
    pub latent: LatentConfiguration<T>,
    /// Total objective before each update and after the last (`steps + 1` entries).
    pub trace: Vec<T>,
    /// Prior term at each trace entry.
    pub prior_trace: Vec<T>,
}

/// MAP embedding initialised from the spectral embedding.
pub fn fit_gplvm<T: Scalar>(h: &Hypergraph<T>, kvv: &GramKernel<T>, q: usize, config: &OptConfig) -> Result<EmbeddingResult<T>> {
    let x = initial_latent(h, q, config.seed)?;
    fit_gplvm_from(LatentConfiguration::new(x), kvv, &h.incidence().to_dense(), config)
}

/// Adam ascent from a given configuration. `train_kernel` covers the
/// Euclidean lengthscale and variance, `train_likelihood` the noise.
pub fn fit_gplvm_from<T: Scalar>(
    init: LatentConfiguration<T>,
    kvv: &GramKernel<T>,
    h: &DMatrix<T>,
    config: &OptConfig,
) -> Result<EmbeddingResult<T>> {
    init.validate()?;
    let nq = init.x.len();
    let mut params: Vec<T> = init.x.iter().copied().collect();
    params.extend([
        softplus_inverse(init.lengthscale),
        softplus_inverse(init.variance),
        softplus_inverse(init.noise_variance),
    ]);
    let unpack = |p: &[T]| LatentConfiguration {
        x: DMatrix::from_column_slice(init.x.nrows(), init.x.ncols(), &p[..nq]),
        lengthscale: if config.train_kernel { softplus(p[nq]) } else { init.lengthscale },
        variance: if config.train_kernel { softplus(p[nq + 1]) } else { init.variance },
        noise_variance: if config.train_likelihood { softplus(p[nq + 2]) } else { init.noise_variance },
    };
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut prior_trace = Vec::with_capacity(config.steps + 1);
    let mut latent = init.clone();
    for step in 0..=config.steps {
        latent = unpack(&params);
        let (obj, grad) = evaluate(&latent, kvv, h, step < config.steps)?;
        if !obj.total().is_finite() {
            return Err(Error::NonFiniteObjective {
                step,
                diagnostics: format!(
                    "objective {} (data {}, prior {}); lengthscale {}, variance {}, noise {}",
                    obj.total(),
                    obj.data,
                    obj.prior,
                    latent.lengthscale,
                    latent.variance,
                    latent.noise_variance
                ),
            });
        }
        trace.push(obj.total());
        prior_trace.push(obj.prior);
        let Some(grad) = grad else { break };
        let mut flat: Vec<T> = grad.x.iter().copied().collect();
        flat.push(if config.train_kernel { grad.lengthscale * sigmoid(params[nq]) } else { T::zero() });
        flat.push(if config.train_kernel { grad.variance * sigmoid(params[nq + 1]) } else { T::zero() });
        flat.push(if config.train_likelihood { grad.noise_variance * sigmoid(params[nq + 2]) } else { T::zero() });
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective { step, diagnostics: "non-finite gradient".into() });
        }
        adam.ascend(&mut params, &flat);
    }
    Ok(EmbeddingResult { latent, trace, prior_trace })
}

/// Relative residual `‖s R Xc − Yc‖_F / ‖Yc‖_F` after the best rotation and
/// scale of the centred `x` onto the centred `target`.
pub fn procrustes_error<T: Scalar>(x: &DMatrix<T>, target: &DMatrix<T>) -> Result<T> {
    if x.shape() != target.shape() {
        return Err(Error::DimensionMismatch { what: "procrustes rows", expected: target.nrows(), found: x.nrows() });
    }
    let centre = |m: &DMatrix<T>| {
        let mut c = m.clone();
        let n = T::from_count(m.nrows());
        for mut col in c.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
        }
        c
    };
    let (xc, yc) = (centre(x), centre(target));
    let xn = xc.norm_squared();
    let yn = yc.norm_squared();
    if yn == T::zero() {
        return Err(Error::InvalidArgument("target configuration is degenerate".into()));
    }
    if xn == T::zero() {
        return Ok(T::one());
    }
    // min over R, s of ‖s Xc R − Yc‖² = ‖Yc‖² − (Σσ)² / ‖Xc‖²
    let sv = (xc.transpose() * &yc).singular_values();
    let trace = sv.sum();
    let residual = (yn - trace * trace / xn).max(T::zero());
    Ok((residual / yn).sqrt())
}
