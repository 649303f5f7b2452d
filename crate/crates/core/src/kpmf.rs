//! Kernelised probabilistic matrix factorisation.
//!
//! `R ≈ U Wᵀ` with zero-mean GP priors on the columns of `U` (users) and `W`
//! (items) and a Gaussian likelihood on the observed entries only. Priors
//! are either dense (Cholesky of the gram) or Nyström low-rank plus a small
//! ridge, solved by Woodbury.

use std::collections::HashSet;

use nalgebra::{Cholesky, DMatrix};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::kernel::{gram_blocks, GramKernel};
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::optim::{Adam, OptConfig};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Scalar};
use crate::synthetic::rng;

pub const DEFAULT_LATENT_DIM: usize = 10;
pub const INIT_STD: f64 = 0.1;
/// Nyström ridge relative to the mean gram diagonal.
pub const NYSTROM_RIDGE: f64 = 1e-6;

/// Partially observed `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    triples: Vec<(usize, usize, T)>,
}

impl<T: Scalar> RatingsMatrix<T> {
    pub fn new(rows: usize, cols: usize, triples: Vec<(usize, usize, T)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(triples.len());
        for &(r, c, v) in &triples {
            if r >= rows {
                return Err(Error::IndexOutOfRange { index: r, bound: rows });
            }
            if c >= cols {
                return Err(Error::IndexOutOfRange { index: c, bound: cols });
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite rating at ({r}, {c})")));
            }
            if !seen.insert((r, c)) {
                return Err(Error::InvalidArgument(format!("duplicate rating at ({r}, {c})")));
            }
        }
        Ok(Self { rows, cols, triples })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn triples(&self) -> &[(usize, usize, T)] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Smallest and largest observed value.
    pub fn value_range(&self) -> Option<(T, T)> {
        let mut it = self.triples.iter().map(|t| t.2);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Users as vertices, one hyperedge per item holding the users who rated
    /// it. Items without ratings or users without ratings are rejected.
    pub fn user_hypergraph(&self) -> Result<Hypergraph<T>> {
        let mut edges = vec![Vec::new(); self.cols];
        for &(r, c, _) in &self.triples {
            edges[c].push(r);
        }
        Hypergraph::new(self.rows, edges, None)
    }

    /// Splits observations into train and test by seeded shuffle. An entry
    /// only moves to the test side while its row and column keep at least
    /// one training entry, so the test share can fall short of `fraction`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let target = (test_fraction * self.triples.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..self.triples.len()).collect();
        order.shuffle(&mut rng(seed));
        let mut row_count = vec![0usize; self.rows];
        let mut col_count = vec![0usize; self.cols];
        for &(r, c, _) in &self.triples {
            row_count[r] += 1;
            col_count[c] += 1;
        }
        let mut is_test = vec![false; self.triples.len()];
        let mut moved = 0;
        for &i in &order {
            if moved == target {
                break;
            }
            let (r, c, _) = self.triples[i];
            if row_count[r] > 1 && col_count[c] > 1 {
                row_count[r] -= 1;
                col_count[c] -= 1;
                is_test[i] = true;
                moved += 1;
            }
        }
        let pick = |want: bool| -> Vec<(usize, usize, T)> {
            self.triples.iter().zip(&is_test).filter(|(_, &t)| t == want).map(|(&x, _)| x).collect()
        };
        Ok((
            Self { rows: self.rows, cols: self.cols, triples: pick(false) },
            Self { rows: self.rows, cols: self.cols, triples: pick(true) },
        ))
    }
}

/// Latent factors and observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair<T: Scalar> {
    pub u: DMatrix<T>,
    pub w: DMatrix<T>,
    pub noise_variance: T,
}

impl<T: Scalar> FactorPair<T> {
    pub fn latent_dim(&self) -> usize {
        self.u.ncols()
    }

    /// Entries drawn from `N(0, 0.1²)`, unit noise variance.
    pub fn random(rows: usize, cols: usize, d: usize, seed: u64) -> Self {
        let mut rng = rng(seed);
        let mut draw = |n: usize| {
            DMatrix::from_fn(n, d, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(INIT_STD * z)
            })
        };
        let u = draw(rows);
        let w = draw(cols);
        Self { u, w, noise_variance: T::one() }
    }

    fn validate(&self, shape: (usize, usize)) -> Result<()> {
        if self.u.nrows() != shape.0 {
            return Err(Error::DimensionMismatch { what: "U rows", expected: shape.0, found: self.u.nrows() });
        }
        if self.w.nrows() != shape.1 {
            return Err(Error::DimensionMismatch { what: "W rows", expected: shape.1, found: self.w.nrows() });
        }
        if self.w.ncols() != self.u.ncols() || self.u.ncols() == 0 {
            return Err(Error::DimensionMismatch { what: "W columns", expected: self.u.ncols(), found: self.w.ncols() });
        }
        if !(self.noise_variance > T::zero()) {
            return Err(Error::NonPositiveHyperparameter { name: "noise_variance", value: self.noise_variance.as_f64() });
        }
        Ok(())
    }
}

/// Column prior `N(0, K)` through the two operations the objective needs.
pub trait FactorPrior<T: Scalar> {
    fn dim(&self) -> usize;
    /// `K⁻¹ X`.
    fn solve(&self, x: &DMatrix<T>) -> DMatrix<T>;
    fn log_det(&self) -> T;
}

/// Exact prior from a Cholesky factor of the gram.
#[derive(Debug, Clone)]
pub struct DensePrior<T: Scalar> {
    chol: JitteredCholesky<T>,
}

impl<T: Scalar> DensePrior<T> {
    pub fn new(k: &GramKernel<T>) -> Result<Self> {
        Ok(Self { chol: cholesky_with_jitter(k.matrix(), "KPMF prior")? })
    }

    pub fn jitter(&self) -> T {
        self.chol.jitter
    }
}

impl<T: Scalar> FactorPrior<T> for DensePrior<T> {
    fn dim(&self) -> usize {
        self.chol.factor.l_dirty().nrows()
    }

    fn solve(&self, x: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(x)
    }

    fn log_det(&self) -> T {
        self.chol.log_det()
    }
}

/// `K̃ = K_nz K_zz⁻¹ K_zn + λ I` with `λ` = 1e-6 · mean diag(K).
#[derive(Debug, Clone)]
pub struct SparseKernelApprox<T: Scalar> {
    pub inducing: Vec<usize>,
    pub cross: DMatrix<T>,
    pub kzz_jitter: T,
    pub ridge: T,
    /// `B = K_nz L_zz⁻ᵀ`, so that `K̃ = B Bᵀ + λ I`.
    b: DMatrix<T>,
    /// Cholesky of `λ I + Bᵀ B`.
    inner: JitteredCholesky<T>,
}

pub fn nystrom_approx<T: Scalar>(k: &GramKernel<T>, inducing: &[usize]) -> Result<SparseKernelApprox<T>> {
    let n = k.dim();
    if inducing.is_empty() {
        return Err(Error::InvalidJ { j: 0, n });
    }
    let mut seen = HashSet::new();
    for &z in inducing {
        if z >= n {
            return Err(Error::IndexOutOfRange { index: z, bound: n });
        }
        if !seen.insert(z) {
            return Err(Error::DuplicateIndex(z));
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let cross = gram_blocks(k, &all, inducing)?;
    let kzz = gram_blocks(k, inducing, inducing)?;
    let chol_zz = cholesky_with_jitter(&kzz, "Nyström inducing gram")?;
    let b = chol_zz.solve_lower(&cross.transpose()).transpose();
    let ridge = k.matrix().diagonal().mean() * T::lit(NYSTROM_RIDGE);
    let mut inner = b.transpose() * &b;
    for i in 0..inner.nrows() {
        inner[(i, i)] += ridge;
    }
    // already lifted by the ridge; extra jitter here would be amplified by 1/λ
    let inner = match Cholesky::new(inner.clone()) {
        Some(factor) => JitteredCholesky { factor, jitter: T::zero() },
        None => cholesky_with_jitter(&inner, "Nyström Woodbury core")?,
    };
    Ok(SparseKernelApprox { inducing: inducing.to_vec(), cross, kzz_jitter: chol_zz.jitter, ridge, b, inner })
}

impl<T: Scalar> SparseKernelApprox<T> {
    /// `K_nz K_zz⁻¹ K_zn` without the ridge.
    pub fn approx_gram(&self) -> DMatrix<T> {
        &self.b * self.b.transpose()
    }
}

impl<T: Scalar> FactorPrior<T> for SparseKernelApprox<T> {
    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn solve(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let inner = self.inner.solve(&(self.b.transpose() * x));
        (x - &self.b * inner) / self.ridge
    }

    fn log_det(&self) -> T {
        let extra = T::from_count(self.b.nrows() - self.b.ncols().min(self.b.nrows()));
        extra * self.ridge.ln() + self.inner.log_det()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpmfGradient<T: Scalar> {
    pub u: DMatrix<T>,
    pub w: DMatrix<T>,
    pub noise_variance: T,
}

fn log_2pi<T: Scalar>() -> T {
    T::lit((2.0 * std::f64::consts::PI).ln())
}

fn column_prior<T: Scalar, P: FactorPrior<T> + ?Sized>(prior: &P, x: &DMatrix<T>) -> (T, DMatrix<T>) {
    let solved = prior.solve(x);
    let d = T::from_count(x.ncols());
    let n = T::from_count(x.nrows());
    let half = T::lit(0.5);
    let value = -half * (x.component_mul(&solved).sum() + d * (prior.log_det() + n * log_2pi::<T>()));
    (value, solved)
}

/// Log posterior (up to the evidence) with all Gaussian constants included.
pub fn kpmf_log_posterior<T: Scalar>(
    r: &RatingsMatrix<T>,
    fp: &FactorPair<T>,
    ku: &dyn FactorPrior<T>,
    kw: &dyn FactorPrior<T>,
) -> Result<T> {
    Ok(evaluate(r, fp, ku, kw, false)?.0)
}

pub fn kpmf_gradient<T: Scalar>(
    r: &RatingsMatrix<T>,
    fp: &FactorPair<T>,
    ku: &dyn FactorPrior<T>,
    kw: &dyn FactorPrior<T>,
) -> Result<(T, KpmfGradient<T>)> {
    let (v, g) = evaluate(r, fp, ku, kw, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn evaluate<T: Scalar>(
    r: &RatingsMatrix<T>,
    fp: &FactorPair<T>,
    ku: &dyn FactorPrior<T>,
    kw: &dyn FactorPrior<T>,
    with_gradient: bool,
) -> Result<(T, Option<KpmfGradient<T>>)> {
    fp.validate(r.shape())?;
    if ku.dim() != r.rows {
        return Err(Error::DimensionMismatch { what: "user prior", expected: r.rows, found: ku.dim() });
    }
    if kw.dim() != r.cols {
        return Err(Error::DimensionMismatch { what: "item prior", expected: r.cols, found: kw.dim() });
    }
    let s2 = fp.noise_variance;
    let half = T::lit(0.5);
    let mut sq = T::zero();
    let mut gu = DMatrix::zeros(fp.u.nrows(), fp.u.ncols());
    let mut gw = DMatrix::zeros(fp.w.nrows(), fp.w.ncols());
    for &(n, m, value) in &r.triples {
        let e = value - fp.u.row(n).dot(&fp.w.row(m));
        sq += e * e;
        if with_gradient {
            let scale = e / s2;
            for d in 0..fp.u.ncols() {
                gu[(n, d)] += scale * fp.w[(m, d)];
                gw[(m, d)] += scale * fp.u[(n, d)];
            }
        }
    }
    let count = T::from_count(r.len());
    let likelihood = -half * (count * (log_2pi::<T>() + s2.ln()) + sq / s2);
    let (prior_u, solved_u) = column_prior(ku, &fp.u);
    let (prior_w, solved_w) = column_prior(kw, &fp.w);
    let value = likelihood + prior_u + prior_w;
    if !with_gradient {
        return Ok((value, None));
    }
    let grad = KpmfGradient {
        u: gu - solved_u,
        w: gw - solved_w,
        noise_variance: half * (sq / (s2 * s2) - count / s2),
    };
    Ok((value, Some(grad)))
}

/// Result of [`kpmf_fit`].
#[derive(Debug, Clone)]
pub struct KpmfFit<T: Scalar> {
    pub factors: FactorPair<T>,
    /// Log posterior before each update and after the last (`steps + 1` entries).
    pub trace: Vec<T>,
}

/// Adam ascent from [`FactorPair::random`] seeded by `config.seed`; the noise
/// variance is learned under softplus when `config.train_likelihood`.
pub fn kpmf_fit<T: Scalar>(
    r: &RatingsMatrix<T>,
    d: usize,
    ku: &dyn FactorPrior<T>,
    kw: &dyn FactorPrior<T>,
    config: &OptConfig,
) -> Result<KpmfFit<T>> {
    if d == 0 {
        return Err(Error::InvalidArgument("latent dimension must be at least 1".into()));
    }
    let init = FactorPair::random(r.rows, r.cols, d, config.seed);
    kpmf_fit_from(r, init, ku, kw, config)
}

pub fn kpmf_fit_from<T: Scalar>(
    r: &RatingsMatrix<T>,
    init: FactorPair<T>,
    ku: &dyn FactorPrior<T>,
    kw: &dyn FactorPrior<T>,
    config: &OptConfig,
) -> Result<KpmfFit<T>> {
    init.validate(r.shape())?;
    let (nu, nw, d) = (init.u.len(), init.w.len(), init.latent_dim());
    let mut params: Vec<T> = init.u.iter().chain(init.w.iter()).copied().collect();
    params.push(softplus_inverse(init.noise_variance));
    let unpack = |p: &[T]| FactorPair {
        u: DMatrix::from_column_slice(r.rows, d, &p[..nu]),
        w: DMatrix::from_column_slice(r.cols, d, &p[nu..nu + nw]),
        noise_variance: if config.train_likelihood { softplus(p[nu + nw]) } else { init.noise_variance },
    };
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut factors = init.clone();
    for step in 0..=config.steps {
        factors = unpack(&params);
        let (value, grad) = evaluate(r, &factors, ku, kw, step < config.steps)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective {
                step,
                diagnostics: format!("log posterior {value}; noise variance {}", factors.noise_variance),
            });
        }
        trace.push(value);
        let Some(grad) = grad else { break };
        let mut flat: Vec<T> = grad.u.iter().chain(grad.w.iter()).copied().collect();
        flat.push(if config.train_likelihood { grad.noise_variance * sigmoid(params[nu + nw]) } else { T::zero() });
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective { step, diagnostics: "non-finite gradient".into() });
        }
        adam.ascend(&mut params, &flat);
    }
    Ok(KpmfFit { factors, trace })
}

/// `U_n · W_m` per pair, optionally clipped to `[lo, hi]`.
pub fn kpmf_predict<T: Scalar>(fp: &FactorPair<T>, pairs: &[(usize, usize)], clip: Option<(T, T)>) -> Result<Vec<T>> {
    pairs
        .iter()
        .map(|&(n, m)| {
            if n >= fp.u.nrows() {
                return Err(Error::IndexOutOfRange { index: n, bound: fp.u.nrows() });
            }
            if m >= fp.w.nrows() {
                return Err(Error::IndexOutOfRange { index: m, bound: fp.w.nrows() });
            }
            let v = fp.u.row(n).dot(&fp.w.row(m));
            Ok(match clip {
                Some((lo, hi)) => v.max(lo).min(hi),
                None => v,
            })
        })
        .collect()
}
