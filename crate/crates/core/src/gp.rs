//! Exact and sparse variational GP inference over hypergraph vertices.
//!
//! Sparse inference uses `J` inducing vertices `z` with a free-form Gaussian
//! `q(u) = N(m, S)` per output and the conditional prior `p(f | u)`. The
//! objective is the evidence lower bound
//!
//! ```text
//! ELBO = Σ_n E_q[log p(y_n | f_n)] − Σ_c KL(q(u_c) ‖ N(0, K_zz))
//! ```
//!
//! Gaussian expectations are closed form. The categorical (softmax)
//! likelihood uses reparameterised Monte-Carlo draws that are fixed by a seed,
//! so the objective is a deterministic smooth function of the parameters.
//!
//! All gradients are analytic. Kernel hyperparameter gradients are obtained by
//! accumulating `∂ELBO/∂K` over the gram entries that the bound touches and
//! handing it to [`TrainableKernel::hyperparameter_gradient`].

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{submatrix, GramKernel, TrainableKernel};
use crate::linalg::{cholesky_with_jitter, log_det_lower, lower_triangle, symmetrize};
use crate::optim::{Adam, OptConfig};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Scalar};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Smallest probability used when taking logs of predicted class probabilities.
pub const MIN_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLikelihood<T: Scalar> {
    pub noise_variance: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalLikelihood {
    pub num_classes: usize,
    /// Draws per point when estimating the expected log-likelihood.
    pub mc_samples: usize,
    /// Draws per point when averaging predicted class probabilities.
    pub prediction_samples: usize,
    pub seed: u64,
}

impl CategoricalLikelihood {
    pub fn new(num_classes: usize, seed: u64) -> Self {
        Self { num_classes, mc_samples: 20, prediction_samples: 256, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Likelihood<T: Scalar> {
    Gaussian(GaussianLikelihood<T>),
    Categorical(CategoricalLikelihood),
}

impl<T: Scalar> Likelihood<T> {
    pub fn gaussian(noise_variance: T) -> Self {
        Likelihood::Gaussian(GaussianLikelihood { noise_variance })
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            Likelihood::Gaussian(_) => 1,
            Likelihood::Categorical(c) => c.num_classes,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Likelihood::Gaussian(g) => {
                if !(g.noise_variance > T::zero()) || !g.noise_variance.is_finite() {
                    return Err(Error::NonPositiveHyperparameter {
                        name: "noise_variance",
                        value: g.noise_variance.as_f64(),
                    });
                }
            }
            Likelihood::Categorical(c) => {
                if c.num_classes < 2 {
                    return Err(Error::InvalidArgument(format!("categorical likelihood needs ≥ 2 classes, got {}", c.num_classes)));
                }
                if c.mc_samples == 0 || c.prediction_samples == 0 {
                    return Err(Error::InvalidArgument("categorical likelihood needs ≥ 1 Monte-Carlo sample".into()));
                }
            }
        }
        Ok(())
    }
}

/// Observed values at the training vertices.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a, T> {
    Real(&'a [T]),
    Classes(&'a [usize]),
}

impl<T> Targets<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(y) => y.len(),
            Targets::Classes(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Variational state: inducing vertices, per-output means (columns of a J×C
/// matrix) and lower-triangular factors of the per-output covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct SvgpState<T: Scalar> {
    pub inducing: Vec<usize>,
    pub means: DMatrix<T>,
    pub cov_factors: Vec<DMatrix<T>>,
    pub kernel_hyperparameters: Vec<T>,
    pub likelihood: Likelihood<T>,
}

impl<T: Scalar> SvgpState<T> {
    /// `q(u) = p(u)`: zero mean and `S = K_zz`.
    pub fn prior(k: &GramKernel<T>, inducing: &[usize], likelihood: Likelihood<T>) -> Result<Self> {
        likelihood.validate()?;
        validate_inducing(inducing, k.dim())?;
        let kzz = submatrix(k.matrix(), inducing, inducing);
        let chol = cholesky_with_jitter(&kzz, "inducing gram")?;
        let c = likelihood.num_outputs();
        let l = chol.l();
        Ok(Self {
            inducing: inducing.to_vec(),
            means: DMatrix::zeros(inducing.len(), c),
            cov_factors: vec![l; c],
            kernel_hyperparameters: Vec::new(),
            likelihood,
        })
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.means.ncols()
    }

    pub fn covariance(&self, output: usize) -> DMatrix<T> {
        let l = &self.cov_factors[output];
        l * l.transpose()
    }

    fn validate(&self, n: usize) -> Result<()> {
        validate_inducing(&self.inducing, n)?;
        self.likelihood.validate()?;
        let j = self.inducing.len();
        let c = self.likelihood.num_outputs();
        if self.means.nrows() != j || self.means.ncols() != c {
            return Err(Error::DimensionMismatch { what: "variational mean", expected: j * c, found: self.means.len() });
        }
        if self.cov_factors.len() != c {
            return Err(Error::DimensionMismatch { what: "covariance factors", expected: c, found: self.cov_factors.len() });
        }
        for l in &self.cov_factors {
            if l.nrows() != j || l.ncols() != j {
                return Err(Error::DimensionMismatch { what: "covariance factor", expected: j, found: l.nrows() });
            }
            if (0..j).any(|i| !(l[(i, i)] > T::zero())) {
                return Err(Error::InvalidArgument("covariance factor diagonal must be positive".into()));
            }
        }
        Ok(())
    }
}

fn validate_inducing(inducing: &[usize], n: usize) -> Result<()> {
    if inducing.is_empty() {
        return Err(Error::InvalidJ { j: 0, n });
    }
    if inducing.len() > n {
        return Err(Error::InvalidJ { j: inducing.len(), n });
    }
    validate_indices(inducing, n, true)
}

fn validate_indices(idx: &[usize], n: usize, distinct: bool) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in idx {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, bound: n });
        }
        if distinct && std::mem::replace(&mut seen[i], true) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    Ok(())
}

/// Per-vertex predictive marginals; one column per output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDensity<T: Scalar> {
    pub mean: DMatrix<T>,
    pub variance: DMatrix<T>,
    /// Row-wise simplex vectors for categorical models.
    pub class_probabilities: Option<DMatrix<T>>,
    /// Number of negative round-off variances clamped to zero.
    pub clamped_variances: usize,
}

impl<T: Scalar> PredictiveDensity<T> {
    /// Adds observation noise to every variance (latent → observed predictive).
    pub fn with_observation_noise(mut self, noise_variance: T) -> Self {
        self.variance.iter_mut().for_each(|v| *v += noise_variance);
        self
    }

    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.nrows() == 0
    }

    /// Arg-max class per vertex (ties → lowest class index).
    pub fn predicted_classes(&self) -> Option<Vec<usize>> {
        self.class_probabilities.as_ref().map(|p| {
            (0..p.nrows())
                .map(|i| {
                    let row = p.row(i);
                    let mut best = 0;
                    for c in 1..row.len() {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    best
                })
                .collect()
        })
    }
}

/// Mean log predictive density with the number of clamped probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensity<T> {
    pub value: T,
    pub clamped: usize,
}

/// Conjugate GP posterior at `test_idx` given noisy observations at `train_idx`.
/// Variances are those of the latent function.
pub fn exact_posterior<T: Scalar>(
    k: &GramKernel<T>,
    train_idx: &[usize],
    y: &[T],
    lik: &GaussianLikelihood<T>,
    test_idx: &[usize],
) -> Result<PredictiveDensity<T>> {
    let n = k.dim();
    validate_indices(train_idx, n, true)?;
    validate_indices(test_idx, n, false)?;
    Likelihood::Gaussian(*lik).validate()?;
    if y.len() != train_idx.len() {
        return Err(Error::DimensionMismatch { what: "targets", expected: train_idx.len(), found: y.len() });
    }
    let prior_var = DVector::from_fn(test_idx.len(), |i, _| k.matrix()[(test_idx[i], test_idx[i])]);
    if train_idx.is_empty() {
        return Ok(PredictiveDensity {
            mean: DMatrix::zeros(test_idx.len(), 1),
            variance: DMatrix::from_column_slice(test_idx.len(), 1, prior_var.as_slice()),
            class_probabilities: None,
            clamped_variances: 0,
        });
    }
    let mut kxx = submatrix(k.matrix(), train_idx, train_idx);
    for i in 0..train_idx.len() {
        kxx[(i, i)] += lik.noise_variance;
    }
    let chol = cholesky_with_jitter(&kxx, "training gram")?;
    let ksx = submatrix(k.matrix(), test_idx, train_idx);
    let alpha = chol.solve_vec(&DVector::from_column_slice(y));
    let mean = &ksx * alpha;
    let v = chol.solve_lower(&ksx.transpose());
    let mut clamped = 0;
    let var = DVector::from_fn(test_idx.len(), |i, _| {
        let s = prior_var[i] - v.column(i).norm_squared();
        if s < T::zero() {
            clamped += 1;
            T::zero()
        } else {
            s
        }
    });
    Ok(PredictiveDensity {
        mean: DMatrix::from_column_slice(test_idx.len(), 1, mean.as_slice()),
        variance: DMatrix::from_column_slice(test_idx.len(), 1, var.as_slice()),
        class_probabilities: None,
        clamped_variances: clamped,
    })
}

/// `log N(y; 0, K_xx + σ²I)`.
pub fn exact_log_marginal_likelihood<T: Scalar>(
    k: &GramKernel<T>,
    train_idx: &[usize],
    y: &[T],
    lik: &GaussianLikelihood<T>,
) -> Result<T> {
    validate_indices(train_idx, k.dim(), true)?;
    if y.len() != train_idx.len() {
        return Err(Error::DimensionMismatch { what: "targets", expected: train_idx.len(), found: y.len() });
    }
    let mut kxx = submatrix(k.matrix(), train_idx, train_idx);
    for i in 0..train_idx.len() {
        kxx[(i, i)] += lik.noise_variance;
    }
    let chol = cholesky_with_jitter(&kxx, "training gram")?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve_vec(&yv);
    let n = T::from_count(y.len());
    Ok(-T::lit(0.5) * (yv.dot(&alpha) + chol.log_det() + n * T::lit(LN_2PI)))
}

/// Analytic ELBO gradients. `cov_factors` are with respect to the raw lower
/// triangular entries of each factor.
#[derive(Debug, Clone)]
pub struct ElboGradient<T: Scalar> {
    pub means: DMatrix<T>,
    pub cov_factors: Vec<DMatrix<T>>,
    /// `∂ELBO/∂K` over the full gram.
    pub gram: DMatrix<T>,
    /// `∂ELBO/∂σ²` for Gaussian likelihoods.
    pub noise_variance: Option<T>,
}

/// Evidence lower bound on all training points.
pub fn elbo<T: Scalar>(state: &SvgpState<T>, k: &GramKernel<T>, train_idx: &[usize], y: Targets<'_, T>) -> Result<T> {
    Ok(evaluate(state, k, train_idx, y, None, false)?.0)
}

/// Evidence lower bound and its gradient.
pub fn elbo_with_gradient<T: Scalar>(
    state: &SvgpState<T>,
    k: &GramKernel<T>,
    train_idx: &[usize],
    y: Targets<'_, T>,
) -> Result<(T, ElboGradient<T>)> {
    let (v, g) = evaluate(state, k, train_idx, y, None, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// Minibatch ELBO: data term over `batch` (positions into `train_idx`),
/// rescaled by `|train_idx| / |batch|`.
pub fn elbo_minibatch<T: Scalar>(
    state: &SvgpState<T>,
    k: &GramKernel<T>,
    train_idx: &[usize],
    y: Targets<'_, T>,
    batch: &[usize],
) -> Result<T> {
    Ok(evaluate(state, k, train_idx, y, Some(batch), false)?.0)
}

/// Kullback-Leibler divergence `Σ_c KL(q(u_c) ‖ N(0, K_zz))`.
pub fn kl_divergence<T: Scalar>(state: &SvgpState<T>, k: &GramKernel<T>) -> Result<T> {
    state.validate(k.dim())?;
    let kzz = submatrix(k.matrix(), &state.inducing, &state.inducing);
    let chol = cholesky_with_jitter(&kzz, "inducing gram")?;
    let j = T::from_count(state.num_inducing());
    let mut kl = T::zero();
    for c in 0..state.num_outputs() {
        let l = &state.cov_factors[c];
        let m = state.means.column(c).into_owned();
        let alpha = chol.solve_vec(&m);
        let trace = chol.solve_lower(l).norm_squared();
        kl += T::lit(0.5) * (trace + m.dot(&alpha) - j + chol.log_det() - log_det_lower(l));
    }
    Ok(kl)
}

fn gaussian_mc_draws<T: Scalar>(seed: u64, n: usize, samples: usize, classes: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * samples * classes)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z)
        })
        .collect()
}

fn log_softmax_grad<T: Scalar>(f: &[T], target: usize, grad: &mut [T]) -> T {
    let max = f.iter().copied().fold(f[0], |a, b| a.max(b));
    let mut sum = T::zero();
    for (g, &fi) in grad.iter_mut().zip(f) {
        *g = (fi - max).exp();
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g = -*g / sum;
    }
    grad[target] += T::one();
    f[target] - max - sum.ln()
}

fn evaluate<T: Scalar>(
    state: &SvgpState<T>,
    k: &GramKernel<T>,
    train_idx: &[usize],
    y: Targets<'_, T>,
    batch: Option<&[usize]>,
    want_grad: bool,
) -> Result<(T, Option<ElboGradient<T>>)> {
    let n_total = k.dim();
    state.validate(n_total)?;
    validate_indices(train_idx, n_total, true)?;
    if y.len() != train_idx.len() {
        return Err(Error::DimensionMismatch { what: "targets", expected: train_idx.len(), found: y.len() });
    }
    let c_out = state.num_outputs();
    match (&state.likelihood, y) {
        (Likelihood::Gaussian(_), Targets::Real(_)) => {}
        (Likelihood::Categorical(cat), Targets::Classes(cls)) => {
            if let Some(&bad) = cls.iter().find(|&&c| c >= cat.num_classes) {
                return Err(Error::IndexOutOfRange { index: bad, bound: cat.num_classes });
            }
        }
        _ => return Err(Error::InvalidArgument("targets do not match the likelihood".into())),
    }

    let positions: Vec<usize> = match batch {
        Some(b) => {
            for &p in b {
                if p >= train_idx.len() {
                    return Err(Error::IndexOutOfRange { index: p, bound: train_idx.len() });
                }
            }
            b.to_vec()
        }
        None => (0..train_idx.len()).collect(),
    };
    let scale = if positions.is_empty() {
        T::zero()
    } else {
        T::from_count(train_idx.len()) / T::from_count(positions.len())
    };
    let x: Vec<usize> = positions.iter().map(|&p| train_idx[p]).collect();
    let z = &state.inducing;
    let nb = x.len();
    let j = z.len();

    let kzz = submatrix(k.matrix(), z, z);
    let chol = cholesky_with_jitter(&kzz, "inducing gram")?;
    let kxz = submatrix(k.matrix(), &x, z);
    // A = K_xz K_zz⁻¹
    let a = chol.solve(&kxz.transpose()).transpose();
    let kdiag: Vec<T> = x.iter().map(|&i| k.matrix()[(i, i)]).collect();
    let base_var: Vec<T> = (0..nb).map(|n| kdiag[n] - a.row(n).dot(&kxz.row(n))).collect();

    let mut mu = DMatrix::<T>::zeros(nb, c_out);
    let mut var = DMatrix::<T>::zeros(nb, c_out);
    let mut al = Vec::with_capacity(c_out);
    for c in 0..c_out {
        let m = state.means.column(c);
        let al_c = &a * &state.cov_factors[c];
        for n in 0..nb {
            mu[(n, c)] = a.row(n).dot(&m.transpose());
            var[(n, c)] = (base_var[n] + al_c.row(n).norm_squared()).max(T::zero());
        }
        al.push(al_c);
    }

    // data term with upstream gradients r = ∂F/∂μ, w = ∂F/∂v
    let mut data = T::zero();
    let mut r = DMatrix::<T>::zeros(nb, c_out);
    let mut w = DMatrix::<T>::zeros(nb, c_out);
    let mut noise_grad = None;
    let half = T::lit(0.5);
    match (&state.likelihood, y) {
        (Likelihood::Gaussian(g), Targets::Real(yv)) => {
            let s2 = g.noise_variance;
            let mut dn = T::zero();
            for (n, &p) in positions.iter().enumerate() {
                let resid = yv[p] - mu[(n, 0)];
                let sq = resid * resid + var[(n, 0)];
                data += -half * (T::lit(LN_2PI) + s2.ln()) - sq / (T::lit(2.0) * s2);
                r[(n, 0)] = resid / s2 * scale;
                w[(n, 0)] = -scale / (T::lit(2.0) * s2);
                dn += -half / s2 + sq / (T::lit(2.0) * s2 * s2);
            }
            noise_grad = Some(dn * scale);
        }
        (Likelihood::Categorical(cat), Targets::Classes(cls)) => {
            let s = cat.mc_samples;
            let eps = gaussian_mc_draws::<T>(cat.seed, train_idx.len(), s, c_out);
            let inv_s = T::one() / T::from_count(s);
            let mut f = vec![T::zero(); c_out];
            let mut g = vec![T::zero(); c_out];
            for (n, &p) in positions.iter().enumerate() {
                let sd: Vec<T> = (0..c_out).map(|c| var[(n, c)].sqrt()).collect();
                for si in 0..s {
                    let e = &eps[(p * s + si) * c_out..(p * s + si + 1) * c_out];
                    for c in 0..c_out {
                        f[c] = mu[(n, c)] + sd[c] * e[c];
                    }
                    data += log_softmax_grad(&f, cls[p], &mut g) * inv_s;
                    for c in 0..c_out {
                        r[(n, c)] += g[c] * inv_s * scale;
                        if sd[c] > T::zero() {
                            w[(n, c)] += g[c] * e[c] / (T::lit(2.0) * sd[c]) * inv_s * scale;
                        }
                    }
                }
            }
        }
        _ => unreachable!("checked above"),
    }
    data *= scale;

    // KL terms
    let jt = T::from_count(j);
    let log_det_p = chol.log_det();
    let mut kl = T::zero();
    let mut alphas = Vec::with_capacity(c_out);
    for c in 0..c_out {
        let l = &state.cov_factors[c];
        let m = state.means.column(c).into_owned();
        let alpha = chol.solve_vec(&m);
        let trace = chol.solve_lower(l).norm_squared();
        kl += half * (trace + m.dot(&alpha) - jt + log_det_p - log_det_lower(l));
        alphas.push(alpha);
    }
    let value = data - kl;
    if !want_grad {
        return Ok((value, None));
    }

    let p_inv = chol.inverse();
    let mut grad_m = DMatrix::<T>::zeros(j, c_out);
    let mut grad_l = Vec::with_capacity(c_out);
    let mut dk = DMatrix::<T>::zeros(n_total, n_total);
    let mut grad_c_total = DMatrix::<T>::zeros(nb, j);
    let mut grad_p_total = DMatrix::<T>::zeros(j, j);
    let mut grad_d = vec![T::zero(); nb];
    for c in 0..c_out {
        let l = &state.cov_factors[c];
        let s = l * l.transpose();
        let alpha = &alphas[c];
        let rc = r.column(c).into_owned();
        let wa = DMatrix::from_fn(nb, j, |n, i| w[(n, c)] * a[(n, i)]);
        let atwa = a.transpose() * &wa;
        let atr = a.transpose() * &rc;

        grad_m.set_column(c, &(&atr - alpha));

        // ∂/∂L = 2 AᵀWA L − P⁻¹L + L⁻ᵀ, lower triangle
        let mut gl = (&atwa * l) * T::lit(2.0) - &p_inv * l;
        for i in 0..j {
            gl[(i, i)] += T::one() / l[(i, i)];
        }
        grad_l.push(lower_triangle(&gl));

        let s_pinv = &s * &p_inv;
        // ∂/∂K_xz = r αᵀ − 2WA + 2WA S P⁻¹
        let grad_c = &rc * alpha.transpose() - &wa * T::lit(2.0) + (&wa * &s_pinv) * T::lit(2.0);
        // ∂/∂K_zz, data part then KL part
        let pinv_s_atwa = s_pinv.transpose() * &atwa;
        let mut grad_p = -(&atr * alpha.transpose()) + &atwa - &pinv_s_atwa - pinv_s_atwa.transpose();
        grad_p += (&p_inv * &s * &p_inv + alpha * alpha.transpose() - &p_inv) * half;
        grad_c_total += grad_c;
        grad_p_total += symmetrize(&grad_p);
        for n in 0..nb {
            grad_d[n] += w[(n, c)];
        }
    }
    for (n, &xi) in x.iter().enumerate() {
        dk[(xi, xi)] += grad_d[n];
        for (jj, &zj) in z.iter().enumerate() {
            dk[(xi, zj)] += grad_c_total[(n, jj)];
        }
    }
    for (ii, &zi) in z.iter().enumerate() {
        for (jj, &zj) in z.iter().enumerate() {
            dk[(zi, zj)] += grad_p_total[(ii, jj)];
        }
    }
    Ok((value, Some(ElboGradient { means: grad_m, cov_factors: grad_l, gram: dk, noise_variance: noise_grad })))
}

/// Sparse posterior marginals `q(f⋆)`, plus Monte-Carlo class probabilities
/// for categorical models.
pub fn predict_svgp<T: Scalar>(state: &SvgpState<T>, k: &GramKernel<T>, test_idx: &[usize]) -> Result<PredictiveDensity<T>> {
    let n_total = k.dim();
    state.validate(n_total)?;
    validate_indices(test_idx, n_total, false)?;
    let z = &state.inducing;
    let ns = test_idx.len();
    let c_out = state.num_outputs();
    let kzz = submatrix(k.matrix(), z, z);
    let chol = cholesky_with_jitter(&kzz, "inducing gram")?;
    let ksz = submatrix(k.matrix(), test_idx, z);
    let a = chol.solve(&ksz.transpose()).transpose();
    let mut mean = DMatrix::zeros(ns, c_out);
    let mut variance = DMatrix::zeros(ns, c_out);
    let mut clamped = 0;
    for c in 0..c_out {
        let al = &a * &state.cov_factors[c];
        let m = state.means.column(c);
        for i in 0..ns {
            mean[(i, c)] = a.row(i).dot(&m.transpose());
            let v = k.matrix()[(test_idx[i], test_idx[i])] - a.row(i).dot(&ksz.row(i)) + al.row(i).norm_squared();
            variance[(i, c)] = if v < T::zero() {
                clamped += 1;
                T::zero()
            } else {
                v
            };
        }
    }
    let class_probabilities = match &state.likelihood {
        Likelihood::Categorical(cat) => Some(mc_class_probabilities(&mean, &variance, cat.prediction_samples, cat.seed)),
        Likelihood::Gaussian(_) => None,
    };
    Ok(PredictiveDensity { mean, variance, class_probabilities, clamped_variances: clamped })
}

/// Averages `softmax(f)` over seeded draws `f ~ N(mean, diag(variance))`.
pub fn mc_class_probabilities<T: Scalar>(mean: &DMatrix<T>, variance: &DMatrix<T>, samples: usize, seed: u64) -> DMatrix<T> {
    let (n, c_out) = mean.shape();
    let eps = gaussian_mc_draws::<T>(seed.wrapping_add(0x9e37_79b9_7f4a_7c15), n, samples, c_out);
    let inv_s = T::one() / T::from_count(samples);
    let mut probs = DMatrix::zeros(n, c_out);
    let mut f = vec![T::zero(); c_out];
    for i in 0..n {
        for s in 0..samples {
            let e = &eps[(i * samples + s) * c_out..(i * samples + s + 1) * c_out];
            for c in 0..c_out {
                f[c] = mean[(i, c)] + variance[(i, c)].sqrt() * e[c];
            }
            let max = f.iter().copied().fold(f[0], |a, b| a.max(b));
            let total = f.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
            for c in 0..c_out {
                probs[(i, c)] += (f[c] - max).exp() / total * inv_s;
            }
        }
        let row_sum = probs.row(i).sum();
        for c in 0..c_out {
            probs[(i, c)] /= row_sum;
        }
    }
    probs
}

/// Mean per-point log predictive density. Gaussian models use the first
/// output's mean and variance; categorical models the log of the predicted
/// probability of the true class, clamped below at [`MIN_PROBABILITY`].
pub fn log_predictive_density<T: Scalar>(pred: &PredictiveDensity<T>, y: Targets<'_, T>) -> Result<LogDensity<T>> {
    if y.len() != pred.len() {
        return Err(Error::DimensionMismatch { what: "predictions", expected: pred.len(), found: y.len() });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = T::from_count(y.len());
    let floor = T::lit(MIN_PROBABILITY);
    let mut clamped = 0;
    let total = match y {
        Targets::Real(yv) => yv.iter().enumerate().fold(T::zero(), |acc, (i, &yi)| {
            let mut v = pred.variance[(i, 0)];
            if v < floor {
                v = floor;
                clamped += 1;
            }
            let d = yi - pred.mean[(i, 0)];
            acc - T::lit(0.5) * (T::lit(LN_2PI) + v.ln() + d * d / v)
        }),
        Targets::Classes(cls) => {
            let probs = pred
                .class_probabilities
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("prediction carries no class probabilities".into()))?;
            let mut acc = T::zero();
            for (i, &c) in cls.iter().enumerate() {
                if c >= probs.ncols() {
                    return Err(Error::IndexOutOfRange { index: c, bound: probs.ncols() });
                }
                let mut p = probs[(i, c)];
                if p < floor {
                    p = floor;
                    clamped += 1;
                }
                acc += p.ln();
            }
            acc
        }
    };
    Ok(LogDensity { value: total / n, clamped })
}

/// Result of [`fit_svgp`].
#[derive(Debug, Clone)]
pub struct SvgpFit<T: Scalar, K> {
    pub state: SvgpState<T>,
    pub kernel: K,
    /// ELBO before each update followed by the final value (`steps + 1` entries).
    pub trace: Vec<T>,
}

struct Layout {
    j: usize,
    c: usize,
    tri: usize,
    kernel: usize,
    noise: bool,
}

impl Layout {
    fn len(&self) -> usize {
        self.j * self.c + self.c * self.tri + self.kernel + usize::from(self.noise)
    }
}

fn pack<T: Scalar>(state: &SvgpState<T>, layout: &Layout, kernel_hp: &[T]) -> Vec<T> {
    let mut p = Vec::with_capacity(layout.len());
    p.extend(state.means.iter().copied());
    for l in &state.cov_factors {
        for col in 0..layout.j {
            for row in col..layout.j {
                p.push(if row == col { softplus_inverse(l[(row, col)]) } else { l[(row, col)] });
            }
        }
    }
    if layout.kernel > 0 {
        p.extend(kernel_hp.iter().map(|&v| softplus_inverse(v)));
    }
    if layout.noise {
        if let Likelihood::Gaussian(g) = &state.likelihood {
            p.push(softplus_inverse(g.noise_variance));
        }
    }
    p
}

fn unpack<T: Scalar>(params: &[T], template: &SvgpState<T>, layout: &Layout) -> (SvgpState<T>, Vec<T>) {
    let mut state = template.clone();
    let (j, c) = (layout.j, layout.c);
    let mut it = 0;
    state.means = DMatrix::from_column_slice(j, c, &params[..j * c]);
    it += j * c;
    for out in 0..c {
        let mut l = DMatrix::zeros(j, j);
        for col in 0..j {
            for row in col..j {
                l[(row, col)] = if row == col { softplus(params[it]) } else { params[it] };
                it += 1;
            }
        }
        state.cov_factors[out] = l;
    }
    let kernel_hp: Vec<T> = params[it..it + layout.kernel].iter().map(|&v| softplus(v)).collect();
    it += layout.kernel;
    if layout.noise {
        if let Likelihood::Gaussian(g) = &mut state.likelihood {
            g.noise_variance = softplus(params[it]);
        }
    }
    (state, kernel_hp)
}

/// Maximises the ELBO with Adam over the variational parameters and,
/// optionally, kernel hyperparameters and Gaussian noise (softplus-constrained).
pub fn fit_svgp<T: Scalar, K: TrainableKernel<T>>(
    kernel: &K,
    train_idx: &[usize],
    y: Targets<'_, T>,
    likelihood: Likelihood<T>,
    inducing: &[usize],
    config: &OptConfig,
) -> Result<SvgpFit<T, K>> {
    let mut state = SvgpState::prior(kernel.gram(), inducing, likelihood)?;
    state.kernel_hyperparameters = kernel.hyperparameters();
    let layout = Layout {
        j: inducing.len(),
        c: state.num_outputs(),
        tri: inducing.len() * (inducing.len() + 1) / 2,
        kernel: if config.train_kernel { kernel.hyperparameters().len() } else { 0 },
        noise: config.train_likelihood && matches!(state.likelihood, Likelihood::Gaussian(_)),
    };
    let mut params = pack(&state, &layout, &state.kernel_hyperparameters);
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut current_kernel = kernel.clone();
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_train = train_idx.len();

    for step in 0..=config.steps {
        let (candidate, hp) = unpack(&params, &state, &layout);
        if layout.kernel > 0 {
            current_kernel = kernel.with_hyperparameters(&hp)?;
        }
        let gram = current_kernel.gram();
        let batch: Option<Vec<usize>> = match config.batch_size {
            Some(b) if b < n_train && step < config.steps => {
                Some(rand::seq::index::sample(&mut batch_rng, n_train, b).into_vec())
            }
            _ => None,
        };
        let last = step == config.steps;
        let (value, grad) = evaluate(&candidate, gram, train_idx, y, batch.as_deref(), !last)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective {
                step,
                diagnostics: format!("ELBO = {value}; kernel hyperparameters {:?}", current_kernel.hyperparameters()),
            });
        }
        trace.push(value);
        state = candidate;
        state.kernel_hyperparameters = current_kernel.hyperparameters();
        if last {
            break;
        }
        let grad = grad.expect("gradient requested");
        let mut flat = Vec::with_capacity(params.len());
        flat.extend(grad.means.iter().copied());
        let mut it = layout.j * layout.c;
        for gl in &grad.cov_factors {
            for col in 0..layout.j {
                for row in col..layout.j {
                    let g = gl[(row, col)];
                    flat.push(if row == col { g * sigmoid(params[it]) } else { g });
                    it += 1;
                }
            }
        }
        if layout.kernel > 0 {
            let kg = current_kernel.hyperparameter_gradient(&grad.gram);
            for (i, g) in kg.into_iter().enumerate() {
                flat.push(g * sigmoid(params[it + i]));
            }
            it += layout.kernel;
        }
        if layout.noise {
            flat.push(grad.noise_variance.unwrap_or_else(T::zero) * sigmoid(params[it]));
        }
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective { step, diagnostics: "non-finite gradient".into() });
        }
        adam.ascend(&mut params, &flat);
    }
    Ok(SvgpFit { state, kernel: current_kernel, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;

    fn gram(m: &[f64], n: usize) -> GramKernel<f64> {
        GramKernel::from_matrix(DMatrix::from_row_slice(n, n, m), KernelFamily::Custom).unwrap()
    }

    #[test]
    fn log_density_reference_values() {
        let pred = PredictiveDensity {
            mean: DMatrix::zeros(1, 1),
            variance: DMatrix::from_element(1, 1, 1.0),
            class_probabilities: None,
            clamped_variances: 0,
        };
        let v = log_predictive_density(&pred, Targets::Real(&[0.0])).unwrap().value;
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

        let mut cat = pred.clone();
        cat.class_probabilities = Some(DMatrix::from_row_slice(2, 3, &[1.0 / 3.0; 6]));
        cat.mean = DMatrix::zeros(2, 3);
        let v = log_predictive_density(&cat, Targets::<f64>::Classes(&[0, 2])).unwrap();
        assert!((v.value - (1.0f64 / 3.0).ln()).abs() < 1e-12);

        cat.class_probabilities = Some(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        let v = log_predictive_density(&cat, Targets::<f64>::Classes(&[0, 2])).unwrap();
        assert_eq!(v.value, 0.0);
        let v = log_predictive_density(&cat, Targets::<f64>::Classes(&[1, 2])).unwrap();
        assert_eq!(v.clamped, 1);
        assert!((v.value - 0.5 * MIN_PROBABILITY.ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_training_set_gives_prior() {
        let k = gram(&[2.0, 0.5, 0.5, 1.0], 2);
        let lik = GaussianLikelihood { noise_variance: 0.1 };
        let p = exact_posterior(&k, &[], &[], &lik, &[0, 1]).unwrap();
        assert_eq!(p.mean, DMatrix::zeros(2, 1));
        assert_eq!(p.variance.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn kl_vanishes_at_prior() {
        let k = gram(&[2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 1.5], 3);
        let state = SvgpState::prior(&k, &[0, 2], Likelihood::gaussian(0.1)).unwrap();
        assert!(kl_divergence(&state, &k).unwrap().abs() < 1e-10);
    }

    #[test]
    fn single_point_elbo_closed_form() {
        // One vertex, prior variance k, q(u) = N(m, s²), inducing at the data vertex:
        // E[log N(y|f,σ²)] = -½log(2πσ²) - ((y-m)² + s²)/(2σ²)
        // KL = ½(s²/k + m²/k - 1 + ln k - ln s²)
        let (kv, m, s, y, s2) = (1.7, 0.4, 0.6, 1.1, 0.2);
        let k = gram(&[kv, 0.3, 0.3, 1.0], 2);
        let mut state = SvgpState::prior(&k, &[0], Likelihood::gaussian(s2)).unwrap();
        state.means[(0, 0)] = m;
        state.cov_factors[0][(0, 0)] = s;
        let e = -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - ((y - m) * (y - m) + s * s) / (2.0 * s2);
        let kl = 0.5 * (s * s / kv + m * m / kv - 1.0 + kv.ln() - (s * s).ln());
        let v = elbo(&state, &k, &[0], Targets::Real(&[y])).unwrap();
        assert!((v - (e - kl)).abs() < 1e-8, "{v} vs {}", e - kl);
    }

    #[test]
    fn saturated_class_margin_concentrates_probability() {
        let mean = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 40.0]);
        let var = DMatrix::from_element(1, 3, 1e-4);
        let p = mc_class_probabilities(&mean, &var, 64, 3);
        assert!(p[(0, 2)] > 1.0 - 1e-12);
        assert!(p[(0, 0)] < 1e-12 && p[(0, 1)] < 1e-12);
    }

    #[test]
    fn rejects_mismatched_targets() {
        let k = gram(&[1.0, 0.0, 0.0, 1.0], 2);
        let state = SvgpState::prior(&k, &[0, 1], Likelihood::gaussian(0.1)).unwrap();
        assert!(elbo(&state, &k, &[0], Targets::<f64>::Classes(&[0])).is_err());
        assert!(elbo(&state, &k, &[0, 1], Targets::Real(&[0.0])).is_err());
    }
}
