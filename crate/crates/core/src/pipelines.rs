//! End-to-end experiments shared by the command-line tool and the tests:
//! vertex classification over repeated partitions, embeddings scored
//! against labels, and matrix completion.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit_svgp, log_predictive_density, predict_svgp, CategoricalLikelihood, Likelihood, Targets};
use crate::gplvm::{fit_gplvm, spectral_embedding};
use crate::hypergraph::{clique_expansion, normalized_graph_laplacian, CliqueMode, Hypergraph};
use crate::inducing::select_for_hypergraph;
use crate::io::{stratified_split, Split};
use crate::kernel::{
    diffusion_gram, eigendecompose, AmplitudeScaling, GramKernel, MaternHyperparams, SpectralMatern,
    DEFAULT_DIFFUSION_BETA,
};
use crate::kmeans::kmeans;
use crate::kpmf::{kpmf_fit, kpmf_predict, nystrom_approx, DensePrior, FactorPair, FactorPrior, RatingsMatrix};
use crate::metrics::{classification_metrics, clustering_scores, ece, rmse, ClusteringScores, DEFAULT_ECE_BINS};
use crate::optim::OptConfig;

/// Mean and standard error (sample standard deviation over √n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mean_stderr(values: &[f64]) -> MeanStderr {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStderr { mean: f64::NAN, stderr: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    MeanStderr { mean, stderr }
}

/// Seed used for partition `p` of a run seeded with `seed`.
pub fn partition_seed(seed: u64, p: usize) -> u64 {
    seed.wrapping_add(p as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Hypergraph,
    CliqueWeighted,
    CliqueBinary,
}

impl Representation {
    pub fn name(&self) -> &'static str {
        match self {
            Representation::Hypergraph => "hypergraph",
            Representation::CliqueWeighted => "clique-weighted",
            Representation::CliqueBinary => "clique-binary",
        }
    }
}

/// Matérn kernel on the hypergraph Laplacian or on the normalised Laplacian
/// of a clique expansion.
pub fn representation_kernel(
    h: &Hypergraph<f64>,
    repr: Representation,
    hp: MaternHyperparams<f64>,
) -> Result<SpectralMatern<f64>> {
    let scaling = AmplitudeScaling::UnitMeanDiagonal;
    match repr {
        Representation::Hypergraph => SpectralMatern::hypergraph(h.laplacian().matrix(), hp, scaling),
        Representation::CliqueWeighted => {
            SpectralMatern::graph(&clique_expansion(&h.incidence(), CliqueMode::Weighted), hp, scaling)
        }
        Representation::CliqueBinary => {
            SpectralMatern::graph(&clique_expansion(&h.incidence(), CliqueMode::Binary), hp, scaling)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub representation: Representation,
    pub hyperparams: MaternHyperparams<f64>,
    /// Inducing vertices; all vertices when `None`.
    pub num_inducing: Option<usize>,
    pub num_clusters: Option<usize>,
    pub test_fraction: f64,
    pub partitions: usize,
    pub mc_samples: usize,
    pub ece_bins: usize,
    pub opt: OptConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            representation: Representation::Hypergraph,
            hyperparams: MaternHyperparams::default(),
            num_inducing: None,
            num_clusters: None,
            test_fraction: 0.25,
            partitions: 10,
            mc_samples: 20,
            ece_bins: DEFAULT_ECE_BINS,
            opt: OptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyPartition {
    pub seed: u64,
    pub test_indices: Vec<usize>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub ece: f64,
    pub log_density: f64,
    pub clamped_probabilities: usize,
    pub elbo_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub representation: Representation,
    pub partitions: Vec<ClassifyPartition>,
    pub summary: BTreeMap<String, MeanStderr>,
}

/// Fits a categorical SVGP per partition and scores held-out vertices.
pub fn classify(h: &Hypergraph<f64>, labels: &[usize], num_classes: usize, config: &ClassifyConfig) -> Result<ClassifyReport> {
    let n = h.num_vertices();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { what: "labels", expected: n, found: labels.len() });
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument("classification needs at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::IndexOutOfRange { index: bad, bound: num_classes });
    }
    if config.partitions == 0 {
        return Err(Error::InvalidArgument("at least one partition is required".into()));
    }
    let kernel = representation_kernel(h, config.representation, config.hyperparams)?;
    let mut partitions = Vec::with_capacity(config.partitions);
    for p in 0..config.partitions {
        let seed = partition_seed(config.opt.seed, p);
        let split = stratified_split(n, Some(labels), config.test_fraction, seed)?;
        let train: Vec<usize> = (0..n).filter(|&i| split[i] == Split::Train).collect();
        let test: Vec<usize> = (0..n).filter(|&i| split[i] == Split::Test).collect();
        if test.is_empty() {
            return Err(Error::InvalidArgument("the split leaves no test vertices".into()));
        }
        let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let inducing = match config.num_inducing {
            None => (0..n).collect(),
            Some(j) => select_for_hypergraph(h, j, config.num_clusters, seed)?.indices,
        };
        let mut lik = CategoricalLikelihood::new(num_classes, seed);
        lik.mc_samples = config.mc_samples;
        let opt = OptConfig { seed, ..config.opt.clone() };
        let fit = fit_svgp(&kernel, &train, Targets::Classes(&y), Likelihood::Categorical(lik), &inducing, &opt)?;
        let pred = predict_svgp(&fit.state, fit.kernel.gram(), &test)?;
        let probs = pred.class_probabilities.clone().expect("categorical predictions carry probabilities");
        let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let m = classification_metrics(&y_test, &probs)?;
        let lpd = log_predictive_density(&pred, Targets::<f64>::Classes(&y_test))?;
        partitions.push(ClassifyPartition {
            seed,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            ece: ece(&y_test, &probs, config.ece_bins)?,
            log_density: lpd.value,
            clamped_probabilities: lpd.clamped,
            elbo_trace: fit.trace,
            test_indices: test,
        });
    }
    let column = |f: fn(&ClassifyPartition) -> f64| mean_stderr(&partitions.iter().map(f).collect::<Vec<_>>());
    let summary = BTreeMap::from([
        ("accuracy".to_string(), column(|p| p.accuracy)),
        ("precision".to_string(), column(|p| p.precision)),
        ("recall".to_string(), column(|p| p.recall)),
        ("ece".to_string(), column(|p| p.ece)),
        ("log_density".to_string(), column(|p| p.log_density)),
    ]);
    Ok(ClassifyReport { representation: config.representation, partitions, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMethod {
    Gplvm,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub method: EmbedMethod,
    pub latent_dim: usize,
    /// Structural kernel for the GPLVM.
    pub hyperparams: MaternHyperparams<f64>,
    pub opt: OptConfig,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { method: EmbedMethod::Gplvm, latent_dim: 2, hyperparams: MaternHyperparams::default(), opt: OptConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedReport {
    pub x: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    /// k-means partition of the embedding with k = number of classes.
    pub predicted: Option<Vec<usize>>,
    pub scores: Option<ClusteringScores>,
}

/// Embeds the vertices and, given labels, scores a k-means partition of the
/// coordinates against them.
pub fn embed(h: &Hypergraph<f64>, labels: Option<&[usize]>, config: &EmbedConfig) -> Result<EmbedReport> {
    let (x, objective_trace) = match config.method {
        EmbedMethod::Spectral => {
            (spectral_embedding(&h.laplacian(), &h.degrees().vertex_degrees, config.latent_dim)?, Vec::new())
        }
        EmbedMethod::Gplvm => {
            let kvv = SpectralMatern::hypergraph(h.laplacian().matrix(), config.hyperparams, AmplitudeScaling::UnitMeanDiagonal)?;
            let fit = fit_gplvm(h, kvv.gram(), config.latent_dim, &config.opt)?;
            (fit.latent.x, fit.trace)
        }
    };
    let (predicted, scores) = match labels {
        Some(l) => {
            if l.len() != h.num_vertices() {
                return Err(Error::DimensionMismatch { what: "labels", expected: h.num_vertices(), found: l.len() });
            }
            let mut classes = l.to_vec();
            classes.sort_unstable();
            classes.dedup();
            let k = classes.len();
            let pred = kmeans(&x, k, config.opt.seed)?.labels;
            let s = clustering_scores(l, &pred)?;
            (Some(pred), Some(s))
        }
        None => (None, None),
    };
    Ok(EmbedReport { x, objective_trace, predicted, scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KpmfKernel {
    /// Matérn on the user hypergraph and its dual.
    Matern,
    /// `exp(−βL)` on the weighted clique expansions.
    Diffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpmfConfig {
    pub kernel: KpmfKernel,
    pub hyperparams: MaternHyperparams<f64>,
    pub beta: f64,
    pub latent_dim: usize,
    /// Nyström sizes `(J_U, J_W)`; dense priors when `None`.
    pub sparse: Option<(usize, usize)>,
    pub test_fraction: f64,
    pub partitions: usize,
    pub opt: OptConfig,
}

impl Default for KpmfConfig {
    fn default() -> Self {
        Self {
            kernel: KpmfKernel::Matern,
            hyperparams: MaternHyperparams::default(),
            beta: DEFAULT_DIFFUSION_BETA,
            latent_dim: crate::kpmf::DEFAULT_LATENT_DIM,
            sparse: None,
            test_fraction: 0.2,
            partitions: 10,
            opt: OptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpmfPartition {
    pub seed: u64,
    pub train_rmse: f64,
    pub test_rmse: Option<f64>,
    /// Held-out RMSE of predicting the training mean everywhere.
    pub baseline_rmse: Option<f64>,
    pub test_size: usize,
    pub log_posterior_trace: Vec<f64>,
    /// Clipped held-out predictions in test order.
    pub test_predictions: Vec<f64>,
    pub raw_test_predictions: Vec<f64>,
    pub nystrom_ridge: Option<(f64, f64)>,
    #[serde(skip)]
    pub factors: FactorPair<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpmfReport {
    pub partitions: Vec<KpmfPartition>,
    pub summary: BTreeMap<String, MeanStderr>,
}

fn kpmf_gram(h: &Hypergraph<f64>, config: &KpmfConfig) -> Result<GramKernel<f64>> {
    match config.kernel {
        KpmfKernel::Matern => Ok(SpectralMatern::hypergraph(
            h.laplacian().matrix(),
            config.hyperparams,
            AmplitudeScaling::UnitMeanDiagonal,
        )?
        .gram()
        .clone()),
        KpmfKernel::Diffusion => {
            let l = normalized_graph_laplacian(&clique_expansion::<f64>(&h.incidence(), CliqueMode::Weighted))?;
            diffusion_gram(&eigendecompose(&l)?, config.beta)
        }
    }
}

fn kpmf_prior(
    h: &Hypergraph<f64>,
    config: &KpmfConfig,
    inducing: Option<usize>,
    seed: u64,
) -> Result<(Box<dyn FactorPrior<f64>>, Option<f64>)> {
    let k = kpmf_gram(h, config)?;
    match inducing {
        None => Ok((Box::new(DensePrior::new(&k)?), None)),
        Some(j) => {
            let z = select_for_hypergraph(h, j, None, seed)?.indices;
            let approx = nystrom_approx(&k, &z)?;
            let ridge = approx.ridge;
            Ok((Box::new(approx), Some(ridge)))
        }
    }
}

/// Fits KPMF per partition with kernels built from the training entries
/// only: users are vertices of the co-rating hypergraph, items vertices of
/// its dual.
pub fn kpmf_experiment(r: &RatingsMatrix<f64>, config: &KpmfConfig) -> Result<KpmfReport> {
    if config.partitions == 0 {
        return Err(Error::InvalidArgument("at least one partition is required".into()));
    }
    let mut partitions = Vec::with_capacity(config.partitions);
    for p in 0..config.partitions {
        let seed = partition_seed(config.opt.seed, p);
        let (train, test) = r.split(config.test_fraction, seed)?;
        let users = train.user_hypergraph()?;
        let items = users.dual()?;
        let (ku, ridge_u) = kpmf_prior(&users, config, config.sparse.map(|s| s.0), seed)?;
        let (kw, ridge_w) = kpmf_prior(&items, config, config.sparse.map(|s| s.1), seed)?;
        let opt = OptConfig { seed, ..config.opt.clone() };
        let fit = kpmf_fit(&train, config.latent_dim, ku.as_ref(), kw.as_ref(), &opt)?;
        let range = train.value_range();
        let pairs = |m: &RatingsMatrix<f64>| m.triples().iter().map(|&(a, b, _)| (a, b)).collect::<Vec<_>>();
        let values = |m: &RatingsMatrix<f64>| m.triples().iter().map(|t| t.2).collect::<Vec<_>>();
        let train_pred = kpmf_predict(&fit.factors, &pairs(&train), range)?;
        let train_rmse = rmse(&values(&train), &train_pred)?;
        let raw = kpmf_predict(&fit.factors, &pairs(&test), None)?;
        let clipped = kpmf_predict(&fit.factors, &pairs(&test), range)?;
        let (test_rmse, baseline_rmse) = if test.is_empty() {
            (None, None)
        } else {
            let truth = values(&test);
            let mean = values(&train).iter().sum::<f64>() / train.len() as f64;
            (Some(rmse(&truth, &clipped)?), Some(rmse(&truth, &vec![mean; truth.len()])?))
        };
        partitions.push(KpmfPartition {
            seed,
            train_rmse,
            test_rmse,
            baseline_rmse,
            test_size: test.len(),
            log_posterior_trace: fit.trace,
            test_predictions: clipped,
            raw_test_predictions: raw,
            nystrom_ridge: ridge_u.zip(ridge_w),
            factors: fit.factors,
        });
    }
    let mut summary = BTreeMap::new();
    summary.insert("train_rmse".to_string(), mean_stderr(&partitions.iter().map(|p| p.train_rmse).collect::<Vec<_>>()));
    let test: Vec<f64> = partitions.iter().filter_map(|p| p.test_rmse).collect();
    if !test.is_empty() {
        summary.insert("test_rmse".to_string(), mean_stderr(&test));
        let base: Vec<f64> = partitions.iter().filter_map(|p| p.baseline_rmse).collect();
        summary.insert("baseline_rmse".to_string(), mean_stderr(&base));
    }
    Ok(KpmfReport { partitions, summary })
}
