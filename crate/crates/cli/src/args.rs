use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypergp::pipelines::{EmbedMethod, KpmfKernel, Representation};
use hypergp::Error;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "hypergp", version, about = "Gaussian processes on hypergraph vertices")]
pub struct Cli {
    /// Top-level seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving all outputs and the manifest.
    #[arg(long, global = true, default_value = "hypergp-out")]
    #[serde(skip)]
    pub out_dir: PathBuf,
    /// Flat `key = value` file; keys are flag names without the dashes.
    /// Flags given on the command line take precedence.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build a Matérn or diffusion gram matrix.
    Kernel(KernelArgs),
    /// Vertex classification with a sparse variational GP.
    Classify(ClassifyArgs),
    /// Latent embedding of the vertices.
    Embed(EmbedArgs),
    /// Matrix completion with hypergraph priors on the factors.
    Kpmf(KpmfArgs),
    /// Choose inducing vertices.
    SelectInducing(SelectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Kernel(_) => "kernel",
            Command::Classify(_) => "classify",
            Command::Embed(_) => "embed",
            Command::Kpmf(_) => "kpmf",
            Command::SelectInducing(_) => "select-inducing",
        }
    }
}

/// A hypergraph file (with optional index sidecar) or an attribute table.
#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    #[arg(long, conflicts_with = "table")]
    pub hypergraph: Option<PathBuf>,
    /// JSON name→index map fixing the vertex order.
    #[arg(long, requires = "hypergraph")]
    pub index: Option<PathBuf>,
    /// Comma-separated attribute table, one hyperedge per attribute value.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Table column (after the name) holding class labels.
    #[arg(long, requires = "table")]
    pub label_column: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct MaternArgs {
    #[arg(long, default_value_t = 1.5)]
    pub nu: f64,
    #[arg(long, default_value_t = 5.0)]
    pub lengthscale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub variance: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct OptArgs {
    /// Optimiser steps (command-specific default).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam learning rate (command-specific default).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Keep kernel hyperparameters at their initial values.
    #[arg(long)]
    pub fix_kernel: bool,
    /// Keep the likelihood noise at its initial value.
    #[arg(long)]
    pub fix_noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Matern,
    Diffusion,
}

impl From<KernelKind> for KpmfKernel {
    fn from(k: KernelKind) -> Self {
        match k {
            KernelKind::Matern => KpmfKernel::Matern,
            KernelKind::Diffusion => KpmfKernel::Diffusion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReprKind {
    Hypergraph,
    CliqueWeighted,
    CliqueBinary,
}

impl From<ReprKind> for Representation {
    fn from(r: ReprKind) -> Self {
        match r {
            ReprKind::Hypergraph => Representation::Hypergraph,
            ReprKind::CliqueWeighted => Representation::CliqueWeighted,
            ReprKind::CliqueBinary => Representation::CliqueBinary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Gplvm,
    Spectral,
}

impl From<MethodKind> for EmbedMethod {
    fn from(m: MethodKind) -> Self {
        match m {
            MethodKind::Gplvm => EmbedMethod::Gplvm,
            MethodKind::Spectral => EmbedMethod::Spectral,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct KernelArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "matern")]
    pub kernel: KernelKind,
    #[command(flatten)]
    pub matern: MaternArgs,
    #[arg(long, default_value_t = hypergp::kernel::DEFAULT_DIFFUSION_BETA)]
    pub beta: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// `vertex_name<TAB>class_name` lines.
    #[arg(long, required_unless_present = "label_column")]
    pub labels: Option<PathBuf>,
    /// Representations to fit, comma separated or repeated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "hypergraph")]
    pub repr: Vec<ReprKind>,
    #[command(flatten)]
    pub matern: MaternArgs,
    /// Inducing vertices; all vertices when omitted.
    #[arg(long = "J")]
    pub j: Option<usize>,
    /// Clusters for inducing selection.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub partitions: usize,
    #[arg(long, default_value_t = 20)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = hypergp::metrics::DEFAULT_ECE_BINS)]
    pub ece_bins: usize,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Labels to score the embedding against.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gplvm")]
    pub method: MethodKind,
    #[arg(long, default_value_t = 2)]
    pub latent_dim: usize,
    #[command(flatten)]
    pub matern: MaternArgs,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct KpmfArgs {
    /// `user item rating [timestamp]` lines.
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long, value_enum, default_value = "matern")]
    pub kernel: KernelKind,
    #[command(flatten)]
    pub matern: MaternArgs,
    #[arg(long, default_value_t = hypergp::kernel::DEFAULT_DIFFUSION_BETA)]
    pub beta: f64,
    /// Nyström inducing counts for users and items; dense priors when omitted.
    #[arg(long, num_args = 2, value_names = ["J_U", "J_W"])]
    pub sparse: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = hypergp::kpmf::DEFAULT_LATENT_DIM)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub partitions: usize,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long = "J")]
    pub j: usize,
    #[arg(long)]
    pub k: Option<usize>,
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(rest));
        }
    }
    None
}

/// `key = value` pairs with their line numbers.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let column = line.len() - line.trim_start().len() + 1;
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::Parse { line: i + 1, column, message: "expected `key = value`".into() });
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Parse { line: i + 1, column, message: format!("invalid key `{key}`") });
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Appends config-file entries as flags unless the command line already
/// sets them.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, Error> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
    let present = |flag: &str| {
        args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag || s.starts_with(&format!("{flag}="))
        })
    };
    let mut merged = args.clone();
    for (key, value) in parse_config(&text)? {
        if key == "config" {
            continue;
        }
        let flag = format!("--{key}");
        if present(&flag) {
            continue;
        }
        match value.as_str() {
            "true" => merged.push(flag.into()),
            "false" => {}
            _ => {
                merged.push(flag.into());
                merged.extend(value.split_whitespace().map(OsString::from));
            }
        }
    }
    Ok(merged)
}
