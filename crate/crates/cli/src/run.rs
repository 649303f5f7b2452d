use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hypergp::io::{
    config_hash, format_embedding, format_trace, gram_sidecar, parse_attribute_table, parse_labels, parse_ratings,
    read_hypergraph, save_factors, save_results, sha256_hex, write_gram, NamedHypergraph, VertexLabels,
};
use hypergp::kernel::{diffusion_gram, eigendecompose, AmplitudeScaling, MaternHyperparams, SpectralMatern};
use hypergp::metrics::MetricConventions;
use hypergp::optim::OptConfig;
use hypergp::pipelines::{classify, embed, kpmf_experiment, ClassifyConfig, EmbedConfig, KpmfConfig};
use hypergp::inducing::select_for_hypergraph;
use hypergp::{Error, Result};
use serde_json::{json, Value};

use crate::args::{
    ClassifyArgs, Cli, Command, EmbedArgs, InputArgs, KernelArgs, KernelKind, KpmfArgs, MaternArgs, OptArgs, SelectArgs,
};

const EMBEDDING_SCORING: &str = "k-means on the embedding with k = number of classes, scored by AMI, homogeneity and completeness";

/// Files written so far, with their SHA-256 digests.
struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        fs::write(self.path(name), contents)?;
        self.record(name)
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        self.write(name, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
    }

    /// Hashes a file that was written by a library routine.
    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = fs::read(self.path(name))?;
        self.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_input(input: &InputArgs) -> Result<(NamedHypergraph, Option<VertexLabels>)> {
    match (&input.hypergraph, &input.table) {
        (Some(path), None) => {
            read_text(path)?;
            Ok((read_hypergraph(path, input.index.as_deref())?, None))
        }
        (None, Some(path)) => parse_attribute_table(&read_text(path)?, input.label_column),
        _ => Err(Error::InvalidArgument("exactly one of --hypergraph or --table is required".into())),
    }
}

fn resolve_labels(path: Option<&Path>, from_table: Option<VertexLabels>, names: &[String]) -> Result<Option<VertexLabels>> {
    match path {
        Some(p) => Ok(Some(parse_labels(&read_text(p)?, names)?)),
        None => Ok(from_table),
    }
}

fn hyperparams(m: &MaternArgs) -> Result<MaternHyperparams<f64>> {
    MaternHyperparams::new(m.nu, m.lengthscale, m.variance)
}

fn opt_config(o: &OptArgs, seed: u64, steps: usize, lr: f64) -> OptConfig {
    OptConfig {
        steps: o.steps.unwrap_or(steps),
        learning_rate: o.lr.unwrap_or(lr),
        seed,
        train_kernel: !o.fix_kernel,
        train_likelihood: !o.fix_noise,
        batch_size: None,
    }
}

/// Serialises `value` without the named (bulky) fields.
fn without<T: serde::Serialize>(value: &T, drop: &[&str]) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    if let Value::Object(map) = &mut v {
        for key in drop {
            map.remove(*key);
        }
    }
    Ok(v)
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut out = Outputs::new(&cli.out_dir)?;
    let seeds = match &cli.command {
        Command::Kernel(a) => kernel(a, &mut out).map(|_| vec![])?,
        Command::Classify(a) => run_classify(a, cli, &mut out)?,
        Command::Embed(a) => run_embed(a, cli, &mut out)?,
        Command::Kpmf(a) => run_kpmf(a, cli, &mut out)?,
        Command::SelectInducing(a) => select(a, cli.seed, &mut out).map(|_| vec![cli.seed])?,
    };
    let manifest = json!({
        "command": cli.command.name(),
        "seed": cli.seed,
        "seeds": seeds,
        "config": serde_json::to_value(cli)?,
        "config_hash": config_hash(cli)?,
        "outputs": out.files,
    });
    fs::write(out.path("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn kernel(a: &KernelArgs, out: &mut Outputs) -> Result<()> {
    let (named, _) = load_input(&a.input)?;
    let h = &named.hypergraph;
    let gram = match a.kernel {
        KernelKind::Matern => {
            SpectralMatern::hypergraph(h.laplacian().matrix(), hyperparams(&a.matern)?, AmplitudeScaling::UnitMeanDiagonal)?
                .gram()
                .clone()
        }
        KernelKind::Diffusion => diffusion_gram(&eigendecompose(h.laplacian().matrix())?, a.beta)?,
    };
    write_gram(&out.path("gram.bin"), &gram)?;
    out.record("gram.bin")?;
    let mut sidecar = gram_sidecar(&gram);
    sidecar["vertices"] = json!(named.names);
    out.write_json("gram.json", &sidecar)
}

fn run_classify(a: &ClassifyArgs, cli: &Cli, out: &mut Outputs) -> Result<Vec<u64>> {
    let (named, table_labels) = load_input(&a.input)?;
    let labels = resolve_labels(a.labels.as_deref(), table_labels, &named.names)?
        .ok_or_else(|| Error::InvalidArgument("classification needs labels (--labels or --label-column)".into()))?;
    let mut metrics = serde_json::Map::new();
    let mut seeds = Vec::new();
    for &repr in &a.repr {
        let config = ClassifyConfig {
            representation: repr.into(),
            hyperparams: hyperparams(&a.matern)?,
            num_inducing: a.j,
            num_clusters: a.k,
            test_fraction: a.test_fraction,
            partitions: a.partitions,
            mc_samples: a.mc_samples,
            ece_bins: a.ece_bins,
            opt: opt_config(&a.opt, cli.seed, 1000, 0.01),
        };
        let report = classify(&named.hypergraph, &labels.labels, labels.class_names.len(), &config)?;
        let name = report.representation.name();
        let mut partitions = Vec::new();
        for (p, part) in report.partitions.iter().enumerate() {
            out.write(&format!("elbo_{name}_p{p}.tsv"), format_trace(&part.elbo_trace).as_bytes())?;
            let mut v = without(part, &["elbo_trace", "test_indices"])?;
            v["test_vertices"] = json!(part.test_indices.iter().map(|&i| &named.names[i]).collect::<Vec<_>>());
            partitions.push(v);
            seeds.push(part.seed);
        }
        metrics.insert(name.to_string(), json!({ "summary": report.summary, "partitions": partitions }));
    }
    seeds.sort_unstable();
    seeds.dedup();
    let conventions = serde_json::to_value(MetricConventions { ece_bins: a.ece_bins, ..MetricConventions::default() })?;
    save_results(&out.path("metrics.json"), &Value::Object(metrics), &conventions, &seeds, cli)?;
    out.record("metrics.json")?;
    Ok(seeds)
}

fn run_embed(a: &EmbedArgs, cli: &Cli, out: &mut Outputs) -> Result<Vec<u64>> {
    let (named, table_labels) = load_input(&a.input)?;
    let labels = resolve_labels(a.labels.as_deref(), table_labels, &named.names)?;
    let config = EmbedConfig {
        method: a.method.into(),
        latent_dim: a.latent_dim,
        hyperparams: hyperparams(&a.matern)?,
        opt: opt_config(&a.opt, cli.seed, 1000, 0.01),
    };
    let report = embed(&named.hypergraph, labels.as_ref().map(|l| l.labels.as_slice()), &config)?;
    let class_names: Option<Vec<String>> =
        labels.as_ref().map(|l| l.labels.iter().map(|&c| l.class_names[c].clone()).collect());
    out.write("embedding.tsv", format_embedding(&named.names, &report.x, class_names.as_deref())?.as_bytes())?;
    if !report.objective_trace.is_empty() {
        out.write("objective.tsv", format_trace(&report.objective_trace).as_bytes())?;
    }
    let metrics = json!({
        "scores": report.scores,
        "predicted_clusters": report.predicted,
    });
    let mut conventions = serde_json::to_value(MetricConventions::default())?;
    conventions["embedding_scoring"] = json!(EMBEDDING_SCORING);
    save_results(&out.path("metrics.json"), &metrics, &conventions, &[cli.seed], cli)?;
    out.record("metrics.json")?;
    Ok(vec![cli.seed])
}

fn run_kpmf(a: &KpmfArgs, cli: &Cli, out: &mut Outputs) -> Result<Vec<u64>> {
    let data = parse_ratings(&read_text(&a.ratings)?)?;
    let config = KpmfConfig {
        kernel: a.kernel.into(),
        hyperparams: hyperparams(&a.matern)?,
        beta: a.beta,
        latent_dim: a.latent_dim,
        sparse: a.sparse.as_ref().map(|s| (s[0], s[1])),
        test_fraction: a.test_fraction,
        partitions: a.partitions,
        opt: opt_config(&a.opt, cli.seed, 2000, 0.001),
    };
    let report = kpmf_experiment(&data.matrix, &config)?;
    let mut partitions = Vec::new();
    for (p, part) in report.partitions.iter().enumerate() {
        out.write(&format!("log_posterior_p{p}.tsv"), format_trace(&part.log_posterior_trace).as_bytes())?;
        let name = format!("factors_p{p}.json");
        save_factors(&out.path(&name), &part.factors, json!({ "seed": part.seed, "users": data.users, "items": data.items }))?;
        out.record(&name)?;
        out.record(&format!("{name}.bin"))?;
        partitions.push(without(part, &["log_posterior_trace", "raw_test_predictions", "test_predictions"])?);
    }
    let seeds: Vec<u64> = report.partitions.iter().map(|p| p.seed).collect();
    let metrics = json!({ "summary": report.summary, "partitions": partitions });
    let conventions = json!({
        "rmse": "root mean squared error over held-out entries, predictions clipped to the training range",
        "baseline": "training-mean prediction",
        "nystrom_ridge": "1e-6 x mean gram diagonal",
    });
    save_results(&out.path("metrics.json"), &metrics, &conventions, &seeds, cli)?;
    out.record("metrics.json")?;
    Ok(seeds)
}

fn select(a: &SelectArgs, seed: u64, out: &mut Outputs) -> Result<()> {
    let (named, _) = load_input(&a.input)?;
    let selection = select_for_hypergraph(&named.hypergraph, a.j, a.k, seed)?;
    let mut v = serde_json::to_value(&selection)?;
    v["vertices"] = json!(selection.indices.iter().map(|&i| &named.names[i]).collect::<Vec<_>>());
    out.write_json("inducing.json", &v)
}
