//! File formats and persistence.
//!
//! Text formats are UTF-8, line oriented, tolerate extra whitespace and skip
//! blank lines and `#` comments. Every parse failure carries a 1-based line
//! and column.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::{Likelihood, SvgpState};
use crate::hypergraph::{Hypergraph, IncidenceMatrix};
use crate::kernel::GramKernel;
use crate::kpmf::{FactorPair, RatingsMatrix};
use crate::synthetic::rng;

pub const GRAM_MAGIC: &[u8; 8] = b"HGPGRAM1";
pub const MATRIX_MAGIC: &[u8; 8] = b"HGPMATS1";

/// Non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let trimmed = line.trim();
        (!trimmed.is_empty() && !trimmed.starts_with('#')).then_some((i + 1, line))
    })
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter().map(|(s, t)| (line[..s].chars().count() + 1, t)).collect()
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    fs::File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

fn parse_num<F: std::str::FromStr>(token: &str, line: usize, column: usize, what: &str) -> Result<F> {
    token.parse().map_err(|_| Error::parse(line, column, format!("expected {what}, found `{token}`")))
}

/// A hypergraph whose vertices carry names.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedHypergraph {
    pub hypergraph: Hypergraph<f64>,
    /// Vertex names in index order.
    pub names: Vec<String>,
}

impl NamedHypergraph {
    /// Names `0`, `1`, … for an unnamed hypergraph.
    pub fn with_index_names(hypergraph: Hypergraph<f64>) -> Self {
        let names = (0..hypergraph.num_vertices()).map(|i| i.to_string()).collect();
        Self { hypergraph, names }
    }

    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
    }
}

/// Parses the hypergraph text format: a header `N M`, then one line per
/// hyperedge holding an optional `w=<weight>` token and vertex names.
/// Vertices are indexed by `index` when given (the JSON sidecar), otherwise
/// in order of first appearance.
pub fn parse_hypergraph(text: &str, index: Option<&BTreeMap<String, usize>>) -> Result<NamedHypergraph> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, 1, "missing `N M` header"))?;
    let ht = tokens(header);
    if ht.len() != 2 {
        return Err(Error::parse(hline, 1, "header must be `N M`"));
    }
    let n: usize = parse_num(ht[0].1, hline, ht[0].0, "vertex count")?;
    let m: usize = parse_num(ht[1].1, hline, ht[1].0, "hyperedge count")?;
    let mut names: Vec<Option<String>> = vec![None; n];
    let mut seen: HashMap<String, usize> = HashMap::new();
    if let Some(map) = index {
        if map.len() != n {
            return Err(Error::InvalidArgument(format!("sidecar lists {} vertices, header declares {n}", map.len())));
        }
        for (name, &v) in map {
            if v >= n || names[v].is_some() {
                return Err(Error::InvalidArgument(format!("sidecar index {v} for `{name}` is out of range or repeated")));
            }
            names[v] = Some(name.clone());
            seen.insert(name.clone(), v);
        }
    }
    let mut edges = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let mut any_weight = false;
    let mut last_line = hline;
    for (lineno, line) in lines {
        last_line = lineno;
        if edges.len() == m {
            return Err(Error::parse(lineno, 1, format!("more than the declared {m} hyperedges")));
        }
        let mut toks = tokens(line).into_iter().peekable();
        let mut weight = 1.0;
        if let Some(&(col, t)) = toks.peek() {
            if let Some(w) = t.strip_prefix("w=") {
                weight = parse_num(w, lineno, col + 2, "weight")?;
                if !(weight > 0.0) || !f64::is_finite(weight) {
                    return Err(Error::parse(lineno, col + 2, format!("weight must be positive and finite, found {w}")));
                }
                any_weight = true;
                toks.next();
            }
        }
        let mut edge = Vec::new();
        for (col, name) in toks {
            let v = match seen.get(name) {
                Some(&v) => v,
                None if index.is_some() => {
                    return Err(Error::parse(lineno, col, format!("vertex `{name}` is not in the sidecar")));
                }
                None => {
                    let v = seen.len();
                    if v >= n {
                        return Err(Error::parse(lineno, col, format!("vertex `{name}` exceeds the declared {n} vertices")));
                    }
                    seen.insert(name.to_string(), v);
                    names[v] = Some(name.to_string());
                    v
                }
            };
            if edge.contains(&v) {
                return Err(Error::parse(lineno, col, format!("vertex `{name}` repeated in hyperedge")));
            }
            edge.push(v);
        }
        if edge.is_empty() {
            return Err(Error::parse(lineno, 1, "empty hyperedge"));
        }
        edges.push(edge);
        weights.push(weight);
    }
    if edges.len() != m {
        return Err(Error::parse(last_line, 1, format!("declared {m} hyperedges, found {}", edges.len())));
    }
    if seen.len() != n {
        return Err(Error::parse(hline, 1, format!("declared {n} vertices, hyperedges mention {}", seen.len())));
    }
    let hypergraph = Hypergraph::new(n, edges, any_weight.then_some(weights))?;
    let names = names.into_iter().map(|x| x.expect("every index named")).collect();
    Ok(NamedHypergraph { hypergraph, names })
}

/// Reads a hypergraph file, using the name→index sidecar when one is given.
pub fn read_hypergraph(path: &Path, sidecar: Option<&Path>) -> Result<NamedHypergraph> {
    let index = sidecar.map(|p| -> Result<BTreeMap<String, usize>> { Ok(serde_json::from_str(&read_text(p)?)?) }).transpose()?;
    parse_hypergraph(&read_text(path)?, index.as_ref())
}

/// Inverse of [`parse_hypergraph`]. Weights are written only for weighted
/// hypergraphs.
pub fn format_hypergraph(h: &NamedHypergraph) -> Result<String> {
    let g = &h.hypergraph;
    if h.names.len() != g.num_vertices() {
        return Err(Error::DimensionMismatch { what: "vertex names", expected: g.num_vertices(), found: h.names.len() });
    }
    let writable = |n: &String| !n.is_empty() && !n.chars().any(char::is_whitespace) && !n.starts_with("w=") && !n.starts_with('#');
    if let Some(bad) = h.names.iter().find(|n| !writable(n)) {
        return Err(Error::InvalidArgument(format!("vertex name `{bad}` cannot be written")));
    }
    let mut unique = h.names.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != h.names.len() {
        return Err(Error::InvalidArgument("vertex names must be distinct".into()));
    }
    let mut out = format!("{} {}\n", g.num_vertices(), g.num_edges());
    for (e, &w) in g.hyperedges().iter().zip(g.weights()) {
        let mut parts = Vec::with_capacity(e.len() + 1);
        if g.is_weighted() {
            parts.push(format!("w={w:?}"));
        }
        parts.extend(e.iter().map(|&v| h.names[v].clone()));
        out.push_str(&parts.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Writes the text form and the JSON name→index sidecar.
pub fn write_hypergraph(h: &NamedHypergraph, path: &Path, sidecar: &Path) -> Result<()> {
    fs::write(path, format_hypergraph(h)?)?;
    let map: BTreeMap<&str, usize> = h.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    fs::write(sidecar, serde_json::to_string_pretty(&map)? + "\n")?;
    Ok(())
}

/// `vertex_index edge_index` per nonzero of `H`.
pub fn format_incidence_coo(h: &IncidenceMatrix) -> String {
    h.coordinates().iter().map(|(v, e)| format!("{v} {e}\n")).collect()
}

/// Labels file: `vertex_name<TAB>class_name`. Class indices follow the
/// sorted class names.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexLabels {
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

fn two_column_file(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut rows = Vec::new();
    for (lineno, line) in content_lines(text) {
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).filter(|f| !f.is_empty()).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 2 {
            return Err(Error::parse(lineno, 1, format!("expected `name<TAB>value`, found {} fields", fields.len())));
        }
        rows.push((lineno, fields[0].to_string(), fields[1].to_string()));
    }
    Ok(rows)
}

fn assign_by_name(
    rows: &[(usize, String, String)],
    names: &[String],
) -> Result<Vec<String>> {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut out: Vec<Option<String>> = vec![None; names.len()];
    for (_, name, value) in rows {
        let &v = index.get(name.as_str()).ok_or_else(|| Error::UnknownVertex(name.clone()))?;
        if out[v].is_some() {
            return Err(Error::DuplicateLabel(name.clone()));
        }
        out[v] = Some(value.clone());
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::MissingLabel(names[i].clone())))
        .collect()
}

pub fn parse_labels(text: &str, names: &[String]) -> Result<VertexLabels> {
    let values = assign_by_name(&two_column_file(text)?, names)?;
    let mut class_names: Vec<String> = values.clone();
    class_names.sort();
    class_names.dedup();
    let labels = values.iter().map(|v| class_names.binary_search(v).expect("class present")).collect();
    Ok(VertexLabels { labels, class_names })
}

pub fn format_labels(names: &[String], labels: &VertexLabels) -> String {
    names.iter().zip(&labels.labels).map(|(n, &l)| format!("{n}\t{}\n", labels.class_names[l])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Splits file: `vertex_name<TAB>{train|test}`.
pub fn parse_splits(text: &str, names: &[String]) -> Result<Vec<Split>> {
    let rows = two_column_file(text)?;
    for (lineno, _, value) in &rows {
        if value != "train" && value != "test" {
            return Err(Error::parse(*lineno, 1, format!("split must be `train` or `test`, found `{value}`")));
        }
    }
    Ok(assign_by_name(&rows, names)?.into_iter().map(|v| if v == "test" { Split::Test } else { Split::Train }).collect())
}

pub fn format_splits(names: &[String], splits: &[Split]) -> String {
    names
        .iter()
        .zip(splits)
        .map(|(n, s)| format!("{n}\t{}\n", if *s == Split::Test { "test" } else { "train" }))
        .collect()
}

/// Seeded split. With labels, each class sends `round(fraction · size)` of
/// its members to test; without, the whole vertex set is sampled.
pub fn stratified_split(n: usize, labels: Option<&[usize]>, test_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    let mut rng = rng(seed);
    let groups: Vec<Vec<usize>> = match labels {
        Some(l) => {
            if l.len() != n {
                return Err(Error::DimensionMismatch { what: "labels", expected: n, found: l.len() });
            }
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (v, &c) in l.iter().enumerate() {
                by_class.entry(c).or_default().push(v);
            }
            by_class.into_values().collect()
        }
        None => vec![(0..n).collect()],
    };
    let mut out = vec![Split::Train; n];
    for mut members in groups {
        members.shuffle(&mut rng);
        let take = (test_fraction * members.len() as f64).round() as usize;
        for &v in &members[..take] {
            out[v] = Split::Test;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub hypergraph: Hypergraph<f64>,
    pub names: Vec<String>,
    pub labels: Option<VertexLabels>,
    pub splits: Option<Vec<Split>>,
}

impl Dataset {
    pub fn indices(&self, which: Split) -> Vec<usize> {
        match &self.splits {
            Some(s) => (0..s.len()).filter(|&i| s[i] == which).collect(),
            None if which == Split::Train => (0..self.names.len()).collect(),
            None => Vec::new(),
        }
    }
}

/// How to obtain the train/test assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitConfig {
    None,
    /// Read from a splits file.
    File(std::path::PathBuf),
    Random { test_fraction: f64, seed: u64 },
}

pub fn load_dataset(
    hypergraph_path: &Path,
    sidecar: Option<&Path>,
    labels_path: Option<&Path>,
    split: &SplitConfig,
) -> Result<Dataset> {
    let named = read_hypergraph(hypergraph_path, sidecar)?;
    let labels = labels_path.map(|p| parse_labels(&read_text(p)?, &named.names)).transpose()?;
    dataset_from_parts(named, labels, split)
}

pub fn dataset_from_parts(named: NamedHypergraph, labels: Option<VertexLabels>, split: &SplitConfig) -> Result<Dataset> {
    let n = named.names.len();
    let splits = match split {
        SplitConfig::None => None,
        SplitConfig::File(p) => Some(parse_splits(&read_text(p)?, &named.names)?),
        SplitConfig::Random { test_fraction, seed } => {
            Some(stratified_split(n, labels.as_ref().map(|l| l.labels.as_slice()), *test_fraction, *seed)?)
        }
    };
    Ok(Dataset { hypergraph: named.hypergraph, names: named.names, labels, splits })
}

/// Zoo-style attribute table: one row per entity, comma separated, entity
/// name first. Each distinct `(column, value)` pair becomes one hyperedge.
/// When `label_column` is set that column (0-based, counted after the name)
/// supplies class labels instead of hyperedges.
pub fn parse_attribute_table(text: &str, label_column: Option<usize>) -> Result<(NamedHypergraph, Option<VertexLabels>)> {
    let mut names = Vec::new();
    let mut seen = HashMap::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut width = None;
    for (lineno, line) in content_lines(text) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::parse(lineno, 1, "expected a name and at least one attribute"));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::parse(lineno, 1, format!("expected {w} fields, found {}", fields.len())));
            }
            _ => {}
        }
        if seen.insert(fields[0].to_string(), names.len()).is_some() {
            return Err(Error::parse(lineno, 1, format!("duplicate entity `{}`", fields[0])));
        }
        names.push(fields[0].to_string());
        rows.push(fields[1..].iter().map(|s| s.to_string()).collect());
    }
    let n = names.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let cols = rows[0].len();
    if let Some(c) = label_column {
        if c >= cols {
            return Err(Error::InvalidArgument(format!("label column {c} out of range ({cols} attributes)")));
        }
    }
    let mut edges: BTreeMap<(usize, String), Vec<usize>> = BTreeMap::new();
    for (v, row) in rows.iter().enumerate() {
        for (c, value) in row.iter().enumerate() {
            if Some(c) != label_column {
                edges.entry((c, value.clone())).or_default().push(v);
            }
        }
    }
    let hypergraph = Hypergraph::new(n, edges.into_values().collect(), None)?;
    let labels = label_column.map(|c| {
        let values: Vec<String> = rows.iter().map(|r| r[c].clone()).collect();
        let mut class_names = values.clone();
        class_names.sort();
        class_names.dedup();
        let labels = values.iter().map(|v| class_names.binary_search(v).expect("class present")).collect();
        VertexLabels { labels, class_names }
    });
    Ok((NamedHypergraph { hypergraph, names }, labels))
}

/// Ratings with the original user and item identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsData {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub matrix: RatingsMatrix<f64>,
}

/// `user item rating [timestamp]` separated by tabs, commas or spaces.
/// Identifiers are indexed in order of first appearance.
pub fn parse_ratings(text: &str) -> Result<RatingsData> {
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut triples = Vec::new();
    let mut seen = HashMap::new();
    for (lineno, line) in content_lines(text) {
        let fields: Vec<&str> = line.split(['\t', ',', ' ']).filter(|f| !f.is_empty()).collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::parse(lineno, 1, format!("expected `user item rating [timestamp]`, found {} fields", fields.len())));
        }
        let col = line.find(fields[2]).map_or(1, |i| i + 1);
        let value: f64 = parse_num(fields[2], lineno, col, "rating")?;
        if !value.is_finite() {
            return Err(Error::parse(lineno, col, "rating must be finite"));
        }
        let intern = |map: &mut HashMap<String, usize>, list: &mut Vec<String>, key: &str| {
            *map.entry(key.to_string()).or_insert_with(|| {
                list.push(key.to_string());
                list.len() - 1
            })
        };
        let u = intern(&mut user_index, &mut users, fields[0]);
        let i = intern(&mut item_index, &mut items, fields[1]);
        if let Some(prev) = seen.insert((u, i), lineno) {
            return Err(Error::parse(lineno, 1, format!("duplicate rating for ({}, {}), first on line {prev}", fields[0], fields[1])));
        }
        triples.push((u, i, value));
    }
    let matrix = RatingsMatrix::new(users.len(), items.len(), triples)?;
    Ok(RatingsData { users, items, matrix })
}

pub fn format_ratings(data: &RatingsData) -> String {
    data.matrix
        .triples()
        .iter()
        .map(|&(u, i, r)| format!("{}\t{}\t{r:?}\n", data.users[u], data.items[i]))
        .collect()
}

/// `step<TAB>value` lines.
pub fn format_trace(trace: &[f64]) -> String {
    trace.iter().enumerate().map(|(i, v)| format!("{i}\t{v:?}\n")).collect()
}

pub fn parse_trace(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let t = tokens(line);
        if t.len() != 2 {
            return Err(Error::parse(lineno, 1, "expected `step value`"));
        }
        let step: usize = parse_num(t[0].1, lineno, t[0].0, "step")?;
        if step != out.len() {
            return Err(Error::parse(lineno, t[0].0, format!("expected step {}, found {step}", out.len())));
        }
        out.push(parse_num(t[1].1, lineno, t[1].0, "value")?);
    }
    Ok(out)
}

/// `name<TAB>x_1 … x_Q[<TAB>label]`.
pub fn format_embedding(names: &[String], x: &DMatrix<f64>, labels: Option<&[String]>) -> Result<String> {
    if names.len() != x.nrows() {
        return Err(Error::DimensionMismatch { what: "embedding rows", expected: names.len(), found: x.nrows() });
    }
    let mut out = String::new();
    for (i, name) in names.iter().enumerate() {
        let mut parts = vec![name.clone()];
        parts.extend(x.row(i).iter().map(|v| format!("{v:?}")));
        if let Some(l) = labels {
            parts.push(l[i].clone());
        }
        out.push_str(&parts.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

/// Inverse of [`format_embedding`] for `q` coordinates.
pub fn parse_embedding(text: &str, q: usize) -> Result<(Vec<String>, DMatrix<f64>, Option<Vec<String>>)> {
    let mut names = Vec::new();
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut labelled = None;
    for (lineno, line) in content_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let has_label = match fields.len() {
            l if l == q + 1 => false,
            l if l == q + 2 => true,
            l => return Err(Error::parse(lineno, 1, format!("expected {} or {} fields, found {l}", q + 1, q + 2))),
        };
        if *labelled.get_or_insert(has_label) != has_label {
            return Err(Error::parse(lineno, 1, "label column present on some rows only"));
        }
        names.push(fields[0].to_string());
        for f in &fields[1..=q] {
            coords.push(parse_num::<f64>(f, lineno, 1, "coordinate")?);
        }
        if has_label {
            labels.push(fields[q + 1].to_string());
        }
    }
    let x = DMatrix::from_row_slice(names.len(), q, &coords);
    Ok((names, x, labelled.unwrap_or(false).then_some(labels)))
}

fn write_f64s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read, const K: usize>(r: &mut R) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf).map_err(|e| Error::InvalidArgument(format!("truncated binary file: {e}")))?;
    Ok(buf)
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    (0..count).map(|_| Ok(f64::from_le_bytes(read_exact::<_, 8>(r)?))).collect()
}

/// Binary gram container: magic, `N` (u64), family tag (u8), hyperparameter
/// count (u32), hyperparameters, then `N²` row-major entries, all
/// little-endian.
pub fn write_gram(path: &Path, k: &GramKernel<f64>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let n = k.dim();
    let hp = k.family().hyperparameters();
    w.write_all(GRAM_MAGIC)?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&[k.family().tag()])?;
    w.write_all(&(hp.len() as u32).to_le_bytes())?;
    write_f64s(&mut w, hp)?;
    let m = k.matrix();
    write_f64s(&mut w, (0..n).flat_map(|i| (0..n).map(move |j| m[(i, j)])))?;
    w.flush()?;
    Ok(())
}

/// Header fields and entries of a gram container.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFile {
    pub tag: u8,
    pub hyperparameters: Vec<f64>,
    pub matrix: DMatrix<f64>,
}

pub fn read_gram(path: &Path) -> Result<GramFile> {
    let mut r = BufReader::new(fs::File::open(path)?);
    if &read_exact::<_, 8>(&mut r)? != GRAM_MAGIC {
        return Err(Error::InvalidArgument(format!("{} is not a gram file", path.display())));
    }
    let n = u64::from_le_bytes(read_exact(&mut r)?) as usize;
    let tag = read_exact::<_, 1>(&mut r)?[0];
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let hyperparameters = read_f64s(&mut r, count)?;
    let entries = read_f64s(&mut r, n * n)?;
    if r.fill_buf()?.is_empty() {
        Ok(GramFile { tag, hyperparameters, matrix: DMatrix::from_row_slice(n, n, &entries) })
    } else {
        Err(Error::InvalidArgument("trailing bytes after gram entries".into()))
    }
}

/// JSON description written next to a gram file.
pub fn gram_sidecar(k: &GramKernel<f64>) -> Value {
    json!({ "n": k.dim(), "family": k.family(), "tag": k.family().tag(), "layout": "row-major f64 little-endian" })
}

/// Sequence of matrices: magic, count (u32), then per matrix rows and
/// columns (u64) and column-major entries.
fn write_matrices(path: &Path, mats: &[&DMatrix<f64>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(mats.len() as u32).to_le_bytes())?;
    for m in mats {
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        write_f64s(&mut w, m.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrices(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let mut r = BufReader::new(fs::File::open(path)?);
    if &read_exact::<_, 8>(&mut r)? != MATRIX_MAGIC {
        return Err(Error::InvalidArgument(format!("{} is not a matrix payload", path.display())));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    (0..count)
        .map(|_| {
            let rows = u64::from_le_bytes(read_exact(&mut r)?) as usize;
            let cols = u64::from_le_bytes(read_exact(&mut r)?) as usize;
            Ok(DMatrix::from_column_slice(rows, cols, &read_f64s(&mut r, rows * cols)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SvgpHeader {
    inducing: Vec<usize>,
    kernel_hyperparameters: Vec<f64>,
    likelihood: Value,
    seed: u64,
    transforms: BTreeMap<String, String>,
}

/// JSON header at `path` plus a binary payload at `path.bin` holding the
/// variational means and covariance factors.
pub fn save_svgp_checkpoint(path: &Path, state: &SvgpState<f64>, seed: u64) -> Result<()> {
    let likelihood = match &state.likelihood {
        Likelihood::Gaussian(g) => json!({ "type": "gaussian", "noise_variance": g.noise_variance }),
        Likelihood::Categorical(c) => json!({
            "type": "categorical",
            "num_classes": c.num_classes,
            "mc_samples": c.mc_samples,
            "prediction_samples": c.prediction_samples,
            "seed": c.seed,
        }),
    };
    let transforms = BTreeMap::from([
        ("cov_factor_diagonal".to_string(), "softplus".to_string()),
        ("kernel_hyperparameters".to_string(), "softplus".to_string()),
        ("noise_variance".to_string(), "softplus".to_string()),
    ]);
    let header = SvgpHeader {
        inducing: state.inducing.clone(),
        kernel_hyperparameters: state.kernel_hyperparameters.clone(),
        likelihood,
        seed,
        transforms,
    };
    fs::write(path, serde_json::to_string_pretty(&header)? + "\n")?;
    let mut mats = vec![&state.means];
    mats.extend(state.cov_factors.iter());
    write_matrices(&payload_path(path), &mats)
}

fn payload_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".bin");
    p.into()
}

pub fn load_svgp_checkpoint(path: &Path) -> Result<(SvgpState<f64>, u64)> {
    let header: SvgpHeader = serde_json::from_str(&read_text(path)?)?;
    let lik = &header.likelihood;
    let field = |k: &str| lik.get(k).ok_or_else(|| Error::InvalidArgument(format!("checkpoint likelihood lacks `{k}`")));
    let likelihood = match lik.get("type").and_then(Value::as_str) {
        Some("gaussian") => Likelihood::gaussian(serde_json::from_value(field("noise_variance")?.clone())?),
        Some("categorical") => {
            let mut c = crate::gp::CategoricalLikelihood::new(
                serde_json::from_value(field("num_classes")?.clone())?,
                serde_json::from_value(field("seed")?.clone())?,
            );
            c.mc_samples = serde_json::from_value(field("mc_samples")?.clone())?;
            c.prediction_samples = serde_json::from_value(field("prediction_samples")?.clone())?;
            Likelihood::Categorical(c)
        }
        other => return Err(Error::InvalidArgument(format!("unknown likelihood type {other:?}"))),
    };
    let mut mats = read_matrices(&payload_path(path))?.into_iter();
    let means = mats.next().ok_or_else(|| Error::InvalidArgument("checkpoint payload is empty".into()))?;
    let cov_factors: Vec<_> = mats.collect();
    if cov_factors.len() != means.ncols() {
        return Err(Error::DimensionMismatch { what: "covariance factors", expected: means.ncols(), found: cov_factors.len() });
    }
    let state = SvgpState {
        inducing: header.inducing,
        means,
        cov_factors,
        kernel_hyperparameters: header.kernel_hyperparameters,
        likelihood,
    };
    Ok((state, header.seed))
}

/// JSON metadata at `path`, `U` and `W` in the binary payload at `path.bin`.
pub fn save_factors(path: &Path, fp: &FactorPair<f64>, metadata: Value) -> Result<()> {
    let header = json!({
        "latent_dim": fp.latent_dim(),
        "noise_variance": fp.noise_variance,
        "rows": fp.u.nrows(),
        "cols": fp.w.nrows(),
        "metadata": metadata,
    });
    fs::write(path, serde_json::to_string_pretty(&header)? + "\n")?;
    write_matrices(&payload_path(path), &[&fp.u, &fp.w])
}

pub fn load_factors(path: &Path) -> Result<(FactorPair<f64>, Value)> {
    let header: Value = serde_json::from_str(&read_text(path)?)?;
    let noise_variance = header
        .get("noise_variance")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::InvalidArgument("factor header lacks noise_variance".into()))?;
    let mats = read_matrices(&payload_path(path))?;
    let [u, w]: [DMatrix<f64>; 2] =
        mats.try_into().map_err(|_| Error::InvalidArgument("factor payload must hold exactly U and W".into()))?;
    Ok((FactorPair { u, w, noise_variance }, header.get("metadata").cloned().unwrap_or(Value::Null)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the canonical (sorted-key) JSON of `config`.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(config)?)?;
    Ok(sha256_hex(canonical.as_bytes()))
}

/// Writes `{metrics, conventions, seeds, config_hash, config}` with sorted
/// keys; equal inputs give byte-identical files.
pub fn save_results<C: Serialize>(
    path: &Path,
    metrics: &Value,
    conventions: &Value,
    seeds: &[u64],
    config: &C,
) -> Result<()> {
    let doc = json!({
        "metrics": metrics,
        "conventions": conventions,
        "seeds": seeds,
        "config_hash": config_hash(config)?,
        "config": serde_json::to_value(config)?,
    });
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

pub fn load_results(path: &Path) -> Result<Value> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}
