//! Reading and writing datasets, cluster specs, fitted models, ground truth,
//! and evaluation reports.
//!
//! Matrices go to CSV with a header row of column names and a leading column
//! of row names. Structured records use TOML. Graphs use DOT with the effect
//! as edge label. Reals are written in shortest round-trip form, so every file
//! reads back bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::eval::{CvCell, CvReport};
use crate::lina::{AdaptiveWeights, FitReport, StructureModel};
use crate::mdlina::{AlternationEntry, HardAssignment, MdStructureModel, TransformMatrix};
use crate::measurement::MeasurementModel;
use crate::synth::{GenConfig, GroundTruth};
use crate::triad::ClusterSpec;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CLUSTERS_FILE: &str = "clusters.toml";
pub const MEASUREMENT_FILE: &str = "measurement.toml";
pub const EFFECTS_FILE: &str = "effects.csv";
pub const EFFECTS_RAW_FILE: &str = "effects_unpruned.csv";
pub const WEIGHTS_FILE: &str = "adaptive_weights.csv";
pub const GRAPH_FILE: &str = "graph.dot";
pub const STRUCTURE_REPORT_FILE: &str = "structure_report.toml";
pub const B_TILDE_FILE: &str = "b_tilde.csv";
pub const B_TILDE_RAW_FILE: &str = "b_tilde_unpruned.csv";
pub const B_TILDE_JOINT_FILE: &str = "b_tilde_joint.csv";
pub const WEIGHTS_H_FILE: &str = "adaptive_weights_h.csv";
pub const TRANSFORM_FILE: &str = "transform.toml";
pub const MD_REPORT_FILE: &str = "md_report.toml";
pub const TRUTH_FILE: &str = "truth.toml";

/// Formats a real so that parsing it returns the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, format!("not a number: {s:?}")))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::parse(path, e))?;
    write_text(path, &text)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e.message()))
}

fn csv_line(cells: impl IntoIterator<Item = String>) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let cells: Vec<String> = cells.into_iter().collect();
    w.write_record(&cells).expect("writing to memory");
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is utf-8")
}

fn read_records(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    r.records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

/// One domain: header of variable names, one sample per row.
pub fn read_domain_csv(path: &Path, domain_id: usize) -> Result<DomainDataset> {
    let records = read_records(path)?;
    let Some((header, rows)) = records.split_first() else {
        return Err(Error::parse(path, "empty file"));
    };
    let p = header.len();
    let mut data = DMatrix::zeros(p, rows.len());
    for (t, row) in rows.iter().enumerate() {
        if row.len() != p {
            return Err(Error::parse(path, format!("row {} has {} fields, header has {p}", t + 2, row.len())));
        }
        for (i, cell) in row.iter().enumerate() {
            data[(i, t)] = parse_f64(cell, path)?;
        }
    }
    let names = header.iter().map(|s| s.trim().to_string()).collect();
    DomainDataset::new(data, names, domain_id)
}

pub fn write_domain_csv(path: &Path, d: &DomainDataset) -> Result<()> {
    let mut out = csv_line(d.variable_names().iter().cloned());
    for t in 0..d.n_samples() {
        out.push_str(&csv_line(d.data().column(t).iter().map(|v| fmt_f64(*v))));
    }
    write_text(path, &out)
}

/// Domain files listed in order, relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub domains: Vec<PathBuf>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        read_toml(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_toml(path, self)
    }

    /// Loads every listed domain; ids follow the listing order.
    pub fn load(&self, base: &Path) -> Result<MultiDomainDataset> {
        if self.domains.is_empty() {
            return Err(Error::InvalidInput("manifest lists no domains".into()));
        }
        let domains = self
            .domains
            .iter()
            .enumerate()
            .map(|(m, f)| read_domain_csv(&base.join(f), m + 1))
            .collect::<Result<Vec<_>>>()?;
        MultiDomainDataset::new(domains)
    }
}

pub fn read_manifest(path: &Path) -> Result<MultiDomainDataset> {
    let base = path.parent().unwrap_or(Path::new(""));
    Manifest::read(path)?.load(base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorEntry {
    name: String,
    #[serde(default = "first_domain")]
    domain: usize,
    variables: Vec<String>,
}

fn first_domain() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterFile {
    factor: Vec<FactorEntry>,
}

/// Cluster specs for each domain, resolving variable names against
/// `variable_names[m]`. A factor without `domain` belongs to domain 1.
pub fn read_clusters(path: &Path, variable_names: &[Vec<String>]) -> Result<Vec<ClusterSpec>> {
    let file: ClusterFile = read_toml(path)?;
    let m = variable_names.len();
    let mut members: Vec<Vec<Vec<usize>>> = vec![Vec::new(); m];
    let mut names: Vec<Vec<String>> = vec![Vec::new(); m];
    for f in &file.factor {
        if f.domain == 0 || f.domain > m {
            return Err(Error::parse(path, format!("factor {} names domain {} of {m}", f.name, f.domain)));
        }
        let vars = &variable_names[f.domain - 1];
        let idx = f
            .variables
            .iter()
            .map(|v| {
                vars.iter()
                    .position(|n| n == v)
                    .ok_or_else(|| Error::parse(path, format!("unknown variable {v:?} in domain {}", f.domain)))
            })
            .collect::<Result<Vec<_>>>()?;
        members[f.domain - 1].push(idx);
        names[f.domain - 1].push(f.name.clone());
    }
    members
        .into_iter()
        .zip(names)
        .zip(variable_names)
        .enumerate()
        .map(|(d, ((c, n), vars))| {
            if c.is_empty() {
                return Err(Error::parse(path, format!("domain {} has no factors", d + 1)));
            }
            ClusterSpec::with_names(c, n, vars.len())
        })
        .collect()
}

pub fn write_clusters(path: &Path, specs: &[ClusterSpec], variable_names: &[Vec<String>]) -> Result<()> {
    if specs.len() != variable_names.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} cluster specs for {} domains",
            specs.len(),
            variable_names.len()
        )));
    }
    let mut factor = Vec::new();
    for (d, (spec, vars)) in specs.iter().zip(variable_names).enumerate() {
        for (c, name) in spec.clusters().iter().zip(spec.names()) {
            factor.push(FactorEntry {
                name: name.clone(),
                domain: d + 1,
                variables: c.iter().map(|&i| vars[i].clone()).collect(),
            });
        }
    }
    write_toml(path, &ClusterFile { factor })
}

/// A matrix with row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn write_matrix_csv(path: &Path, row_names: &[String], col_names: &[String], m: &DMatrix<f64>) -> Result<()> {
    if m.shape() != (row_names.len(), col_names.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix with {} row and {} column names",
            m.nrows(),
            m.ncols(),
            row_names.len(),
            col_names.len()
        )));
    }
    let mut out = csv_line(std::iter::once(String::new()).chain(col_names.iter().cloned()));
    for (i, r) in row_names.iter().enumerate() {
        out.push_str(&csv_line(
            std::iter::once(r.clone()).chain(m.row(i).iter().map(|v| fmt_f64(*v))),
        ));
    }
    write_text(path, &out)
}

pub fn read_matrix_csv(path: &Path) -> Result<LabeledMatrix> {
    let records = read_records(path)?;
    let Some((header, rows)) = records.split_first() else {
        return Err(Error::parse(path, "empty file"));
    };
    let col_names: Vec<String> = header.iter().skip(1).cloned().collect();
    let mut values = DMatrix::zeros(rows.len(), col_names.len());
    let mut row_names = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != col_names.len() + 1 {
            return Err(Error::parse(path, format!("row {} has {} fields", i + 2, row.len())));
        }
        row_names.push(row[0].clone());
        for (j, cell) in row[1..].iter().enumerate() {
            values[(i, j)] = parse_f64(cell, path)?;
        }
    }
    Ok(LabeledMatrix {
        row_names,
        col_names,
        values,
    })
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Directed graph with an edge `j -> i` labelled `b[(i, j)]` for each
/// nonzero entry.
pub fn write_dot(path: &Path, b: &DMatrix<f64>, names: &[String]) -> Result<()> {
    if b.shape() != (names.len(), names.len()) {
        return Err(Error::DimensionMismatch(format!("{}x{} effects for {} names", b.nrows(), b.ncols(), names.len())));
    }
    let mut out = String::from("digraph factors {\n");
    for n in names {
        out.push_str(&format!("  {};\n", dot_quote(n)));
    }
    for j in 0..b.ncols() {
        for i in 0..b.nrows() {
            if b[(i, j)] != 0.0 {
                out.push_str(&format!(
                    "  {} -> {} [label=\"{}\"];\n",
                    dot_quote(&names[j]),
                    dot_quote(&names[i]),
                    fmt_f64(b[(i, j)])
                ));
            }
        }
    }
    out.push_str("}\n");
    write_text(path, &out)
}

/// Quoted strings of one DOT statement, in order.
fn dot_strings(line: &str, path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '"' {
            continue;
        }
        let mut s = String::new();
        loop {
            match chars.next() {
                Some('\\') => s.extend(chars.next()),
                Some('"') => break,
                Some(c) => s.push(c),
                None => return Err(Error::parse(path, format!("unterminated string in {line:?}"))),
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// Reads a graph written by [`write_dot`] back into its effect matrix.
pub fn read_dot(path: &Path) -> Result<(DMatrix<f64>, Vec<String>)> {
    let text = read_text(path)?;
    let mut names: Vec<String> = Vec::new();
    let mut edges = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with("digraph") || line == "}" {
            continue;
        }
        let s = dot_strings(line, path)?;
        match (line.contains("->"), s.as_slice()) {
            (false, [n]) => names.push(n.clone()),
            (true, [from, to, label]) => edges.push((from.clone(), to.clone(), parse_f64(label, path)?)),
            _ => return Err(Error::parse(path, format!("unexpected statement {line:?}"))),
        }
    }
    let index = |n: &str| {
        names
            .iter()
            .position(|m| m == n)
            .ok_or_else(|| Error::parse(path, format!("edge uses undeclared node {n:?}")))
    };
    let q = names.len();
    let mut b = DMatrix::zeros(q, q);
    for (from, to, w) in edges {
        b[(index(&to)?, index(&from)?)] = w;
    }
    Ok((b, names))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadingEntry {
    variable: String,
    factor: String,
    value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementFile {
    variables: Vec<String>,
    factors: Vec<String>,
    error_variances: Vec<f64>,
    factor_correlations: Vec<Vec<f64>>,
    heywood_cases: Vec<usize>,
    loading: Vec<LoadingEntry>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, path: &Path) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::parse(path, format!("matrix rows must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Loadings as `(variable, factor, value)` triplets over each cluster,
/// error variances, factor correlations, and Heywood cases.
pub fn write_measurement(path: &Path, model: &MeasurementModel, variable_names: &[String]) -> Result<()> {
    if variable_names.len() != model.p() {
        return Err(Error::DimensionMismatch(format!(
            "{} variable names for {} variables",
            variable_names.len(),
            model.p()
        )));
    }
    let clusters = model.clusters();
    let mut loading = Vec::new();
    for (f, (c, name)) in clusters.clusters().iter().zip(clusters.names()).enumerate() {
        for &i in c {
            loading.push(LoadingEntry {
                variable: variable_names[i].clone(),
                factor: name.clone(),
                value: model.loadings()[(i, f)],
            });
        }
    }
    write_toml(
        path,
        &MeasurementFile {
            variables: variable_names.to_vec(),
            factors: clusters.names().to_vec(),
            error_variances: model.error_variances().iter().copied().collect(),
            factor_correlations: rows_of(model.factor_correlations()),
            heywood_cases: model.heywood_cases().to_vec(),
            loading,
        },
    )
}

/// Returns the model and its variable names.
pub fn read_measurement(path: &Path) -> Result<(MeasurementModel, Vec<String>)> {
    let file: MeasurementFile = read_toml(path)?;
    let (p, q) = (file.variables.len(), file.factors.len());
    let mut loadings = DMatrix::zeros(p, q);
    let mut members = vec![Vec::new(); q];
    for l in &file.loading {
        let i = file
            .variables
            .iter()
            .position(|v| *v == l.variable)
            .ok_or_else(|| Error::parse(path, format!("unknown variable {:?}", l.variable)))?;
        let f = file
            .factors
            .iter()
            .position(|v| *v == l.factor)
            .ok_or_else(|| Error::parse(path, format!("unknown factor {:?}", l.factor)))?;
        loadings[(i, f)] = l.value;
        members[f].push(i);
    }
    let clusters = ClusterSpec::with_names(members, file.factors.clone(), p)?;
    let model = MeasurementModel::new(
        loadings,
        DVector::from_vec(file.error_variances),
        from_rows(&file.factor_correlations, q, path)?,
        clusters,
    )?
    .with_heywood_cases(file.heywood_cases);
    Ok((model, file.variables))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureReportFile {
    factor_names: Vec<String>,
    report: FitReport,
}

/// Writes the pruned and unpruned effects, adaptive weights, graph, and fit
/// report into `dir`.
pub fn write_structure(dir: &Path, model: &StructureModel) -> Result<()> {
    let names = &model.factor_names;
    write_matrix_csv(&dir.join(EFFECTS_FILE), names, names, &model.pruned_b)?;
    write_matrix_csv(&dir.join(EFFECTS_RAW_FILE), names, names, &model.b)?;
    write_matrix_csv(&dir.join(WEIGHTS_FILE), names, names, &model.weights.w)?;
    write_dot(&dir.join(GRAPH_FILE), &model.pruned_b, names)?;
    write_toml(
        &dir.join(STRUCTURE_REPORT_FILE),
        &StructureReportFile {
            factor_names: names.clone(),
            report: model.report.clone(),
        },
    )
}

fn square_matrix(path: &Path, names: &[String]) -> Result<DMatrix<f64>> {
    let m = read_matrix_csv(path)?;
    if m.row_names != names || m.col_names != names {
        return Err(Error::parse(path, "factor names differ from the report"));
    }
    Ok(m.values)
}

pub fn read_structure(dir: &Path) -> Result<StructureModel> {
    let r: StructureReportFile = read_toml(&dir.join(STRUCTURE_REPORT_FILE))?;
    let names = &r.factor_names;
    Ok(StructureModel {
        pruned_b: square_matrix(&dir.join(EFFECTS_FILE), names)?,
        b: square_matrix(&dir.join(EFFECTS_RAW_FILE), names)?,
        weights: AdaptiveWeights {
            w: square_matrix(&dir.join(WEIGHTS_FILE), names)?,
        },
        factor_names: r.factor_names,
        report: r.report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignmentEntry {
    factor: String,
    interest: String,
    weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformFile {
    augmented_names: Vec<String>,
    interest_names: Vec<String>,
    /// Rows follow `augmented_names`, columns `interest_names`.
    h: Vec<Vec<f64>>,
    assignment: Vec<AssignmentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdReportFile {
    alternation_converged: bool,
    report: FitReport,
    alternation: Vec<AlternationEntry>,
}

/// Writes `B̃` (pruned, unpruned, and from the alternation), both weight
/// matrices, `H` with its hard assignment, the shared graph, and the report.
pub fn write_md_structure(dir: &Path, model: &MdStructureModel) -> Result<()> {
    let (aug, interest) = (&model.augmented_names, &model.interest_names);
    write_matrix_csv(&dir.join(B_TILDE_FILE), interest, interest, &model.pruned_b_tilde)?;
    write_matrix_csv(&dir.join(B_TILDE_RAW_FILE), interest, interest, &model.b_tilde)?;
    write_matrix_csv(&dir.join(B_TILDE_JOINT_FILE), interest, interest, &model.b_tilde_joint)?;
    write_matrix_csv(&dir.join(WEIGHTS_FILE), interest, interest, &model.weights_b.w)?;
    write_matrix_csv(&dir.join(WEIGHTS_H_FILE), aug, interest, &model.weights_h.w)?;
    write_dot(&dir.join(GRAPH_FILE), &model.pruned_b_tilde, interest)?;
    let a = &model.assignment;
    let assignment = a
        .row_to_interest
        .iter()
        .zip(&a.weights)
        .zip(aug)
        .map(|((&c, &w), name)| AssignmentEntry {
            factor: name.clone(),
            interest: interest[c].clone(),
            weight: w,
        })
        .collect();
    write_toml(
        &dir.join(TRANSFORM_FILE),
        &TransformFile {
            augmented_names: aug.clone(),
            interest_names: interest.clone(),
            h: rows_of(model.h.matrix()),
            assignment,
        },
    )?;
    write_toml(
        &dir.join(MD_REPORT_FILE),
        &MdReportFile {
            alternation_converged: model.alternation_converged,
            report: model.report.clone(),
            alternation: model.alternation.clone(),
        },
    )
}

pub fn read_md_structure(dir: &Path) -> Result<MdStructureModel> {
    let tpath = dir.join(TRANSFORM_FILE);
    let t: TransformFile = read_toml(&tpath)?;
    let r: MdReportFile = read_toml(&dir.join(MD_REPORT_FILE))?;
    let interest = &t.interest_names;
    let h = TransformMatrix::new(from_rows(&t.h, interest.len(), &tpath)?)?;
    if t.assignment.len() != t.augmented_names.len() {
        return Err(Error::parse(&tpath, "assignment must list every augmented factor"));
    }
    let mut rows = Vec::with_capacity(t.assignment.len());
    for (e, name) in t.assignment.iter().zip(&t.augmented_names) {
        if e.factor != *name {
            return Err(Error::parse(&tpath, format!("assignment out of order at {:?}", e.factor)));
        }
        rows.push(
            interest
                .iter()
                .position(|n| *n == e.interest)
                .ok_or_else(|| Error::parse(&tpath, format!("unknown interest factor {:?}", e.interest)))?,
        );
    }
    let assignment = HardAssignment::new(rows, t.assignment.iter().map(|e| e.weight).collect(), interest.len())?;
    let wh = read_matrix_csv(&dir.join(WEIGHTS_H_FILE))?;
    if wh.row_names != t.augmented_names || wh.col_names != *interest {
        return Err(Error::parse(dir.join(WEIGHTS_H_FILE), "factor names differ from the transform"));
    }
    Ok(MdStructureModel {
        pruned_b_tilde: square_matrix(&dir.join(B_TILDE_FILE), interest)?,
        b_tilde: square_matrix(&dir.join(B_TILDE_RAW_FILE), interest)?,
        b_tilde_joint: square_matrix(&dir.join(B_TILDE_JOINT_FILE), interest)?,
        weights_b: AdaptiveWeights {
            w: square_matrix(&dir.join(WEIGHTS_FILE), interest)?,
        },
        weights_h: AdaptiveWeights { w: wh.values },
        h,
        assignment,
        interest_names: t.interest_names,
        augmented_names: t.augmented_names,
        report: r.report,
        alternation: r.alternation,
        alternation_converged: r.alternation_converged,
    })
}

/// Generating parameters of one domain as read back from a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthBundle {
    /// Effects among unit-variance factors.
    pub b_true: DMatrix<f64>,
    pub b_raw: DMatrix<f64>,
    pub g_true: DMatrix<f64>,
    pub factor_names: Vec<String>,
    pub variable_names: Vec<String>,
}

/// Contents of the bundle's `truth.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthInfo {
    pub domains: usize,
    pub shared_graph: bool,
    pub config: GenConfig,
}

fn truth_path(dir: &Path, what: &str, m: usize) -> PathBuf {
    dir.join(format!("{what}_{m}.csv"))
}

/// Per domain `m`: `b_true_m.csv`, `b_raw_m.csv`, `loadings_m.csv`; plus the
/// clusters of all domains and the generating config.
pub fn write_ground_truth(
    dir: &Path,
    truths: &[GroundTruth],
    variable_names: &[Vec<String>],
    cfg: &GenConfig,
    shared_graph: bool,
) -> Result<()> {
    if truths.len() != variable_names.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} domains of truth, {} name lists",
            truths.len(),
            variable_names.len()
        )));
    }
    for (m, (t, vars)) in truths.iter().zip(variable_names).enumerate() {
        let f = t.clusters.names();
        write_matrix_csv(&truth_path(dir, "b_true", m + 1), f, f, &t.b_true)?;
        write_matrix_csv(&truth_path(dir, "b_raw", m + 1), f, f, &t.b_raw)?;
        write_matrix_csv(&truth_path(dir, "loadings", m + 1), vars, f, &t.g_true)?;
    }
    let specs: Vec<ClusterSpec> = truths.iter().map(|t| t.clusters.clone()).collect();
    write_clusters(&dir.join(CLUSTERS_FILE), &specs, variable_names)?;
    write_toml(
        &dir.join(TRUTH_FILE),
        &TruthInfo {
            domains: truths.len(),
            shared_graph,
            config: cfg.clone(),
        },
    )
}

/// Ground truth per domain with its generating config.
pub fn read_ground_truth(dir: &Path) -> Result<(Vec<TruthBundle>, GenConfig)> {
    let t: TruthInfo = read_toml(&dir.join(TRUTH_FILE))?;
    let mut out = Vec::with_capacity(t.domains);
    for m in 1..=t.domains {
        let b = read_matrix_csv(&truth_path(dir, "b_true", m))?;
        let raw = read_matrix_csv(&truth_path(dir, "b_raw", m))?;
        let g = read_matrix_csv(&truth_path(dir, "loadings", m))?;
        if raw.row_names != b.row_names || g.col_names != b.col_names {
            return Err(Error::parse(dir, format!("domain {m}: factor names disagree across files")));
        }
        out.push(TruthBundle {
            b_true: b.values,
            b_raw: raw.values,
            g_true: g.values,
            factor_names: b.col_names,
            variable_names: g.row_names,
        });
    }
    Ok((out, t.config))
}

/// Grid cells as CSV: `lambda1,eps,mean_validation_negloglik,error`; failed
/// cells leave the likelihood empty.
pub fn write_cv_grid(path: &Path, report: &CvReport) -> Result<()> {
    let mut out = csv_line(["lambda1", "eps", "mean_validation_negloglik", "error"].map(String::from));
    for c in &report.cells {
        out.push_str(&csv_line([
            fmt_f64(c.lambda1),
            fmt_f64(c.eps),
            c.mean_validation_negloglik.map(fmt_f64).unwrap_or_default(),
            c.error.clone().unwrap_or_default(),
        ]));
    }
    write_text(path, &out)
}

pub fn read_cv_grid(path: &Path) -> Result<Vec<CvCell>> {
    let records = read_records(path)?;
    records
        .iter()
        .skip(1)
        .map(|r| {
            if r.len() != 4 {
                return Err(Error::parse(path, format!("expected 4 fields, got {}", r.len())));
            }
            Ok(CvCell {
                lambda1: parse_f64(&r[0], path)?,
                eps: parse_f64(&r[1], path)?,
                mean_validation_negloglik: if r[2].is_empty() { None } else { Some(parse_f64(&r[2], path)?) },
                error: if r[3].is_empty() { None } else { Some(r[3].clone()) },
            })
        })
        .collect()
}

/// Per-variable VIF table with the multicollinearity flag.
pub fn write_vif(path: &Path, names: &[String], vif: &[f64]) -> Result<()> {
    if names.len() != vif.len() {
        return Err(Error::DimensionMismatch(format!("{} names for {} VIFs", names.len(), vif.len())));
    }
    let mut out = csv_line(["variable", "vif", "flagged"].map(String::from));
    for (n, v) in names.iter().zip(vif) {
        out.push_str(&csv_line([n.clone(), fmt_f64(*v), (*v >= crate::eval::VIF_FLAG).to_string()]));
    }
    write_text(path, &out)
}

pub fn read_vif(path: &Path) -> Result<Vec<(String, f64)>> {
    read_records(path)?
        .iter()
        .skip(1)
        .map(|r| match r.as_slice() {
            [n, v, _] => Ok((n.clone(), parse_f64(v, path)?)),
            _ => Err(Error::parse(path, "expected 3 fields")),
        })
        .collect()
}

/// Plain CSV table with a header row.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv_line(header.iter().cloned());
    for row in rows {
        out.push_str(&csv_line(row.iter().cloned()));
    }
    write_text(path, &out)
}

pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut records = read_records(path)?;
    if records.is_empty() {
        return Err(Error::parse(path, "empty file"));
    }
    let header = records.remove(0);
    Ok((header, records))
}

/// Summary of one `fit` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    /// `single` or `multi`.
    pub mode: String,
    pub domains: usize,
    pub observed: usize,
    pub factors: usize,
    /// Shared factors of interest (multi-domain only).
    pub interest_factors: Option<usize>,
    pub converged: bool,
    /// Converged without line-search failures or broken cycles.
    pub clean: bool,
    pub h: f64,
    pub rho: f64,
    pub outer_iterations: usize,
    pub alternation_rounds: Option<usize>,
    pub alternation_converged: Option<bool>,
    pub heywood_cases: Vec<usize>,
    pub hyperparams: crate::params::Hyperparams,
}

/// Selected cell of a cross-validation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvBest {
    pub folds: usize,
    pub lambda1: f64,
    pub eps: f64,
    pub mean_validation_negloglik: f64,
}
