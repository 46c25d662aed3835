use std::path::{Path, PathBuf};

use mdlina::eval::{cross_validate, md_recovery, vif, EvalReport};
use mdlina::io::*;
use mdlina::pipeline::{fit_multi, ClusterSource, StructureFit};
use mdlina::synth::{gen_multidomain, GenConfig};
use mdlina::triad::{locate_clusters, IndependenceTestConfig};
use mdlina::{augment, standardize, Error, Hyperparams, MultiDomainDataset};
use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::statistics::{Data, Max, Min, OrderStatistics};

use crate::{CliError, CvArgs, EvaluateArgs, FitArgs, InputArgs, LocateArgs, SimulateArgs, TestArgs};

pub const DEFAULT_LAMBDA1_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];
pub const DEFAULT_EPS_GRID: [f64; 7] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

pub const RUN_REPORT_FILE: &str = "run.toml";
pub const METRICS_FILE: &str = "metrics.toml";
pub const VIF_FILE: &str = "vif.csv";
pub const CV_GRID_FILE: &str = "cv_grid.csv";
pub const CV_HEATMAP_FILE: &str = "cv_heatmap.csv";
pub const CV_BEST_FILE: &str = "cv_best.toml";
pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRUTH_DIR: &str = "truth";

type Result<T> = std::result::Result<T, CliError>;

fn names(md: &MultiDomainDataset) -> Vec<Vec<String>> {
    md.domains().iter().map(|d| d.variable_names().to_vec()).collect()
}

fn load_input(input: &InputArgs) -> Result<MultiDomainDataset> {
    match (&input.data, &input.manifest) {
        (Some(p), None) => Ok(MultiDomainDataset::new(vec![read_domain_csv(p, 1)?])?),
        (None, Some(m)) => Ok(read_manifest(m)?),
        _ => Err(CliError::Usage("give exactly one of --data and --manifest".into())),
    }
}

fn test_config(t: &TestArgs) -> Result<IndependenceTestConfig> {
    let cfg = IndependenceTestConfig {
        alpha: t.alpha,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn trial_name(t: usize) -> String {
    format!("trial_{:03}", t + 1)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.trials == 0 || a.domains == 0 {
        return Err(CliError::Usage("--trials and --domains must be at least 1".into()));
    }
    let lines: Vec<Result<String>> = (0..a.trials).into_par_iter().map(|t| simulate_one(a, t)).collect();
    for line in lines {
        println!("{}", line?);
    }
    Ok(())
}

fn simulate_one(a: &SimulateArgs, t: usize) -> Result<String> {
    let cfg = GenConfig {
        q: a.q,
        indicators_per_factor: a.indicators,
        n: a.n,
        noise_ratio: a.noise_ratio,
        noise_dist: a.noise.into(),
        edge_density: a.edges.unwrap_or(a.q as f64),
        seed: a.seed + t as u64,
        ..Default::default()
    };
    let (md, truths) = gen_multidomain(a.domains, &cfg, a.shared)?;
    let dir = if a.trials == 1 {
        a.run.out.clone()
    } else {
        a.run.out.join(trial_name(t))
    };
    let mut files = Vec::with_capacity(md.n_domains());
    for d in md.domains() {
        let f = PathBuf::from(format!("domain_{}.csv", d.domain_id()));
        write_domain_csv(&dir.join(&f), d)?;
        files.push(f);
    }
    Manifest { domains: files }.write(&dir.join(MANIFEST_FILE))?;
    write_ground_truth(&dir.join(TRUTH_DIR), &truths, &names(&md), &cfg, a.shared)?;
    Ok(format!(
        "q={} p={} n={} M={} seed={} dir={}",
        cfg.q,
        cfg.p(),
        cfg.n,
        a.domains,
        cfg.seed,
        dir.display()
    ))
}

pub fn locate(a: &LocateArgs) -> Result<()> {
    let md = load_input(&a.input)?;
    let cfg = test_config(&a.test)?;
    let specs = md
        .domains()
        .iter()
        .map(|d| locate_clusters(&standardize(d)?, &cfg))
        .collect::<mdlina::Result<Vec<_>>>()?;
    write_clusters(&a.run.out.join(CLUSTERS_FILE), &specs, &names(&md))?;
    for (m, s) in specs.iter().enumerate() {
        println!("domain {}: {} clusters", m + 1, s.q());
    }
    Ok(())
}

struct FitOutcome {
    summary: String,
    converged: bool,
}

/// Fits `md` and writes the models and run report into `out`.
fn fit_into(
    md: &MultiDomainDataset,
    source: &ClusterSource,
    q_tilde: Option<usize>,
    hp: &Hyperparams,
    out: &Path,
) -> Result<FitOutcome> {
    let fit = fit_multi(md, source, q_tilde, hp)?;
    let var_names = if md.n_domains() == 1 {
        md.domains()[0].variable_names().to_vec()
    } else {
        augment(md)?.row_names()
    };
    write_clusters(&out.join(CLUSTERS_FILE), &fit.clusters, &names(md))?;
    write_measurement(&out.join(MEASUREMENT_FILE), &fit.measurement, &var_names)?;
    let (report, mode, interest, alternation) = match &fit.structure {
        StructureFit::Single(s) => {
            write_structure(out, s)?;
            (&s.report, "single", None, None)
        }
        StructureFit::Multi(m) => {
            write_md_structure(out, m)?;
            (
                &m.report,
                "multi",
                Some(m.interest_names.len()),
                Some((m.alternation.len(), m.alternation_converged)),
            )
        }
    };
    let run = RunReport {
        mode: mode.into(),
        domains: md.n_domains(),
        observed: md.total_p(),
        factors: fit.measurement.q(),
        interest_factors: interest,
        converged: report.converged,
        clean: report.is_clean(),
        h: report.h,
        rho: report.rho,
        outer_iterations: report.outer_iterations,
        alternation_rounds: alternation.map(|a| a.0),
        alternation_converged: alternation.map(|a| a.1),
        heywood_cases: fit.measurement.heywood_cases().to_vec(),
        hyperparams: hp.clone(),
    };
    write_toml(&out.join(RUN_REPORT_FILE), &run)?;
    let flags = if run.clean { "none" } else { "raised" };
    Ok(FitOutcome {
        summary: format!(
            "mode={mode} M={} factors={} h={:e} converged={} flags={flags} out={}",
            run.domains,
            interest.unwrap_or(run.factors),
            run.h,
            run.converged,
            out.display()
        ),
        converged: run.converged,
    })
}

pub fn fit(a: &FitArgs, multi: bool) -> Result<()> {
    let hp = a.hp.resolve()?;
    let md = load_input(&a.input)?;
    if !multi && a.q_tilde.is_some() {
        return Err(CliError::Usage("--q-tilde applies to fit-md".into()));
    }
    let source = match (&a.clusters.clusters, a.clusters.locate) {
        (Some(p), false) => ClusterSource::Given(read_clusters(p, &names(&md))?),
        (None, true) => ClusterSource::Locate(test_config(&a.test)?),
        _ => return Err(CliError::Usage("give exactly one of --clusters and --locate".into())),
    };
    let outcome = fit_into(&md, &source, a.q_tilde, &hp, &a.run.out)?;
    println!("{}", outcome.summary);
    if outcome.converged {
        Ok(())
    } else {
        Err(CliError::Flagged(format!(
            "acyclicity not reached; results written to {}",
            a.run.out.display()
        )))
    }
}

/// Scores the model in `model_dir` against `truth_dir` and writes the
/// metrics, plus a VIF table when data are given.
fn evaluate_model(model_dir: &Path, truth_dir: &Path, data: Option<&MultiDomainDataset>, out: &Path) -> Result<EvalReport> {
    let (truth, _) = read_ground_truth(truth_dir)?;
    let (meas, _) = read_measurement(&model_dir.join(MEASUREMENT_FILE))?;
    let report = if model_dir.join(TRANSFORM_FILE).exists() {
        let model = read_md_structure(model_dir)?;
        let mut blocks = Vec::with_capacity(truth.len());
        let mut start = 0;
        for t in &truth {
            blocks.push((start, t.variable_names.len()));
            start += t.variable_names.len();
        }
        if start != meas.p() {
            return Err(Error::DimensionMismatch(format!(
                "model loadings are {}x{}, truth has {start} observed variables",
                meas.p(),
                meas.q()
            ))
            .into());
        }
        let pairs: Vec<(DMatrix<f64>, DMatrix<f64>)> = truth.iter().map(|t| (t.b_true.clone(), t.g_true.clone())).collect();
        EvalReport::multi(md_recovery(&model, meas.loadings(), &blocks, &pairs, 0.0)?)
    } else {
        if truth.len() != 1 {
            return Err(Error::DimensionMismatch(format!("single-domain model, {} domains of truth", truth.len())).into());
        }
        let s = read_structure(model_dir)?;
        let t = &truth[0];
        if meas.loadings().shape() != t.g_true.shape() {
            return Err(Error::DimensionMismatch(format!(
                "model loadings are {:?}, true loadings are {:?}",
                meas.loadings().shape(),
                t.g_true.shape()
            ))
            .into());
        }
        EvalReport::single(&s.pruned_b, meas.loadings(), &t.b_true, &t.g_true, 0.0)?
    };
    write_toml(&out.join(METRICS_FILE), &report)?;
    if let Some(md) = data {
        let multi = md.n_domains() > 1;
        let (mut vars, mut values) = (Vec::new(), Vec::new());
        for d in md.domains() {
            values.extend(vif(d.data())?);
            vars.extend(d.variable_names().iter().map(|v| {
                if multi {
                    format!("d{}:{v}", d.domain_id())
                } else {
                    v.clone()
                }
            }));
        }
        write_vif(&out.join(VIF_FILE), &vars, &values)?;
    }
    Ok(report)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if let Some(root) = &a.batch {
        return evaluate_batch(a, root);
    }
    let (Some(model), Some(truth)) = (&a.model, &a.truth) else {
        return Err(CliError::Usage("--model needs --truth".into()));
    };
    let data = match (&a.data, &a.manifest) {
        (None, None) => None,
        (d, m) => Some(load_input(&InputArgs {
            data: d.clone(),
            manifest: m.clone(),
        })?),
    };
    let r = evaluate_model(model, truth, data.as_ref(), &a.run.out)?;
    println!(
        "f1={} recall={} precision={} mean_abs_error={}",
        r.skeleton.f1, r.skeleton.recall, r.skeleton.precision, r.mean_abs_error
    );
    Ok(())
}

fn trial_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("trial_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() && root.join(MANIFEST_FILE).exists() {
        dirs.push(root.to_path_buf());
    }
    if dirs.is_empty() {
        return Err(CliError::Usage(format!("no trials under {}", root.display())));
    }
    Ok(dirs)
}

struct TrialResult {
    name: String,
    converged: bool,
    report: Option<EvalReport>,
    error: Option<String>,
}

fn run_trial(a: &EvaluateArgs, hp: &Hyperparams, trial: &Path, out: &Path) -> Result<(bool, EvalReport)> {
    let md = read_manifest(&trial.join(MANIFEST_FILE))?;
    let source = if a.locate {
        ClusterSource::Locate(test_config(&a.test)?)
    } else {
        ClusterSource::Given(read_clusters(&trial.join(TRUTH_DIR).join(CLUSTERS_FILE), &names(&md))?)
    };
    let outcome = fit_into(&md, &source, a.q_tilde, hp, out)?;
    let report = evaluate_model(out, &trial.join(TRUTH_DIR), Some(&md), out)?;
    Ok((outcome.converged, report))
}

fn quartiles(v: &[f64]) -> [f64; 5] {
    let mut d = Data::new(v.to_vec());
    [d.median(), d.lower_quartile(), d.upper_quartile(), d.min(), d.max()]
}

fn evaluate_batch(a: &EvaluateArgs, root: &Path) -> Result<()> {
    let hp = a.hp.resolve()?;
    let trials = trial_dirs(root)?;
    let results: Vec<TrialResult> = trials
        .par_iter()
        .map(|t| {
            let name = t
                .file_name()
                .and_then(|n| n.to_str())
                .filter(|n| n.starts_with("trial_"))
                .unwrap_or("trial_001")
                .to_string();
            match run_trial(a, &hp, t, &a.run.out.join(&name)) {
                Ok((converged, report)) => TrialResult {
                    name,
                    converged,
                    report: Some(report),
                    error: None,
                },
                Err(e) => TrialResult {
                    name,
                    converged: false,
                    report: None,
                    error: Some(match e {
                        CliError::Lib(e) => e.to_string(),
                        CliError::Usage(m) | CliError::Flagged(m) => m,
                    }),
                },
            }
        })
        .collect();

    let metric_names = ["f1", "recall", "precision", "directed_f1", "mean_abs_error", "assignment_accuracy"];
    let values = |r: &EvalReport| {
        [
            Some(r.skeleton.f1),
            Some(r.skeleton.recall),
            Some(r.skeleton.precision),
            Some(r.directed.f1),
            Some(r.mean_abs_error),
            r.assignment_accuracy,
        ]
    };
    let mut header: Vec<String> = vec!["trial".into(), "converged".into()];
    header.extend(metric_names.iter().map(|s| s.to_string()));
    header.push("error".into());
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|t| {
            let mut row = vec![t.name.clone(), t.converged.to_string()];
            let vals = t.report.as_ref().map(values).unwrap_or([None; 6]);
            row.extend(vals.iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
            row.push(t.error.clone().unwrap_or_default());
            row
        })
        .collect();
    write_table(&a.run.out.join(TRIALS_FILE), &header, &rows)?;

    let ok: Vec<&EvalReport> = results.iter().filter_map(|t| t.report.as_ref()).collect();
    let mut summary = Vec::new();
    for (k, name) in metric_names.iter().enumerate() {
        let v: Vec<f64> = ok.iter().filter_map(|r| values(r)[k]).collect();
        if v.is_empty() {
            continue;
        }
        let mut row = vec![name.to_string(), v.len().to_string()];
        row.extend(quartiles(&v).iter().map(|x| fmt_f64(*x)));
        summary.push(row);
    }
    let sheader = ["metric", "trials", "median", "q1", "q3", "min", "max"].map(String::from);
    write_table(&a.run.out.join(SUMMARY_FILE), &sheader, &summary)?;
    let f1: Vec<f64> = ok.iter().map(|r| r.skeleton.f1).collect();
    let median = if f1.is_empty() { f64::NAN } else { quartiles(&f1)[0] };
    println!("trials={} ok={} median_f1={}", results.len(), ok.len(), median);
    let failed = results.len() - ok.len();
    if failed > 0 {
        return Err(CliError::Flagged(format!("{failed} trial(s) failed; see {}", TRIALS_FILE)));
    }
    Ok(())
}

pub fn cv(a: &CvArgs) -> Result<()> {
    let hp = a.hp.resolve()?;
    let md = load_input(&a.input)?;
    if md.n_domains() != 1 {
        return Err(CliError::Usage("cv takes a single domain".into()));
    }
    if a.grid_lambda1.is_empty() || a.grid_eps.is_empty() {
        return Err(CliError::Usage("grids must not be empty".into()));
    }
    let clusters = read_clusters(&a.clusters, &names(&md))?.remove(0);
    let grid: Vec<(f64, f64)> = a
        .grid_lambda1
        .iter()
        .flat_map(|&l| a.grid_eps.iter().map(move |&e| (l, e)))
        .collect();
    let report = cross_validate(&md.domains()[0], &clusters, &grid, a.folds, &hp)?;
    let out = &a.run.out;
    write_cv_grid(&out.join(CV_GRID_FILE), &report)?;
    let ne = a.grid_eps.len();
    let heat = DMatrix::from_fn(a.grid_lambda1.len(), ne, |i, j| {
        report.cells[i * ne + j].mean_validation_negloglik.unwrap_or(f64::NAN)
    });
    let rows: Vec<String> = a.grid_lambda1.iter().map(|v| fmt_f64(*v)).collect();
    let cols: Vec<String> = a.grid_eps.iter().map(|v| fmt_f64(*v)).collect();
    write_matrix_csv(&out.join(CV_HEATMAP_FILE), &rows, &cols, &heat)?;
    let Some(best) = report.best() else {
        return Err(CliError::Flagged("every grid cell failed".into()));
    };
    let best = CvBest {
        folds: report.folds,
        lambda1: best.lambda1,
        eps: best.eps,
        mean_validation_negloglik: best.mean_validation_negloglik.unwrap_or(f64::NAN),
    };
    write_toml(&out.join(CV_BEST_FILE), &best)?;
    println!(
        "cells={} best lambda1={} eps={} negloglik={}",
        report.cells.len(),
        best.lambda1,
        best.eps,
        best.mean_validation_negloglik
    );
    Ok(())
}
