use std::path::Path;
use std::process::{Command, Output};

use mdlina::eval::EvalReport;
use mdlina::io::*;
use mdlina::measurement::MeasurementModel;
use mdlina::optim::acyclicity_h;
use mdlina::triad::ClusterSpec;
use nalgebra::DVector;
use tempfile::tempdir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdlina"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr has the error record");
    serde_json::from_str(last).expect("error record is JSON")
}

#[test]
fn usage_errors_exit_2_with_a_record() {
    let dir = tempdir().unwrap();
    let out = run(&["fit", "--data", "x.csv", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["exit_code"], 2);

    let out = run(&["fit", "--data", "x.csv", "--clusters", "c.toml", "--locate", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["simulate", "--trials", "0", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "usage");
}

#[test]
fn missing_and_malformed_files_exit_3() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = run(&["locate", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["exit_code"], 3);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,oops\n").unwrap();
    let out = run(&["locate", "--data", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_writes_acyclic_truth_and_trial_dirs() {
    let dir = tempdir().unwrap();
    let one = dir.path().join("one");
    ok(&["simulate", "--out", s(&one)]);
    let (truth, cfg) = read_ground_truth(&one.join("truth")).unwrap();
    assert_eq!(cfg.q, 5);
    assert!(acyclicity_h(&truth[0].b_true).unwrap() < 1e-9);
    let data = read_domain_csv(&one.join("domain_1.csv"), 1).unwrap();
    assert_eq!(data.n_vars(), 10);

    let many = dir.path().join("many");
    ok(&["simulate", "--q", "3", "--n", "50", "--trials", "3", "--out", s(&many)]);
    let a = std::fs::read(many.join("trial_001/domain_1.csv")).unwrap();
    let b = std::fs::read(many.join("trial_002/domain_1.csv")).unwrap();
    assert!(many.join("trial_003/manifest.toml").exists());
    assert_ne!(a, b);
}

#[test]
fn shared_domains_have_one_support() {
    let dir = tempdir().unwrap();
    ok(&["simulate", "--q", "4", "--n", "50", "--domains", "2", "--shared", "--seed", "3", "--out", s(dir.path())]);
    let (truth, _) = read_ground_truth(&dir.path().join("truth")).unwrap();
    let support = |m: usize| truth[m].b_raw.map(|v| v != 0.0);
    assert_eq!(support(0), support(1));
    assert_ne!(truth[0].b_raw, truth[1].b_raw);
}

#[test]
fn fit_writes_an_acyclic_model() {
    let dir = tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--q", "3", "--n", "500", "--seed", "7", "--out", s(&sim)]);
    let fit = dir.path().join("fit");
    let clusters = sim.join("truth/clusters.toml");
    ok(&["fit", "--data", s(&sim.join("domain_1.csv")), "--clusters", s(&clusters), "--out", s(&fit)]);
    let model = read_structure(&fit).unwrap();
    assert!(acyclicity_h(&model.pruned_b).unwrap() < 1e-8);
    let report: RunReport = read_toml(&fit.join("run.toml")).unwrap();
    assert!(report.h < 1e-8);
    assert_eq!(report.mode, "single");
    assert!(fit.join(GRAPH_FILE).exists());

    let out = run(&[
        "fit",
        "--data",
        s(&sim.join("domain_1.csv")),
        "--clusters",
        s(&clusters),
        "--q-tilde",
        "2",
        "--out",
        s(&fit),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_md_writes_shared_effects_and_assignment() {
    let dir = tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--q", "2", "--n", "400", "--domains", "2", "--shared", "--seed", "4", "--out", s(&sim)]);
    let fit = dir.path().join("fit");
    ok(&[
        "fit-md",
        "--manifest",
        s(&sim.join("manifest.toml")),
        "--clusters",
        s(&sim.join("truth/clusters.toml")),
        "--out",
        s(&fit),
    ]);
    let model = read_md_structure(&fit).unwrap();
    assert_eq!(model.pruned_b_tilde.shape(), (2, 2));
    assert_eq!(model.h.matrix().shape(), (4, 2));
    assert_eq!(model.assignment.row_to_interest.len(), 4);
    let text = std::fs::read_to_string(fit.join(TRANSFORM_FILE)).unwrap();
    assert!(text.contains("[[assignment]]"));
    let report: RunReport = read_toml(&fit.join("run.toml")).unwrap();
    assert_eq!(report.interest_factors, Some(2));
}

#[test]
fn a_perfect_model_scores_one() {
    let dir = tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--q", "4", "--n", "300", "--seed", "9", "--out", s(&sim)]);
    let fit = dir.path().join("fit");
    ok(&[
        "fit",
        "--data",
        s(&sim.join("domain_1.csv")),
        "--clusters",
        s(&sim.join("truth/clusters.toml")),
        "--out",
        s(&fit),
    ]);
    // swap in the generating parameters
    let (truth, _) = read_ground_truth(&sim.join("truth")).unwrap();
    let t = &truth[0];
    let mut model = read_structure(&fit).unwrap();
    model.b = t.b_true.clone();
    model.pruned_b = t.b_true.clone();
    write_structure(&fit, &model).unwrap();
    let (est, vars) = read_measurement(&fit.join(MEASUREMENT_FILE)).unwrap();
    let perfect = MeasurementModel::uncorrelated(
        t.g_true.clone(),
        DVector::from_element(vars.len(), 0.5),
        ClusterSpec::with_names(est.clusters().clusters().to_vec(), t.factor_names.clone(), vars.len()).unwrap(),
    )
    .unwrap();
    write_measurement(&fit.join(MEASUREMENT_FILE), &perfect, &vars).unwrap();

    let eval = dir.path().join("eval");
    let stdout = ok(&[
        "evaluate",
        "--model",
        s(&fit),
        "--truth",
        s(&sim.join("truth")),
        "--data",
        s(&sim.join("domain_1.csv")),
        "--out",
        s(&eval),
    ]);
    assert!(stdout.starts_with("f1=1 "));
    let report: EvalReport = read_toml(&eval.join("metrics.toml")).unwrap();
    assert_eq!(report.skeleton.f1, 1.0);
    assert_eq!(report.mean_abs_error, 0.0);
    assert_eq!(report.permutation, vec![0, 1, 2, 3]);
    let vif = read_vif(&eval.join("vif.csv")).unwrap();
    assert_eq!(vif.len(), 8);
    assert!(vif.iter().all(|(_, v)| *v >= 1.0));
}

#[test]
fn cv_single_cell_grid_picks_it() {
    let dir = tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--q", "2", "--n", "300", "--seed", "2", "--out", s(&sim)]);
    let data = sim.join("domain_1.csv");
    let clusters = sim.join("truth/clusters.toml");
    let cv = |out: &Path, l: &str, e: &str| {
        ok(&[
            "cv",
            "--data",
            s(&data),
            "--clusters",
            s(&clusters),
            "--folds",
            "3",
            "--grid-lambda1",
            l,
            "--grid-eps",
            e,
            "--out",
            s(out),
        ])
    };
    let one = dir.path().join("one");
    cv(&one, "0.1", "0.2");
    let best: CvBest = read_toml(&one.join("cv_best.toml")).unwrap();
    assert_eq!((best.lambda1, best.eps, best.folds), (0.1, 0.2, 3));

    let grid = dir.path().join("grid");
    cv(&grid, "0.01,0.1", "0.1,0.3,0.5");
    assert_eq!(read_cv_grid(&grid.join("cv_grid.csv")).unwrap().len(), 6);
    let again = dir.path().join("again");
    cv(&again, "0.01,0.1", "0.1,0.3,0.5");
    for f in ["cv_grid.csv", "cv_heatmap.csv", "cv_best.toml"] {
        assert_eq!(std::fs::read(grid.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn help_exits_zero() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["fit-md", "--help"]).status.success());
}
