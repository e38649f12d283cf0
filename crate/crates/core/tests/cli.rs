use std::path::Path;
use std::process::{Command, Output};

use branchrange::cli::RunConfig;
use branchrange::dataset::{gt_disparity, scan_corpus, FilenameGrammar, View};
use branchrange::matcher::{write_disparity_file, DisparityFormat};
use branchrange::metrics::MetricReport;
use branchrange::pipeline::{Decision, DecisionTrace};
use branchrange::synth::{write_mock_corpus, MockCorpusSpec};
use branchrange::{CameraRig, DisparityMap};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_branchrange")).args(args).output().unwrap()
}

fn small_corpus(root: &Path) {
    let spec = MockCorpusSpec {
        trees: 2,
        frames: 2,
        views: vec![View::Upward, View::Parallel],
        width: 32,
        height: 24,
        seed: 1,
    };
    write_mock_corpus(root, &spec, &FilenameGrammar::default(), &CameraRig::default()).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn eval_of_ground_truth_is_perfect_and_missing_files_are_partial() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("c");
    small_corpus(&root);
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    let index = scan_corpus(&root, &FilenameGrammar::default()).unwrap();
    for rec in &index.records {
        let gt = gt_disparity(rec, &CameraRig::default()).unwrap();
        write_disparity_file(&gt, &pred.join(format!("{}.pfm", rec.id())), DisparityFormat::Pfm).unwrap();
    }
    let out = dir.path().join("o");
    let o = bin(&["--root", s(&root), "--out", s(&out), "eval", "--pred-dir", s(&pred), "--model", "gt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = MetricReport::load_json(&out.join("metrics.json")).unwrap();
    assert_eq!(report.summary.images, 8);
    assert_eq!(report.summary.epe, 0.0);
    assert_eq!(report.summary.delta1, 100.0);
    assert_eq!(report.aggregation, "mean-over-images");

    std::fs::remove_file(pred.join(format!("{}.pfm", index.records[0].id()))).unwrap();
    let o = bin(&["--root", s(&root), "--out", s(&out), "eval", "--pred-dir", s(&pred)]);
    assert_eq!(o.status.code(), Some(3));
    let report = MetricReport::load_json(&out.join("metrics.json")).unwrap();
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.summary.images, 7);
}

#[test]
fn split_then_match_subset_and_config_replay() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("c");
    small_corpus(&root);
    let out = dir.path().join("o");
    let o = bin(&["--root", s(&root), "--out", s(&out), "--split", "0.5,0.25,0.25", "--seed", "9", "split"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "train 4  val 2  test 2");

    let cfg = RunConfig::load(&out.join("run_config.json")).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.split_ratios, [0.5, 0.25, 0.25]);

    // replaying the saved config reproduces the same split
    let out2 = dir.path().join("o2");
    let o = bin(&["--config", s(&out.join("run_config.json")), "--out", s(&out2), "split"]);
    assert!(o.status.success());
    let a = std::fs::read_to_string(out.join("splits.json")).unwrap();
    let b = std::fs::read_to_string(out2.join("splits.json")).unwrap();
    assert_eq!(a, b);

    let o = bin(&[
        "--root",
        s(&root),
        "--out",
        s(&out),
        "--format",
        "png16",
        "match",
        "--splits",
        s(&out.join("splits.json")),
        "--subset",
        "test",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n = std::fs::read_dir(out.join("pred")).unwrap().count();
    assert_eq!(n, 2);
}

#[test]
fn cost_all_presets_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["--out", s(dir.path()), "cost", "--all-presets"]);
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(dir.path().join("cost.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    let col = |i: usize| rows.iter().map(|r| r[i].to_string()).collect::<Vec<_>>();
    assert_eq!(col(2), ["972", "972", "972", "540", "234"]);
    assert_eq!(col(3), ["18", "18", "18", "7", "5"]);
    assert_eq!(col(4), ["40", "40", "25", "9", ""]);
}

#[test]
fn distance_sequence_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let rig = CameraRig::default();
    let fb = rig.focal_baseline() as f32;
    let mut files = Vec::new();
    for (i, z) in [2.0f32, 1.0, 0.45, 0.45, 0.45].iter().enumerate() {
        let p = dir.path().join(format!("{i}.pfm"));
        write_disparity_file(&DisparityMap::filled(10, 10, fb / z), &p, DisparityFormat::Pfm).unwrap();
        files.push(p);
    }
    let mut args = vec!["--out".to_string(), dir.path().to_string_lossy().into_owned(), "distance".into()];
    for f in &files {
        args.push("--disp".into());
        args.push(f.to_string_lossy().into_owned());
    }
    args.extend(["--roi".into(), "2,2,5,5".into(), "--window".into(), "3".into()]);
    let o = Command::new(env!("CARGO_BIN_EXE_branchrange")).args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace: Vec<DecisionTrace> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("decisions.json")).unwrap()).unwrap();
    let d: Vec<Decision> = trace.iter().map(|t| t.decision).collect();
    assert_eq!(
        d,
        [Decision::Approach, Decision::Approach, Decision::Approach, Decision::Actuate, Decision::Actuate]
    );
}

#[test]
fn failures_exit_nonzero() {
    let o = bin(&["scan"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--root"));
    let o = bin(&["--no-such-flag", "scan"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["--root", "/nonexistent/corpus", "scan"]);
    assert_eq!(o.status.code(), Some(1));
}
