use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn affordem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affordem"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Relative path -> bytes of every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

const QUICK: &[&str] = &[
    "--set",
    "experiment.em.sgd.iterations=60",
    "--set",
    "experiment.supervised.iterations=60",
];

#[test]
fn synth_gen_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = || {
        let o = affordem(tmp.path(), &["synth-gen", "--seed", "7", "--count", "6", "--out", "bench"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        snapshot(&tmp.path().join("bench"))
    };
    let first = run();
    assert!(first.contains_key(Path::new("manifest.json")) && first.contains_key(Path::new("run.json")));
    assert_eq!(first, run());
}

#[test]
fn weak_training_then_eval_reports_mean_iou() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&affordem(dir, &["synth-gen", "--count", "6", "--out", "bench"])), 0);
    let mut args = vec!["train-weak", "--data", "bench", "--out", "w", "--max-iters", "1"];
    args.extend_from_slice(QUICK);
    let o = affordem(dir, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["em"]["iterations"], 1);
    assert!(dir.join("w/em/iter_01/trace.json").exists());

    let o = affordem(dir, &["eval", "--pred", "w/yhat", "--gt", "bench/labelmaps", "--out", "e"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["mean_iou"].as_f64().is_some_and(|v| (0.0..=1.0).contains(&v)));
    let written = fs::read_dir(dir.join("w/yhat")).unwrap().count();
    assert!(written > 0);
    assert_eq!(report["records"], written);
}

#[test]
fn rerun_from_record_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&affordem(dir, &["synth-gen", "--count", "6", "--out", "bench"])), 0);
    fs::write(
        dir.join("cfg.json"),
        r#"{"data": "bench", "experiment.supervised.iterations": 60, "experiment": {"supervised": {"batch_size": 2}}}"#,
    )
    .unwrap();
    let o = affordem(dir, &["train-supervised", "--config", "cfg.json", "--out", "s1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let record: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("s1/run.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["experiment"]["supervised"]["iterations"], 60);
    assert_eq!(record["config"]["experiment"]["supervised"]["batch_size"], 2);
    fs::remove_file(dir.join("cfg.json")).unwrap();
    let o = affordem(dir, &["rerun", "s1/run.json", "--out", "s2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(dir.join("s1/report.json")).unwrap(), fs::read(dir.join("s2/report.json")).unwrap());
    assert_eq!(fs::read(dir.join("s1/scorer.txt")).unwrap(), fs::read(dir.join("s2/scorer.txt")).unwrap());
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&affordem(dir, &["no-such-command"])), 2);
    assert_eq!(code(&affordem(dir, &["train-weak", "--only-gc", "--only-gm"])), 2);
    assert_eq!(code(&affordem(dir, &["train-weak", "--data", "x", "--set", "experiment.em.bogus=1"])), 2);
    assert_eq!(code(&affordem(dir, &["train-weak", "--data", "missing"])), 3);
    assert_eq!(code(&affordem(dir, &["synth-gen", "--count", "6", "--out", "bench"])), 0);
    // an all-ones kernel matrix with no ridge term is singular
    let o = affordem(
        dir,
        &[
            "fit-pose",
            "--data",
            "bench",
            "--set",
            "experiment.pose.folds=2",
            "--set",
            r#"experiment.pose.grid={"dictionary_sizes":[4],"gammas":[1e6],"lambdas":[0]}"#,
        ],
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));
}

#[test]
fn pose_regressors_feed_keypoint_transfer() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&affordem(dir, &["synth-gen", "--count", "16", "--out", "bench"])), 0);
    let actors = ["--set", "experiment.keypoint_actors=[0,1]", "--set", "experiment.pose.folds=2"];
    let mut args = vec!["fit-pose", "--data", "bench", "--out", "fp"];
    args.extend_from_slice(&actors);
    let o = affordem(dir, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("fp/regressors/cv.json").exists());
    let mut args = vec!["transfer-keypoints", "--data", "bench", "--regressors", "fp/regressors", "--out", "tk"];
    args.extend_from_slice(&actors);
    let o = affordem(dir, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["transferred"], 4);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("tk/dataset/manifest.json")).unwrap()).unwrap();
    let records = manifest["records"].as_array().unwrap();
    assert_eq!(records.len(), 16);
    assert!(records.iter().filter(|r| r["actor"] == 2).all(|r| !r["keypoints"].as_array().unwrap().is_empty()));
}
