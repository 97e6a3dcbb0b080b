use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_synclass");

const GEN: &str = r#"{"dims": [64, 48, 48], "n_supervoxels": 8, "synapses_per_supervoxel": 4}"#;
const TRAIN: &str = r#"{"steps": 6, "checkpoint_every": 3, "log_every": 2, "sampler": {"batch_pairs": 4}}"#;

fn run<S: AsRef<std::ffi::OsStr>>(dir: &Path, args: &[S]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("spawn synclass")
}

fn ok<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(dir: &Path, args: &[S]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pipeline(dir: &Path, threads: &str) {
    fs::write(dir.join("gen.json"), GEN).unwrap();
    fs::write(dir.join("train.json"), TRAIN).unwrap();
    let with = |args: &[&'static str]| -> Vec<String> {
        args.iter().copied().chain(["--threads", threads]).map(String::from).collect()
    };
    ok(dir, &with(&["gen", "--config", "gen.json", "--out", "data"]));
    ok(dir, &with(&["train", "--config", "train.json", "--data", "data", "--out", "run"]));
    ok(dir, &with(&["embed", "--ckpt", "run/final.ckpt", "--data", "data", "--out", "emb.csv"]));
    ok(dir, &with(&["embed", "--ckpt", "run/final.ckpt", "--data", "data", "--out", "z.csv", "--layer", "z"]));
    ok(
        dir,
        &with(&["project", "--emb", "emb.csv", "--out", "coords.csv", "--svg", "plot.svg", "--labels-from", "data/synapses.csv"]),
    );
    ok(dir, &with(&["eval", "--emb", "emb.csv", "--synapses", "data/synapses.csv", "--k", "3", "--out", "report.json"]));
    ok(dir, &with(&["audit", "--emb", "emb.csv", "--synapses", "data/synapses.csv", "--out", "findings.json"]));
    ok(dir, &with(&["select", "--emb", "emb.csv", "--k", "3", "--out", "sel.csv", "--report", "sel.json"]));
}

const ARTIFACTS: &[&str] = &[
    "data/intensity.vol",
    "data/segmentation.vol",
    "data/synapses.csv",
    "data/classes.csv",
    "run/metrics.csv",
    "run/step_000003.ckpt",
    "run/step_000003.state",
    "run/final.ckpt",
    "emb.csv",
    "z.csv",
    "coords.csv",
    "plot.svg",
    "report.json",
    "findings.json",
    "findings.csv",
    "sel.csv",
    "sel.json",
];

#[test]
fn pipeline_outputs_do_not_depend_on_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "4");
    for f in ARTIFACTS {
        let x = fs::read(a.path().join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between thread counts");
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["bogus"][..],
        &["eval", "--emb", "e.csv"],
        &["embed", "--ckpt", "c", "--data", "d", "--out", "o", "--layer", "q"],
        &["--threads", "0", "gen", "--out", "x"],
    ] {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["eval", "--emb", "missing.csv", "--synapses", "s.csv", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    fs::write(dir.path().join("bad.json"), r#"{"n_supervoxels": 4, "typo": 1}"#).unwrap();
    let out = run(dir.path(), &["gen", "--config", "bad.json", "--out", "d"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("typo"), "{err}");
}

#[test]
fn eval_names_first_mismatched_id() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("syn.csv"), "id,x,y,z,supervoxel_id,class_label\n1,0,0,0,1,1\n2,1,0,0,1,1\n3,2,0,0,2,2\n").unwrap();
    fs::write(d.join("emb.csv"), "# kind=penultimate\nid,e0\n1,0.5\n2,0.25\n77,1.0\n").unwrap();
    let out = run(d, &["eval", "--emb", "emb.csv", "--synapses", "syn.csv", "--k", "2", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("77") && err.contains("syn.csv"), "{err}");
    assert!(!d.join("r.json").exists());
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["gen", "train", "audit"] {
        let out = run(dir.path(), &[sub, "--print-config"]);
        assert_eq!(out.status.code(), Some(0));
        let path = dir.path().join(format!("{sub}.json"));
        fs::write(&path, &out.stdout).unwrap();
        let again = run(dir.path(), &[sub, "--print-config", "--config", path.to_str().unwrap()]);
        assert_eq!(again.stdout, out.stdout, "{sub}");
    }
}

#[test]
fn gen_false_merges_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gen.json"), GEN).unwrap();
    ok(dir.path(), &["gen", "--config", "gen.json", "--out", "d", "--false-merges", "2"]);
    let merges: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("d/merges.json")).unwrap()).unwrap();
    assert_eq!(merges.as_array().unwrap().len(), 2);
    let classes = fs::read_to_string(dir.path().join("d/classes.csv")).unwrap();
    assert_eq!(classes.lines().count(), 1 + 8 - 2);
}
