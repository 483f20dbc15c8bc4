use std::path::Path;
use std::process::{Command, Output};

fn tearnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tearnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let o = tearnet(args);
    assert!(
        o.status.success(),
        "tearnet {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth, pretrain, finetune, eval, codes and count under `root`.
fn pipeline(root: &Path) {
    let data = root.join("data");
    ok(&[
        "synth", "--preset", "kimo3-mini", "--seed", "4", "--train", "6", "--test", "8", "--points", "96", "--out",
        p(&data),
    ]);
    let manifest = data.join("playground/manifest.json");
    let common = ["--seed", "4", "--preset", "tiny", "--manifest", p(&manifest)];
    let pre = root.join("pre");
    ok(&[&["train", "--epochs", "2", "--out", p(&pre)], &common[..]].concat());
    let tn = root.join("tn");
    let ck = pre.join("last.json");
    ok(&[&["train", "--epochs", "1", "--pretrained", p(&ck), "--out", p(&tn)], &common[..]].concat());
    let last = tn.join("last.json");
    ok(&[
        &["eval", "--checkpoint", p(&ck), "--checkpoint", p(&last), "--emd-points", "32", "--out", p(&root.join("eval"))],
        &common[..],
    ]
    .concat());
    ok(&[&["codes", "--checkpoint", p(&last), "--out", p(&root.join("codes"))], &common[..]].concat());
    ok(&[
        "count", "--seed", "4", "--codes", p(&root.join("codes/codes.csv")), "--folds", "2", "--svm-epochs", "10",
        "--out", p(&root.join("count")),
    ]);
}

#[test]
fn pipeline_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in ["eval/metrics.csv", "eval/scores.csv", "codes/codes.csv", "count/results.csv", "tn/last.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let metrics = std::fs::read_to_string(a.path().join("eval/metrics.csv")).unwrap();
    assert!(metrics.contains("dataset,variant,CD,EMD,seed"));
    assert!(metrics.contains(",TearingNet,"));
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("count/run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "count");
    assert_eq!(run["seed"], 4);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tearnet(&["train", "--no-such-flag"]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    let o = tearnet(&["train", "--seed", "1", "--manifest", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    let o = tearnet(&["train", "--seed", "1", "--variant", "Nope", "--manifest", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = = 1\n").unwrap();
    let o = tearnet(&["synth", "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn config_files_feed_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "seed = 2\npreset = \"pairs\"\ntrain = 3\npoints = 64\n").unwrap();
    ok(&["synth", "--config", p(&cfg), "--out", p(dir.path())]);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("playground/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["train"], 3);
    assert_eq!(m["seed"], 2);
}

#[test]
fn gradcheck_passes_and_fails_on_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gradcheck", "--seed", "1", "--seeds", "2", "--variant", "TearingNet", "--out", p(dir.path())]);
    let csv = std::fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let o = tearnet(&["gradcheck", "--seed", "1", "--seeds", "1", "--variant", "FoldingNet", "--tol", "1e-15"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn reconstruct_exports_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--preset", "pairs", "--seed", "3", "--train", "2", "--points", "64", "--out", p(&data)]);
    let manifest = data.join("playground/manifest.json");
    let common = ["--seed", "3", "--preset", "tiny", "--manifest", p(&manifest)];
    let pre = dir.path().join("pre");
    ok(&[&["train", "--epochs", "0", "--out", p(&pre)], &common[..]].concat());
    let tn = dir.path().join("tn");
    ok(&[&["train", "--epochs", "0", "--pretrained", p(&pre.join("last.json")), "--out", p(&tn)], &common[..]].concat());
    let out = dir.path().join("rec");
    ok(&[&["reconstruct", "--checkpoint", p(&tn.join("last.json")), "--scenes", "0,1", "--out", p(&out)], &common[..]]
        .concat());
    let scene = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.path().is_dir())
        .expect("a scene directory")
        .path();
    for f in ["input.ply", "output.ply", "x1.ply", "x2.ply", "x3.ply", "u0.csv", "u1.csv", "torn_graph.csv", "mesh.obj"] {
        assert!(scene.join(f).is_file(), "missing {f}");
    }
    ok(&[&["resample", "--checkpoint", p(&tn.join("last.json")), "--count", "100", "--out", p(&out)], &common[..]]
        .concat());
}
