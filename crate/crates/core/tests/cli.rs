use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spinkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinkit"))
        .args(args)
        .env("SPINKIT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str, count: &str, manifest: &Path) -> Output {
    spinkit(&[
        "synth",
        "--seed",
        seed,
        "--count",
        count,
        "--overlap",
        "0.5",
        "--points",
        "1500",
        "--out-dir",
        s(dir),
        "--manifest",
        s(manifest),
    ])
}

#[test]
fn synth_is_replayable() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&d1, &d2] {
        let out = synth(d.path(), "7", "2", &d.path().join("pairs.csv"));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7, "{names:?}");
    for n in names {
        assert_eq!(fs::read(d1.path().join(&n)).unwrap(), fs::read(d2.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(code(&spinkit(&["synth", "--bogus"])), 1);
    assert_eq!(code(&spinkit(&["no-such-command"])), 1);
    assert_eq!(code(&spinkit(&["--help"])), 0);
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("missing.csv");
    let out = spinkit(&["eval", "--manifest", s(&missing), "--checkpoint", "x.ckpt", "--report", "r.json"]);
    assert_eq!(code(&out), 2);
    let bad = d.path().join("bad.xyz");
    fs::write(&bad, "1 2 3\n1.0 2.0\n").unwrap();
    let out = spinkit(&[
        "describe",
        "--cloud",
        s(&bad),
        "--num-anchors",
        "1",
        "--checkpoint",
        s(&missing),
        "--out",
        s(&d.path().join("o.bin")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_is_loaded_and_flags_win() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(&cfg, "[synth]\npoints_per_fragment = 321\noverlap = 0.6\n").unwrap();
    let out = spinkit(&["synth", "--config", s(&cfg), "--overlap", "0.4", "--out-dir", s(d.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("321 + 321 points"), "{text}");

    fs::write(&cfg, "[synth]\npoints_per_fragment = \"many\"\n").unwrap();
    assert_eq!(code(&spinkit(&["synth", "--config", s(&cfg), "--out-dir", s(d.path())])), 2);
}

#[test]
fn check_equivariance_on_untrained_network() {
    let out = spinkit(&["check-equivariance", "--seed", "1", "--patches", "5"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("convolution shift"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn train_describe_match_register_eval() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let manifest = dir.join("train.csv");
    let out = spinkit(&[
        "synth", "--seed", "100", "--count", "4", "--points", "2000", "--out-dir", s(dir), "--manifest", s(&manifest),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let run = dir.join("run");
    let out = spinkit(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&run),
        "--preset",
        "desk",
        "--epochs",
        "3",
        "--anchors",
        "16",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("best.ckpt");
    assert!(ckpt.exists() && run.join("config.toml").exists() && run.join("loss_history.csv").exists());

    // a held-out noise-free pair
    let test_manifest = dir.join("test.csv");
    let out = spinkit(&[
        "synth", "--seed", "900", "--points", "2000", "--prefix", "test", "--out-dir", s(dir), "--manifest", s(&test_manifest),
    ]);
    assert_eq!(code(&out), 0);
    let (a, b, gt) = (dir.join("test_0900_a.bin"), dir.join("test_0900_b.bin"), dir.join("test_0900_gt.txt"));

    let anchors = dir.join("anchors.txt");
    fs::write(&anchors, "# anchor indices\n0\n17\n\n250\n").unwrap();
    let desc_a = dir.join("a.desc");
    let out = spinkit(&[
        "describe", "--cloud", s(&a), "--anchors", s(&anchors), "--checkpoint", s(&ckpt), "--out", s(&desc_a),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("3 descriptors"));
    let desc_b = dir.join("b.desc");
    let out = spinkit(&[
        "describe", "--cloud", s(&b), "--num-anchors", "50", "--checkpoint", s(&ckpt), "--out", s(&desc_b),
    ]);
    assert_eq!(code(&out), 0);
    let matches = dir.join("m.csv");
    let out = spinkit(&["match", "--desc-a", s(&desc_a), "--desc-b", s(&desc_b), "--out", s(&matches)]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(&matches).unwrap().starts_with("a,b,distance"));

    let report = dir.join("reg.json");
    let out = spinkit(&[
        "register",
        "--cloud-a",
        s(&a),
        "--cloud-b",
        s(&b),
        "--checkpoint",
        s(&ckpt),
        "--gt",
        s(&gt),
        "--report",
        s(&report),
        "--synthetic-thresholds",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["success"], serde_json::Value::Bool(true), "{json}");

    let eval = dir.join("eval.json");
    let out = spinkit(&[
        "eval",
        "--manifest",
        s(&test_manifest),
        "--checkpoint",
        s(&ckpt),
        "--report",
        s(&eval),
        "--synthetic-thresholds",
        "--keypoints",
        "300",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(json["pairs"].as_array().unwrap().len(), 1);
    assert!(dir.join("eval.csv").exists());
    let sweep = fs::read_to_string(dir.join("eval_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 12 * 20);
}
