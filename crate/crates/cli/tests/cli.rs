use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn guidekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guidekit"))
        .args(args)
        .env_remove("GUIDEKIT_ROOT")
        .env_remove("GUIDEKIT_DB")
        .env_remove("GUIDEKIT_OUT")
        .output()
        .expect("spawn guidekit")
}

fn ok(args: &[&str]) -> String {
    let out = guidekit(args);
    assert!(
        out.status.success(),
        "guidekit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy dataset plus database under `dir`.
fn setup(dir: &Path) {
    ok(&[
        "toy-dataset",
        "--out",
        s(&dir.join("data")),
        "--count",
        "3",
        "--width",
        "96",
        "--height",
        "64",
    ]);
    ok(&[
        "build-db",
        "--root",
        s(&dir.join("data")),
        "--out",
        s(&dir.join("seg.db")),
    ]);
}

#[test]
fn retrieve_emits_one_row_per_region() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let labels = dir.path().join("data/labels/toy_0001.png");
    let instances = dir.path().join("data/instances/toy_0001.png");
    let out = ok(&[
        "retrieve",
        "--db",
        s(&dir.path().join("seg.db")),
        "--labels",
        s(&labels),
        "--instances",
        s(&instances),
        "--no-threshold",
    ]);
    let rows: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!rows.is_empty());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["region_index"], i);
        // Test mode over a database holding this image: every region finds itself.
        assert_eq!(r["total"], 0.0);
    }
}

#[test]
fn compose_and_distort_write_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    let (db, labels, instances) = (
        p("seg.db"),
        p("data/labels/toy_0000.png"),
        p("data/instances/toy_0000.png"),
    );
    let common = ["--db", &db, "--labels", &labels, "--instances", &instances];
    let (g, v, t) = (p("g.png"), p("v.png"), p("t.jsonl"));
    let mut args = vec!["compose"];
    args.extend(common);
    args.extend(["--out-rgb", &g, "--out-valid", &v, "--out-trace", &t]);
    ok(&args);
    assert!(d.join("g.png").is_file() && d.join("v.png").is_file());
    assert!(fs::read_to_string(d.join("t.jsonl")).unwrap().lines().count() > 0);

    let (img, out, valid, report) = (p("data/images/toy_0000.png"), p("d.png"), p("dv.png"), p("r.jsonl"));
    let mut args = vec!["distort", "--image", &img];
    args.extend(common);
    args.extend(["--out-rgb", &out, "--out-valid", &valid, "--report", &report]);
    ok(&args);
    assert!(d.join("d.png").is_file());
}

#[test]
fn compose_train_mode_requires_image_id() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let out = guidekit(&[
        "compose",
        "--db",
        s(&d.join("seg.db")),
        "--labels",
        s(&d.join("data/labels/toy_0000.png")),
        "--mode",
        "train",
        "--out-rgb",
        s(&d.join("g.png")),
        "--out-valid",
        s(&d.join("v.png")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("image id"));
}

#[test]
fn run_is_deterministic_and_honours_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let run = |out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_guidekit"))
            .args(["run", "--mode", "train", "--seed", "5", "--out", out])
            .env("GUIDEKIT_ROOT", d.join("data"))
            .env("GUIDEKIT_DB", d.join("seg.db"))
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(s(&d.join("a")));
    run(s(&d.join("b")));
    for name in fs::read_dir(d.join("a/guidance")).unwrap() {
        let name = name.unwrap().file_name();
        assert_eq!(
            fs::read(d.join("a/guidance").join(&name)).unwrap(),
            fs::read(d.join("b/guidance").join(&name)).unwrap()
        );
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["aggregate"]["failures"], 0);
    assert_eq!(m["config"]["seed"], 5);
}

#[test]
fn run_fails_fast_on_missing_db() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["toy-dataset", "--out", s(&d.join("data")), "--count", "1"]);
    let out = guidekit(&[
        "run",
        "--root",
        s(&d.join("data")),
        "--db",
        s(&d.join("nope.db")),
        "--out",
        s(&d.join("o")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn run_reads_config_file_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let cfg = serde_json::json!({
        "dataset_root": d.join("data"),
        "db_path": d.join("seg.db"),
        "output_dir": d.join("from_config"),
        "seed": 11,
        "threshold": null,
    });
    fs::write(d.join("cfg.json"), cfg.to_string()).unwrap();
    ok(&[
        "run",
        "--config",
        s(&d.join("cfg.json")),
        "--out",
        s(&d.join("override")),
    ]);
    assert!(!d.join("from_config").exists());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("override/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 11);
    assert_eq!(m["config"]["threshold"], serde_json::Value::Null);
    // Without a threshold every region of a test-mode run matches.
    assert_eq!(m["aggregate"]["match_rate"], 1.0);
}

#[test]
fn bench_and_verifiers_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("bench.json");
    let out = ok(&["bench", "--synthetic", "300", "--queries", "20", "--json", s(&json)]);
    assert!(out.contains("0 mismatches"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["equal"], true);

    let fx = dir.path().join("fx");
    let out = ok(&["verify-modnorm", "--fixture-dir", s(&fx)]);
    assert!(!out.contains("FAIL"));
    for f in ["input.gkt", "gamma.gkt", "beta.gkt", "output.gkt"] {
        assert!(fs::read(fx.join(f)).unwrap().starts_with(b"GKTENSOR"));
    }
    assert!(!ok(&["verify-all", "--seed", "2"]).contains("FAIL"));
}

#[test]
fn bench_needs_a_database_source() {
    assert!(!guidekit(&["bench"]).status.success());
}
