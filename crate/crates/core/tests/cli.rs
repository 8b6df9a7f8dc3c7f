use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_novelclass");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("NOVELCLASS_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small flower (20 samples per class) plus a fitted prior.
fn fixture(dir: &Path) {
    ok(&["flower", "--out-dir", s(dir), "--samples-per-class", "20", "--seed", "4"]);
    ok(&["fit", "--data", s(&dir.join("train.csv")), "--out", s(&dir.join("prior.json"))]);
}

#[test]
fn flower_writes_csvs_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["flower", "--out-dir", s(dir.path())]);
    let train = fs::read_to_string(dir.path().join("train.csv")).unwrap();
    let test = fs::read_to_string(dir.path().join("test.csv")).unwrap();
    assert_eq!(train.lines().count(), 2001);
    assert_eq!(test.lines().count(), 2301);
    assert_eq!(train.lines().next(), Some("f1,f2,label"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("train.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["tool"], "novelclass");
    assert_eq!(meta["command"], "flower");
    assert_eq!(meta["seed"], 0);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("flower.json")).unwrap()).unwrap();
    assert_eq!(doc["heldout"].as_array().unwrap().len(), 3);
    assert!(doc["metadata"]["version"].is_string());
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let args = |out: &str| {
        vec![
            "run".to_string(),
            "--train".into(),
            s(&d.join("train.csv")).into(),
            "--stream".into(),
            s(&d.join("test.csv")).into(),
            "--prior".into(),
            s(&d.join("prior.json")).into(),
            "--particles".into(),
            "30".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            s(&d.join(out)).into(),
        ]
    };
    let a: Vec<String> = args("a.jsonl");
    let b: Vec<String> = args("b.jsonl");
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    let ja = fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(ja, fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(String::from_utf8(ja).unwrap().lines().count(), 460);
    assert!(d.join("a.jsonl.meta.json").exists());
}

#[test]
fn resume_continues_the_same_stream() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let train = d.join("train.csv");
    let test = d.join("test.csv");
    let prior = d.join("prior.json");
    let common = [
        "--train",
        s(&train),
        "--stream",
        s(&test),
        "--prior",
        s(&prior),
        "--particles",
        "25",
        "--seed",
        "2",
    ];
    let (full_out, p1, ck) = (d.join("full.jsonl"), d.join("p1.jsonl"), d.join("ck.json"));
    let mut full = vec!["run", "--out", s(&full_out)];
    full.extend(common);
    ok(&full);
    let mut first = vec!["run", "--out", s(&p1), "--limit", "150", "--checkpoint", s(&ck)];
    first.extend(common);
    ok(&first);
    ok(&["run", "--resume", s(&d.join("ck.json")), "--stream", s(&test), "--out", s(&d.join("p2.jsonl"))]);
    let joined = fs::read_to_string(d.join("p1.jsonl")).unwrap() + &fs::read_to_string(d.join("p2.jsonl")).unwrap();
    assert_eq!(joined, fs::read_to_string(d.join("full.jsonl")).unwrap());

    // engine flags conflict with a checkpoint
    let out = run(&["run", "--resume", s(&d.join("ck.json")), "--stream", s(&test), "--out", s(&d.join("p3.jsonl")), "--alpha", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_alpha_single_particle_never_reports_novelty() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    ok(&[
        "run",
        "--train",
        s(&d.join("train.csv")),
        "--stream",
        s(&d.join("test.csv")),
        "--prior",
        s(&d.join("prior.json")),
        "--particles",
        "1",
        "--alpha",
        "0",
        "--out",
        s(&d.join("g.jsonl")),
    ]);
    for line in fs::read_to_string(d.join("g.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["p_novel"], 0.0);
        assert!(v["chosen_label"]["labeled"].is_u64(), "{line}");
    }
}

#[test]
fn eval_scores_checkpoint_and_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let test = d.join("test.csv");
    ok(&[
        "run",
        "--train",
        s(&d.join("train.csv")),
        "--stream",
        s(&test),
        "--prior",
        s(&d.join("prior.json")),
        "--particles",
        "20",
        "--out",
        s(&d.join("r.jsonl")),
        "--checkpoint",
        s(&d.join("ck.json")),
    ]);
    ok(&["eval", "--truth", s(&test), "--checkpoint", s(&d.join("ck.json")), "--out", s(&d.join("e1.json"))]);
    let e1: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e1.json")).unwrap()).unwrap();
    let acc = e1["report"]["represented_accuracy"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    ok(&[
        "eval",
        "--train",
        s(&d.join("train.csv")),
        "--test",
        s(&test),
        "--prior",
        s(&d.join("prior.json")),
        "--particles",
        "10",
        "--orderings",
        "2",
        "--out",
        s(&d.join("e2.json")),
        "--table",
        s(&d.join("e2.txt")),
    ]);
    let e2: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e2.json")).unwrap()).unwrap();
    assert_eq!(e2["report"]["orderings"], 2);
    assert_eq!(e2["report"]["per_heldout"].as_array().unwrap().len(), 3);
    let table = fs::read_to_string(d.join("e2.txt")).unwrap();
    assert!(table.contains("avg. # of clusters"));
}

#[test]
fn plotdata_writes_ellipses_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    ok(&[
        "run",
        "--train",
        s(&d.join("train.csv")),
        "--stream",
        s(&d.join("test.csv")),
        "--prior",
        s(&d.join("prior.json")),
        "--particles",
        "10",
        "--out",
        s(&d.join("r.jsonl")),
        "--snapshot-at",
        "100,300",
        "--snapshot-dir",
        s(d),
    ]);
    let plots = d.join("plots");
    ok(&[
        "plotdata",
        "--stream",
        s(&d.join("test.csv")),
        "--checkpoint",
        s(&d.join("snapshot-100.json")),
        s(&d.join("snapshot-300.json")),
        "--decisions",
        s(&d.join("r.jsonl")),
        "--out-dir",
        s(&plots),
    ]);
    for n in [100, 300] {
        assert!(plots.join(format!("ellipses-{n}.csv")).exists());
        let scatter = fs::read_to_string(plots.join(format!("scatter-{n}.csv"))).unwrap();
        assert_eq!(scatter.lines().count(), n + 1);
    }
}

#[test]
fn config_file_and_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("flower.conf"), "# small\nsamples_per_class = 5\nseed = 3\n").unwrap();
    ok(&["flower", "--out-dir", s(&d.join("a")), "--config", s(&d.join("flower.conf"))]);
    assert_eq!(fs::read_to_string(d.join("a/train.csv")).unwrap().lines().count(), 101);
    // flags override the file
    ok(&["flower", "--out-dir", s(&d.join("b")), "--config", s(&d.join("flower.conf")), "--samples-per-class", "6"]);
    assert_eq!(fs::read_to_string(d.join("b/train.csv")).unwrap().lines().count(), 121);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("b/train.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    // environment seed sits below the file
    let out = Command::new(BIN)
        .args(["flower", "--out-dir", s(&d.join("c")), "--samples-per-class", "2"])
        .env("NOVELCLASS_SEED", "17")
        .output()
        .unwrap();
    assert!(out.status.success());
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("c/train.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 17);

    fs::write(d.join("bad.conf"), "particels = 3\n").unwrap();
    let out = run(&["flower", "--out-dir", s(&d.join("x")), "--config", s(&d.join("bad.conf"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.csv"), "").unwrap();
    let out = run(&["fit", "--data", s(&d.join("empty.csv")), "--out", s(&d.join("p.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no samples"));

    fs::write(d.join("bad.csv"), "f1,label\n1.0,1\nabc,1\n").unwrap();
    let out = run(&["fit", "--data", s(&d.join("bad.csv")), "--out", s(&d.join("p.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"));

    let out = run(&["fit", "--data", s(&d.join("missing.csv")), "--out", s(&d.join("p.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["run", "--stream", s(&d.join("bad.csv")), "--out", s(&d.join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    fixture(d);
    let out = run(&[
        "run",
        "--train",
        s(&d.join("train.csv")),
        "--stream",
        s(&d.join("test.csv")),
        "--particles",
        "0",
        "--out",
        s(&d.join("o.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gibbs_with_exact_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("train.csv"), "f1,label\n-0.5,1\n0.1,1\n0.4,1\n-0.2,1\n").unwrap();
    fs::write(d.join("stream.csv"), "f1\n0.3\n3.1\n2.7\n0.0\n").unwrap();
    fs::write(d.join("prior.json"), r#"{"mu0":[0.0],"kappa":0.2,"sigma0":[1.5],"m":4.0}"#).unwrap();
    ok(&[
        "gibbs",
        "--train",
        s(&d.join("train.csv")),
        "--stream",
        s(&d.join("stream.csv")),
        "--prior",
        s(&d.join("prior.json")),
        "--sweeps",
        "3000",
        "--burn-in",
        "300",
        "--exact",
        "--out",
        s(&d.join("g.json")),
    ]);
    let g: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("g.json")).unwrap()).unwrap();
    let exact = g["exact"]["p_unlabeled"].as_array().unwrap();
    let samples = g["summary"]["samples"].as_array().unwrap();
    assert_eq!(exact.len(), 4);
    for (e, s) in exact.iter().zip(samples) {
        let (e, n, se) = (e.as_f64().unwrap(), s["novel"].as_f64().unwrap(), s["novel_se"].as_f64().unwrap());
        assert!((e - n).abs() <= 4.0 * se + 1e-9, "{e} vs {n} ± {se}");
    }
}
