use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tabperturb"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn tabperturb")
}

fn write_train(dir: &Path) -> String {
    let path = dir.join("train.csv");
    let mut s = String::from("x,c,y\n");
    for i in 0..10 {
        s.push_str(&format!("{},{},{}\n", i as f64 * 0.5, ["a", "b", "c"][i % 3], i % 2));
    }
    fs::write(&path, s).unwrap();
    path.to_str().unwrap().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn fit_writes_the_four_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_train(dir.path());
    let cfg = write(dir.path(), "cfg.json", r#"{"labels_column": "y", "assigncat": {"DPnb": "x"}}"#);
    let out = dir.path().join("out");
    let o = run(&["fit", &train, "--config", &cfg, "--test", &train, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["train.out.csv", "test.out.csv", "basis.json", "seed_report.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let head = fs::read_to_string(out.join("train.out.csv")).unwrap();
    assert!(head.starts_with("x_DPn3_DPnb,"), "{head}");
    assert!(head.lines().next().unwrap().ends_with(",y"));
    assert_eq!(head.lines().count(), 11);
}

#[test]
fn unknown_assigncat_column_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_train(dir.path());
    let cfg = write(dir.path(), "cfg.json", r#"{"assigncat": {"DPnb": "nosuchcolumn"}}"#);
    let out = dir.path().join("out");
    let o = run(&["fit", &train, "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nosuchcolumn"), "{}", stderr(&o));
}

#[test]
fn unreadable_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = dir.path().join("out");
    let o = run(&["fit", missing.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_train(dir.path());
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"labels_column": "y", "assigncat": {"DPnb": "x", "DPod": "c"},
            "assignparam": {"global_assignparam": {"flip_prob": 0.5}},
            "sampling_dict": {"seeding_type": "primary_seeds"}}"#,
    );
    let seeds = write(dir.path(), "seeds.txt", "11\n22\n33\n");
    let mut outputs = Vec::new();
    for run_id in 0..2 {
        let out = dir.path().join(format!("out{run_id}"));
        let o = run(&[
            "fit",
            &train,
            "--config",
            &cfg,
            "--entropy-seeds",
            &seeds,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let csv = fs::read(out.join("train.out.csv")).unwrap();
        let basis = fs::read(out.join("basis.json")).unwrap();
        outputs.push((csv, basis));
    }
    assert_eq!(outputs[0], outputs[1]);

    // same for a later transform on the saved basis
    let basis = dir.path().join("out0/basis.json");
    let mut transformed = Vec::new();
    for _ in 0..2 {
        let o = run(&[
            "transform",
            &train,
            "--basis",
            basis.to_str().unwrap(),
            "--traindata",
            "train",
            "--entropy-seeds",
            &seeds,
            "--seeding-type",
            "primary_seeds",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        transformed.push(o.stdout);
    }
    assert_eq!(transformed[0], transformed[1]);
    assert!(!transformed[0].is_empty());
}

#[test]
fn transform_with_missing_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_train(dir.path());
    let out = dir.path().join("out");
    let o = run(&["fit", &train, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let partial = write(dir.path(), "partial.csv", "x,y\n1,0\n2,1\n");
    let basis = out.join("basis.json");
    let o = run(&["transform", &partial, "--basis", basis.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing columns: c"), "{}", stderr(&o));
}

#[test]
fn seed_report_rescales_bulk_budget() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_train(dir.path());
    let out = dir.path().join("out");
    let cfg = write(dir.path(), "cfg.json", r#"{"assigncat": {"DPnb": "x"}}"#);
    let o = run(&["fit", &train, "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    // pin the basis report to a known budget
    let basis_path = out.join("basis.json");
    let mut basis: serde_json::Value = serde_json::from_str(&fs::read_to_string(&basis_path).unwrap()).unwrap();
    basis["seed_report"]["bulk_seeds_total_train"] = 300.into();
    basis["seed_report"]["rowcount_basis_train"] = 100.into();
    fs::write(&basis_path, serde_json::to_string_pretty(&basis).unwrap()).unwrap();

    let o = run(&["seed-report", "--basis", basis_path.to_str().unwrap(), "--rows-train", "500"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["bulk_seeds_train"], 1500);
    assert!(report.get("bulk_seeds_test").is_none());
}

#[test]
fn augment_count_two_triples_rows() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_train(dir.path());
    let cfg = write(dir.path(), "cfg.json", r#"{"labels_column": "y", "assigncat": {"DPnb": "x"}}"#);
    let out = dir.path().join("aug.csv");
    let o = run(&["augment", &train, "--config", &cfg, "--count", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 31);

    let bad = run(&["augment", &train, "--config", &cfg, "--count", "two", "--out", out.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_emits_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curves.csv");
    let o = run(&[
        "sweep",
        "--grid",
        "0,0.3",
        "--scenarios",
        "test",
        "--reps",
        "2",
        "--rows",
        "200",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scenario,value,mean,stderr,n");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("test,0.000000,"));

    let bad = run(&["sweep", "--axis", "nope", "--out", out.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}
