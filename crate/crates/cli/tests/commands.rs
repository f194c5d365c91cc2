use std::path::Path;
use std::process::{Command, Output};

use kgranger_cli::export;
use kgranger_cli::RunReport;

fn kgranger(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgranger"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_then_run_csv_with_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgranger(&["simulate", "--system", "mediator", "--n", "200", "--seed", "4", "--out", "sim"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("sim/data.csv").exists());

    std::fs::write(
        dir.path().join("exp.toml"),
        "method = \"kpcr\"\nm = 1\n[source]\ncsv = \"sim/data.csv\"\ntruth = \"sim/truth.json\"\n",
    )
    .unwrap();
    let out = kgranger(&["run", "exp.toml", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/report.json")).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 1);
    assert!(report.f1.unwrap().mean > 0.6);
    assert!(dir.path().join("res/config.toml").exists());
    assert!(dir.path().join("res/graphs/run_0000.json").exists());
}

#[test]
fn flags_override_the_file_and_land_in_the_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.toml"),
        "method = \"gpsic\"\nseed = 1\n[source.benchmark]\nid = \"mediator\"\nn = 120\n",
    )
    .unwrap();
    let args = ["run", "exp.toml", "--method", "lsngc", "--mc-runs", "3", "--seed", "9", "--lag", "2", "--out", "o"];
    let out = kgranger(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let config = std::fs::read_to_string(dir.path().join("o/config.toml")).unwrap();
    for line in ["method = \"lsngc\"", "mc_runs = 3", "seed = 9", "m = 2"] {
        assert!(config.contains(line), "{config}");
    }
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 3);
    assert_eq!(report.config.mc_runs, 3);
}

#[test]
fn identical_seeds_reproduce_reports() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.toml"),
        "method = \"lsngc\"\nmc_runs = 2\nseed = 5\n[source.benchmark]\nid = \"confounder\"\nn = 150\n",
    )
    .unwrap();
    let graphs = |name: &str| {
        let out = kgranger(&["run", "exp.toml", "--out", name], dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
        let report: RunReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(name).join("report.json")).unwrap()).unwrap();
        report.runs.into_iter().map(|r| r.graph).collect::<Vec<_>>()
    };
    assert_eq!(graphs("a"), graphs("b"));
}

#[test]
fn export_formats() {
    let dir = tempfile::tempdir().unwrap();
    let doc = r#"{"nodes":["a","b","c"],"lagged":[{"src":"a","dst":"b","lag":2}],"contemporaneous":[{"a":"b","b":"c","mark":"conflicted"}]}"#;
    std::fs::write(dir.path().join("g.json"), doc).unwrap();

    let out = kgranger(&["export", "g.json", "--format", "dot"], dir.path());
    assert!(out.status.success());
    let dot = String::from_utf8(out.stdout).unwrap();
    assert!(dot.contains("a -> b [label=\"τ=2\"]"), "{dot}");
    assert!(dot.contains("b -> c [style=dashed, dir=both]"), "{dot}");

    let out = kgranger(&["export", "g.json", "--format", "csv", "--out", "g.csv"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    assert!(csv.contains("a,b,2,lagged"));

    let out = kgranger(&["export", "g.json", "--format", "json", "--out", "g2.json"], dir.path());
    assert!(out.status.success());
    let first = std::fs::read_to_string(dir.path().join("g2.json")).unwrap();
    let out = kgranger(&["export", "g2.json", "--format", "json"], dir.path());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), first);
    assert_eq!(export::to_json(&export::from_json(&first).unwrap()).unwrap(), first);
}

#[test]
fn score_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let truth = r#"{"nodes":["a","b"],"lagged":[{"src":"a","dst":"b","lag":1}],"contemporaneous":[]}"#;
    let est = r#"{"nodes":["a","b"],"lagged":[{"src":"a","dst":"b","lag":3},{"src":"b","dst":"a","lag":1}],"contemporaneous":[]}"#;
    std::fs::write(dir.path().join("t.json"), truth).unwrap();
    std::fs::write(dir.path().join("e.json"), est).unwrap();
    let out = kgranger(&["score", "--estimated", "e.json", "--truth", "t.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["tp"], 1);
    assert_eq!(metrics["fp"], 1);
    assert!((metrics["f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "method = \"kgc\"\n",
        "method = \"kgc\"\n[source]\ncsv = \"x.csv\"\n",
        "method = \"kgc\"\nm = \"auto\"\n[source.benchmark]\nid = \"mediator\"\nn = 100\n",
        "method = \"kgc\"\n[source.benchmark]\nid = \"mediator\"\nn = 100\n[params]\nc_f = 3\n",
        "method = \"kgc\"\n[source.benchmark]\nid = \"no_such_system\"\nn = 100\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let name = format!("c{i}.toml");
        std::fs::write(dir.path().join(&name), text).unwrap();
        let out = kgranger(&["run", &name], dir.path());
        assert_eq!(out.status.code(), Some(1), "case {i}: {}", stderr(&out));
    }
    std::fs::write(dir.path().join("bad.csv"), "a,b\n1,2\n3,oops\n").unwrap();
    std::fs::write(dir.path().join("csv.toml"), "method = \"kgc\"\nm = 1\n[source]\ncsv = \"bad.csv\"\n").unwrap();
    let out = kgranger(&["run", "csv.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("row"), "{}", stderr(&out));
}

#[test]
fn numerical_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b\n");
    for t in 0..60 {
        let v = (t as f64 * 0.7).sin();
        csv.push_str(&format!("{v},{}\n", (t as f64 * 1.3).cos()));
    }
    std::fs::write(dir.path().join("d.csv"), csv).unwrap();
    std::fs::write(
        dir.path().join("e.toml"),
        "method = \"kgc\"\nm = 1\n[source]\ncsv = \"d.csv\"\n[params.kernel]\ntype = \"se\"\nlengthscale = 1e-200\n",
    )
    .unwrap();
    let out = kgranger(&["run", "e.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
