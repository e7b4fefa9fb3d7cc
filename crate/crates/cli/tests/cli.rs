use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hslab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hslab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HSLAB_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const HEADER: &str = r#""schema_version": 1, "name": "t", "seed": 5,
    "window": {"s": 0, "t_list": [0.05, 0.1]},
    "grid": {"radius": 6, "nodes": [257], "dt": 0.001},"#;

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, format!("{{{HEADER}\n{body}}}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn presets_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let o = hslab(&["presets", "list"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["ou-halfline", "heat-halfline", "polynomial-general", "polynomial-xindep"] {
        assert!(text.contains(name), "{text}");
    }
    let o = hslab(&["presets", "show", "heat-halfline"], dir.path());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["name"], "heat-halfline");
}

#[test]
fn empty_audit_list_reports_hypotheses_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""operator": {"family": "ornstein_uhlenbeck"}"#);
    let o = hslab(&["run", &cfg, "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(report["hypotheses"]["checks"].as_array().unwrap().len() > 3);
    assert!(report["audits"].as_array().unwrap().is_empty());
    assert!(report["measures"].as_array().unwrap().is_empty());
    assert_eq!(report["config_sha256"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("out/summary.txt").exists());
}

#[test]
fn catalog_constraint_violation_is_a_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#""operator": {"family": "section5", "variant": "general", "params": {"k": 3, "m": 2}}"#,
    );
    let o = hslab(&["run", &cfg], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("k <= m"), "{}", stderr(&o));
}

#[test]
fn schema_errors_exit_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""operator": {"family": "heat"}, "audits": [{"kind": "contraction", "data": ["f"], "colour": 1}]"#);
    let o = hslab(&["run", &cfg], dir.path());
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("colour") && e.contains("line"), "{e}");

    let cfg = write_config(dir.path(), r#""operator": {"family": "heat"}, "data": {"f": "x1 +* 2"}"#);
    let o = hslab(&["run", &cfg], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data.f"));

    assert_eq!(code(&hslab(&["run", "no-such-file.json"], dir.path())), 2);
    assert_eq!(code(&hslab(&["bogus"], dir.path())), 2);
}

#[test]
fn refused_audit_sets_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#""operator": {"family": "heat"}, "data": {"f": "exp(-x^2)"},
        "audits": [{"kind": "asymptotics", "bc": "dirichlet", "data": ["f"], "radius": 2}]"#,
    );
    let o = hslab(&["run", &cfg, "--out", "out"], dir.path());
    assert_eq!(code(&o), 3);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["audits"][0]["status"], "refused");
    assert!(report["audits"][0]["message"].as_str().unwrap().contains("dissipativity_r"));
}

#[test]
fn failing_audit_sets_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // f ≡ 1 is not in the Dirichlet class: its gradient blows up at the wall.
    let cfg = write_config(
        dir.path(),
        r#""operator": {"family": "ornstein_uhlenbeck"}, "data": {"one": "1"},
        "audits": [{"kind": "c1c1", "variant": "c_zero", "bc": "dirichlet", "p": 2, "data": ["one"], "probes": [[0.05], [0.1]], "t_list": [0.01, 0.05]}]"#,
    );
    let o = hslab(&["run", &cfg, "--out", "out"], dir.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn reruns_and_plots_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let o = hslab(&["run", "heat-halfline", "--out", "a"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = hslab(&["run", "heat-halfline", "--out", "b", "--threads", "2"], dir.path());
    assert_eq!(code(&o), 0);
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/report.json"), read("b/report.json"));

    assert_eq!(code(&hslab(&["plot", "a"], dir.path())), 0);
    let first = read("a/plots/00_c0c1.decay.csv");
    assert_eq!(code(&hslab(&["plot", "a"], dir.path())), 0);
    assert_eq!(first, read("a/plots/00_c0c1.decay.csv"));
    let decay: Vec<_> = fs::read_dir(dir.path().join("a/plots"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".decay.csv"))
        .collect();
    assert_eq!(decay.len(), 3);

    assert_eq!(code(&hslab(&["plot", "missing"], dir.path())), 2);
}

#[test]
fn one_audit_gives_one_decay_csv_whose_slope_matches_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#""operator": {"family": "ornstein_uhlenbeck"}, "data": {"x": "x"},
        "audits": [{"kind": "asymptotics", "bc": "dirichlet", "data": ["x"], "radius": 2, "t_list": [0.5, 1, 1.5, 2, 2.5, 3]}]"#,
    );
    let o = hslab(&["run", &cfg, "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(code(&hslab(&["plot", "out"], dir.path())), 0);
    let plots: Vec<String> = fs::read_dir(dir.path().join("out/plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".decay.csv"))
        .collect();
    assert_eq!(plots, vec!["00_asymptotics.decay.csv".to_string()]);

    // Refit log(value) ~ t over the in-fit rows.
    let csv = fs::read_to_string(dir.path().join("out/plots").join(&plots[0])).unwrap();
    let (mut ts, mut ys, mut slope_col) = (Vec::new(), Vec::new(), f64::NAN);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        slope_col = f[4].parse().unwrap();
        if f[3] == "1" {
            ts.push(f[1].parse::<f64>().unwrap());
            ys.push(f[2].parse::<f64>().unwrap().ln());
        }
    }
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let reported = report["audits"][0]["report"]["slopes"][0]["slope"].as_f64().unwrap();
    assert!(n >= 3.0);
    assert!((sxy / sxx - reported).abs() < 1e-9, "{} vs {reported}", sxy / sxx);
    assert_eq!(slope_col, reported);
}
