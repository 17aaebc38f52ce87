use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qrshape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrshape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two_groups.csv")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("valid JSON on stdout")
}

fn write_temp(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn extract_removes_similarity_transforms() {
    let dir = tempfile::tempdir().unwrap();
    // second triangle: first rotated by 90°, scaled by 2 and translated
    let input = write_temp(
        &dir,
        "tri.csv",
        "3,2\nt1,g,0,0,1,0,0.3,0.8\nt2,g,5,5,5,7,3.4,5.6\n",
    );
    let out = qrshape(&["extract", input.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "id,group,r,w1,w2,w3,u1,u2");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!((rows[1][0] / rows[0][0] - 2.0).abs() < 1e-12);
    for j in 1..rows[0].len() {
        assert!((rows[0][j] - rows[1][j]).abs() < 1e-12, "column {j}");
    }
    let w2: f64 = rows[0][1..4].iter().map(|v| v * v).sum();
    assert!((w2 - 1.0).abs() < 1e-12);
}

#[test]
fn extract_writes_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_temp(&dir, "tri.csv", "3,2\nt1,g,0,0,1,0,0.3,0.8\n");
    let output = dir.path().join("shapes.csv");
    let out = qrshape(&[
        "extract",
        input.to_str().unwrap(),
        "--mode",
        "noreflect",
        "-o",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(std::fs::read_to_string(output).unwrap().starts_with("id,group,r,"));
}

#[test]
fn malformed_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_temp(&dir, "bad.csv", "3,2\nt1,g,0,0,1,0,0.3\n");
    let out = qrshape(&["extract", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = qrshape(&["fit", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));

    let out = qrshape(&["fit", fixture().to_str().unwrap(), "--model", "cauchy"]);
    assert_eq!(out.status.code(), Some(2));

    let out = qrshape(&["fit", fixture().to_str().unwrap(), "--group", "zzz"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_reports_json() {
    let out = qrshape(&[
        "fit",
        fixture().to_str().unwrap(),
        "--group",
        "a",
        "--model",
        "kotz2",
        "--restarts",
        "0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "fit");
    let fit = &v["fit"];
    assert_eq!(fit["model"], "kotz2");
    assert_eq!(fit["n_p"], 11);
    assert_eq!(fit["sample_size"], 15);
    assert_eq!(fit["converged"], true);
    let ll = fit["loglik"].as_f64().unwrap();
    let bic = fit["bic_star"].as_f64().unwrap();
    assert_eq!(bic, -2.0 * ll + 11.0 * ((17f64).ln() - 24f64.ln()));
    assert_eq!(fit["mu"].as_array().unwrap().len(), 5);
}

#[test]
fn compare_sorts_by_bic() {
    let out = qrshape(&[
        "compare",
        fixture().to_str().unwrap(),
        "--group",
        "b",
        "--restarts",
        "0",
        "--json",
    ]);
    assert!(out.status.success());
    let v = json(&out);
    let models = v["models"].as_array().unwrap();
    assert_eq!(models.len(), 3);
    assert_eq!(models[0]["delta"], 0.0);
    let bics: Vec<f64> = models.iter().map(|m| m["bic_star"].as_f64().unwrap()).collect();
    assert!(bics.windows(2).all(|w| w[0] <= w[1]));
    assert!(models.iter().all(|m| m["evidence"].is_string()));

    let out = qrshape(&[
        "compare",
        fixture().to_str().unwrap(),
        "--group",
        "b",
        "--restarts",
        "0",
        "--models",
        "gaussian",
    ]);
    let text = stdout(&out);
    assert!(text.starts_with("model"));
    assert_eq!(text.lines().count(), 2);

    let out = qrshape(&[
        "compare",
        fixture().to_str().unwrap(),
        "--group",
        "b",
        "--restarts",
        "0",
        "--models",
        "kotz2,kotz2",
        "--json",
    ]);
    let v = json(&out);
    for m in v["models"].as_array().unwrap() {
        assert_eq!(m["delta"], 0.0);
        assert_eq!(m["evidence"], "weak");
    }
}

#[test]
fn test_meanshape_separates_the_fixture_groups() {
    let out = qrshape(&[
        "test-meanshape",
        fixture().to_str().unwrap(),
        "--restarts",
        "0",
        "--groups",
        "a,b",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["df"], 10);
    assert_eq!(v["null_variance"], "per-group");
    assert!(v["statistic"].as_f64().unwrap() > 0.0);
    assert!(v["p_value"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["alternatives"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_reports_passing_checks() {
    let out = qrshape(&["verify", "--suite", "zonal"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().count() > 10);
    assert!(text.lines().all(|l| l.starts_with("PASS zonal")));
    let out = qrshape(&["verify", "--suite", "invariance", "--json"]);
    assert!(out.status.success());
    assert_eq!(json(&out)["passed"], true);
}

#[test]
fn simulate_is_reproducible() {
    let args = ["simulate", "--count", "3", "--second-count", "2", "--seed", "5", "--model", "kotz3"];
    let a = stdout(&qrshape(&args));
    let b = stdout(&qrshape(&args));
    assert_eq!(a, b);
    let data: Vec<&str> = a.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "6,2");
    assert_eq!(data.len(), 6);
    assert!(data[4].starts_with("b0001,b,"));
    assert_eq!(data[1].split(',').count(), 14);
}
