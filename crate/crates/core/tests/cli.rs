use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_hdmargin");

const REAL_DATA_MODEL: &str = r#"{
  "mu": 5.33, "sigma_plus": 2.08, "sigma_minus": 2.08,
  "alpha_plus": 0.695, "alpha_minus": 0.695, "K": 9,
  "lambda_plus": [15.75, 6.98, 5.75, 5.28, 3.33, 2.30, 1.90, 1.76, 1.25],
  "lambda_minus": [15.75, 6.98, 5.75, 5.28, 3.33, 2.30, 1.90, 1.76, 1.25],
  "R": [0.68, 0.11, -0.58, -0.04, -0.19, 0.06, 0.03, 0.03, 0.18]
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(csv_text: &str, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn theory_ranks_methods_on_real_data_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    fs::write(&model, REAL_DATA_MODEL).unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "theory",
        "--model",
        model.to_str().unwrap(),
        "--loss",
        "svm",
        "--loss",
        "plr",
        "--loss",
        "dwd:q=1",
        "--grid",
        "0.01:100:25log",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("theory_summary.json"));
    let star = |i: usize| s["losses"][i]["precision_star"].as_f64().unwrap();
    let (svm, plr, dwd) = (star(0), star(1), star(2));
    assert!(plr > svm && dwd > svm, "{svm} {plr} {dwd}");
    assert!(plr - svm < 0.01 && dwd - svm < 0.01);
    assert_ne!(s["best"], "svm");
    for f in ["theory_svm.csv", "theory_plr.csv", "theory_dwd_q_1.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.starts_with(
            "lambda,precision_plus,precision_minus,balanced,q0_plus,q0_minus,q_plus,q_minus,R,w0,converged,residual"
        ));
        assert_eq!(text.lines().count(), 26);
    }
}

#[test]
fn missing_loss_is_a_usage_error() {
    let o = run(&["theory", "--mu", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["theory", "--mu", "2", "--loss", "hinge"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["theory", "--mu", "2", "--loss", "svm", "--grid", "1:0.1:5log"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn spikeless_model_peaks_at_right_edge() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "theory",
        "--mu",
        "2",
        "--loss",
        "svm",
        "--loss",
        "plr",
        "--grid",
        "0.01:100:15log",
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let s = json(&dir.path().join("theory_summary.json"));
    for l in s["losses"].as_array().unwrap() {
        assert_eq!(l["argmax_at"], "right-edge", "{l}");
    }
    let text = fs::read_to_string(dir.path().join("theory_plr.csv")).unwrap();
    let bal: Vec<f64> = column(&text, "balanced").iter().map(|v| v.parse().unwrap()).collect();
    assert!(bal.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{bal:?}");
}

#[test]
fn simulate_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--mu",
        "2",
        "--p",
        "50",
        "--reps",
        "2",
        "--loss",
        "svm",
        "--grid",
        "0.1:10:3log",
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("simulate_svm.csv")).unwrap();
    assert!(text.starts_with("lambda,theory,mc_mean,mc_se,reps_converged,agree"));
    for se in column(&text, "mc_se") {
        let se: f64 = se.parse().unwrap();
        assert!(se.is_finite());
    }
    let agree = column(&text, "agree");
    assert!(agree.iter().all(|a| a == "true" || a == "false"));
}

#[test]
fn estimate_round_trip_and_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let o = run(&[
        "simulate",
        "--mu",
        "2",
        "--spikes",
        "9",
        "--r",
        "0.5",
        "--alpha",
        "2",
        "--p",
        "200",
        "--reps",
        "2",
        "--loss",
        "svm",
        "--grid",
        "1:10:2log",
        "--save-data",
        data.to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let est = dir.path().join("est");
    let o = run(&[
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "-o",
        est.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&est.join("model.json"));
    assert!((m["mu"].as_f64().unwrap() - 2.0).abs() < 0.3);
    assert_eq!(m["K"], 1);
    let report = json(&est.join("report.json"));
    assert_eq!(report["homogeneous"], true);
    assert!(report["sample_eigs_plus"][0].as_f64().unwrap() > report["threshold_plus"].as_f64().unwrap());

    let single = dir.path().join("single.csv");
    fs::write(&single, "label,f1,f2\n1,0.5,0.2\n1,0.1,0.3\n").unwrap();
    let o = run(&[
        "estimate",
        "--data",
        single.to_str().unwrap(),
        "-o",
        est.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("both classes"));

    let headless = dir.path().join("headless.csv");
    fs::write(&headless, "1,0.5,0.2\n-1,0.1,0.3\n").unwrap();
    let o = run(&[
        "estimate",
        "--data",
        headless.to_str().unwrap(),
        "-o",
        est.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("header"));

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "label,f1,f2\n1,0.5,0.2\n-1,0.1\n").unwrap();
    let o = run(&[
        "estimate",
        "--data",
        ragged.to_str().unwrap(),
        "-o",
        est.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("line: 3"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn compare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let o = run(&[
        "simulate",
        "--mu",
        "2",
        "--spikes",
        "4",
        "--r",
        "0.7",
        "--alpha",
        "1.5",
        "--p",
        "60",
        "--reps",
        "2",
        "--loss",
        "svm",
        "--grid",
        "1:10:2log",
        "--save-data",
        data.to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&[
            "compare",
            "--data",
            data.to_str().unwrap(),
            "--loss",
            "svm",
            "--loss",
            "plr",
            "--grid",
            "0.1:10:4log",
            "--splits",
            "3",
            "--seed",
            "9",
            "-o",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(
            ["compare_svm.csv", "compare_plr.csv", "compare_summary.json"].map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
    let s = json(&dir.path().join("a").join("compare_summary.json"));
    assert_eq!(s["splits"], 3);
    assert!(s["losses"][0]["cv_lambda_star"].as_f64().is_some());
}

#[test]
fn theory_json_format() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "theory",
        "--mu",
        "1",
        "--loss",
        "lum:a=2,c=1",
        "--grid",
        "0.1:10:3lin",
        "--format",
        "json",
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let c = json(&dir.path().join("theory_lum_a_2_c_1.json"));
    assert_eq!(c["points"].as_array().unwrap().len(), 3);
    assert_eq!(c["points"][1]["lambda"].as_f64().unwrap(), 5.05);
}
