use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rakeflow"))
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn close(v: &Value, expected: f64, tol: f64) {
    let x = v.as_f64().unwrap_or_else(|| panic!("{v} is not a number"));
    assert!((x - expected).abs() <= tol, "{x} vs {expected}");
}

#[test]
fn budget_spend_all() {
    let v = json(&run(&["budget", "--B", "1000", "--C", "10", "--c0", "1", "--strategy", "spend_all"]));
    assert_eq!(v["allocation"]["n"], 27);
    assert_eq!(v["allocation"]["n0"], 730);
    close(&v["allocation"]["cost"], 1000.0, 1e-9);
}

#[test]
fn budget_rejects_bad_costs() {
    let out = run(&["budget", "--B", "1000", "--C", "10", "--c0", "20"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["budget", "--B", "1000", "--C", "10", "--c0", "1", "--regime", "vc:-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn appendix_a_report_and_strict_exit() {
    let v = json(&run(&["appendix-a"]));
    close(&v["plain_mean"], 0.0548, 1e-12);
    close(&v["stabilized_mean"], 0.21193, 1e-3);
    let out = run(&["appendix-a", "--strict"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rake_writes_weights_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().display().to_string();
    let v = json(&run(&[
        "--out-dir",
        &out_dir,
        "rake",
        "--sample",
        &data("appendix.csv"),
        "--margins",
        &data("appendix.toml"),
        "--value",
        "X",
    ]));
    assert_eq!(v["converged"], true);
    close(&v["weighted_mean"], 0.2121147687335, 1e-9);
    for m in v["margins"].as_array().unwrap() {
        for (a, t) in m["achieved"].as_array().unwrap().iter().zip(m["target"].as_array().unwrap()) {
            close(a, t.as_f64().unwrap(), 1e-9);
        }
    }
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rake_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 10);

    let mut rdr = csv::Reader::from_path(dir.path().join("weights.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["row", "value", "cell", "weight"]);
    let mut total = 0.0;
    let mut mean = 0.0;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let w: f64 = rec[3].parse().unwrap();
        total += w;
        mean += w * rec[1].parse::<f64>().unwrap();
        rows += 1;
    }
    assert_eq!(rows, 10);
    assert!((total - 1.0).abs() < 1e-9);
    assert!((mean - 0.2121147687335).abs() < 1e-9);
}

#[test]
fn one_cycle_matches_two_steps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.csv").display().to_string();
    let v = json(&run(&[
        "--out-dir",
        &dir.path().display().to_string(),
        "rake",
        "--sample",
        &data("appendix.csv"),
        "--margins",
        &data("appendix.toml"),
        "--value",
        "X",
        "--cycles",
        "1",
        "--out",
        &out,
    ]));
    assert_eq!(v["stage"], 2);
    assert_eq!(v["variant"], "raked(2)");
    assert!(std::path::Path::new(&out).exists());
}

#[test]
fn zero_cell_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let sample = dir.path().join("s.csv");
    std::fs::write(&sample, "X,A,B\n1.0,1,1\n2.0,2,1\n0.5,1,2\n").unwrap();
    let out = run(&[
        "--out-dir",
        &dir.path().display().to_string(),
        "rake",
        "--sample",
        &sample.display().to_string(),
        "--margins",
        &data("appendix.toml"),
        "--value",
        "X",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_sample_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let sample = dir.path().join("s.csv");
    std::fs::write(&sample, "X,A\n1.0,1\n").unwrap();
    let out = run(&[
        "rake",
        "--sample",
        &sample.display().to_string(),
        "--margins",
        &data("appendix.toml"),
        "--value",
        "X",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn variance_spec_closed_forms() {
    let v = json(&run(&["variance", "--spec", "0.5,0.4,0.3", "--f", "1,0,2,-1", "--stages", "2"]));
    let traj = v["trajectory"].as_array().unwrap();
    assert_eq!(traj.len(), 3);
    close(&traj[1], v["closed_form"]["sigma1"].as_f64().unwrap(), 1e-12);
    close(&traj[2], v["closed_form"]["sigma2"].as_f64().unwrap(), 1e-12);
    close(&v["stabilized"]["variance"], v["closed_form"]["sigma_inf"].as_f64().unwrap(), 1e-9);

    let out = run(&["variance", "--spec", "0.5,0.4", "--f", "1,0,2,-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn variance_from_cells_is_nonincreasing_at_first_step() {
    let v = json(&run(&["variance", "--cells", &data("twoway.toml"), "--order", "A,B"]));
    let traj = v["functions"][0]["trajectory"].as_array().unwrap();
    assert!(traj[1].as_f64().unwrap() <= traj[0].as_f64().unwrap());
}

#[test]
fn ztest_and_chisq_report_both_variants() {
    let z = json(&run(&[
        "ztest",
        "--sample",
        &data("appendix.csv"),
        "--margins",
        &data("appendix.toml"),
        "--value",
        "X",
        "--p0",
        "0.225",
    ]));
    assert_eq!(z["plain"]["variant"], "plain");
    assert!(z["sigma"].as_f64().unwrap() < z["sigma0"].as_f64().unwrap());
    let c = json(&run(&[
        "chisq",
        "--sample",
        &data("appendix.csv"),
        "--margins",
        &data("appendix.toml"),
        "--value",
        "X",
        "--test",
        "B",
        "--p0",
        "0.55,0.45",
        "--dof-convention",
        "paper",
    ]));
    assert_eq!(c["plain"]["dof"], 2);
    close(&c["raked"]["statistic"], 0.0, 1e-9);
}

#[test]
fn mc_power_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        json(&run(&[
            "--out-dir",
            &d.path().display().to_string(),
            "--seed",
            "9",
            "mc-power",
            "--config",
            &data("twoway.toml"),
        ]));
    }
    let ca = std::fs::read_to_string(a.path().join("mc_power.csv")).unwrap();
    let cb = std::fs::read_to_string(b.path().join("mc_power.csv")).unwrap();
    assert_eq!(ca, cb);
    assert!(ca.starts_with("n,statistic,variant,rate,std_error,rejections,used,excluded"));
    assert!(a.path().join("manifest.json").exists());
}

#[test]
fn simulate_then_rate_fit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display().to_string();
    let v = json(&run(&["--out-dir", &d, "simulate", "--config", &data("twoway.toml")]));
    assert_eq!(v["grid"].as_array().unwrap().len(), 4);
    for f in ["alpha.csv", "deviation.csv", "excluded.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let fit = json(&run(&[
        "rate-fit",
        "--input",
        &dir.path().join("deviation.csv").display().to_string(),
    ]));
    close(&fit["fit"]["slope"], v["rate_fits"]["200"]["fit"]["slope"].as_f64().unwrap(), 1e-12);
}

#[test]
fn aux_draw_and_bounds() {
    let v = json(&run(&[
        "--seed",
        "3",
        "aux",
        "draw",
        "--config",
        &data("twoway.toml"),
        "--partition",
        "B",
        "--size",
        "500",
    ]));
    let sum: f64 = v["margin"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
    let b = json(&run(&[
        "aux",
        "bounds",
        "--config",
        &data("twoway.toml"),
        "--n",
        "200",
        "--sizes",
        "100000",
    ]));
    close(&b["hoeffding"][1]["bound"], 2.0 * 2.0 * (-2.0f64).exp(), 1e-12);
    assert_eq!(b["size_condition"]["pass"], true);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[[partition]]\nname = \"A\"\nblocks = [[\"1\"]]\nbogus = 1\n").unwrap();
    let out = run(&["simulate", "--config", &cfg.display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
}
