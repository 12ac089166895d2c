use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn qreset(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_qreset"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unmeasured_flow_is_a_rabi_oscillation() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = qreset(dir.path(), &["flow", "--lambda", "0", "--gamma0", "2", "--t-max", "5"]);
    assert_eq!(code, 0);
    let (header, rows) = read_csv(&dir.path().join("flow.csv"));
    assert_eq!(header, ["t [time]", "theta [rad]", "a_sq [1]"]);
    for r in rows {
        assert!((r[2] - (2.0 * r[0]).cos().powi(2)).abs() < 1e-12);
    }
    let json = read_json(&dir.path().join("flow.json"));
    assert_eq!(json["config"]["gamma0"], 2.0);
    assert_eq!(json["summary"]["lambda"], 0.0);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["survival"],
        vec!["survival", "--gamma", "1", "--lambda", "1"],
        vec!["survival", "--lambda", "-1"],
        vec!["survival", "--lambda", "1", "--grid", "0"],
        vec!["frobnicate"],
        vec!["density", "--lambda", "0.5", "--theta0", "1"],
        vec!["verify", "--only", "12"],
    ] {
        assert_eq!(qreset(dir.path(), &args).0, 2, "{args:?}");
    }
    assert_eq!(qreset(dir.path(), &["--help"]).0, 0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "lambda = 2\nt-max = 3\ngrid = 4\nout = from_file\n").unwrap();
    assert_eq!(qreset(dir.path(), &["survival", "--config", "run.cfg", "--grid", "7"]).0, 0);
    let (_, rows) = read_csv(&dir.path().join("from_file.csv"));
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[6][0], 3.0);
    let json = read_json(&dir.path().join("from_file.json"));
    assert_eq!(json["config"]["strength"]["lambda"], 2.0);
}

#[test]
fn density_output_is_deterministic_and_carries_the_atom() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["density", "--lambda", "0.5", "--t", "2", "--n-traj", "5000", "--seed", "3", "--grid", "64"];
    let mut files = vec![];
    for stem in ["a", "b"] {
        let mut a = args.to_vec();
        a.extend(["--out", stem]);
        assert_eq!(qreset(dir.path(), &a).0, 0);
        files.push((
            std::fs::read(dir.path().join(format!("{stem}.csv"))).unwrap(),
            read_json(&dir.path().join(format!("{stem}.json"))),
        ));
    }
    assert_eq!(files[0].0, files[1].0);
    assert_eq!(files[0].1["summary"], files[1].1["summary"]);
    let s = &files[0].1["summary"];
    for key in ["atom_position", "atom_mass", "t", "lambda", "seed", "mc_atom_mass"] {
        assert!(s.get(key).is_some(), "{key}");
    }
    let (header, rows) = read_csv(&dir.path().join("a.csv"));
    assert_eq!(header[..5], ["theta [rad]", "analytic [1/rad]", "spectral [1/rad]", "mc_estimate [1/rad]", "mc_stderr [1/rad]"]);
    for r in &rows {
        assert!((r[1] - r[2]).abs() < 1e-3);
        // no bar for the atom: the histogram only holds clicked trajectories
        assert!(r[3] < 5.0);
    }
}

#[test]
fn json_format_holds_the_tables() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(qreset(dir.path(), &["counting", "--lambda", "1", "--grid", "5", "--format", "json"]).0, 0);
    assert!(!dir.path().join("counting.csv").exists());
    let json = read_json(&dir.path().join("counting.json"));
    let table = &json["tables"]["counting"];
    assert_eq!(table["columns"][1], "mean_count");
    let last = table["rows"][4].as_array().unwrap();
    let sum: f64 = last[3..].iter().map(|v| v.as_f64().unwrap()).sum();
    assert!(sum > 0.0 && sum <= 1.0);
}

#[test]
fn simulate_writes_histogram_and_mean_count() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--lambda", "1.5", "--t-max", "2", "--t", "1", "--n-traj", "4000", "--bins", "50"];
    assert_eq!(qreset(dir.path(), &args).0, 0);
    let (_, hist) = read_csv(&dir.path().join("simulate.csv"));
    assert_eq!(hist.len(), 50);
    let (_, mean) = read_csv(&dir.path().join("simulate_mean.csv"));
    let last = mean.last().unwrap();
    assert!((last[1] - last[3]).abs() < 4.0 * last[2] + 1e-12);
    let json = read_json(&dir.path().join("simulate.json"));
    let (m, se, exact) = (
        json["summary"]["atom_mass"].as_f64().unwrap(),
        json["summary"]["atom_mass_stderr"].as_f64().unwrap(),
        json["summary"]["atom_mass_exact"].as_f64().unwrap(),
    );
    assert!((m - exact).abs() < 4.0 * se);
}

#[test]
fn resolvent_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("heat.spec"),
        "diffusion = 0.3\njump_rate = 0.7\nreset = uniform\n# comment\nadvection = upwind\n",
    )
    .unwrap();
    let (code, _) = qreset(dir.path(), &["resolvent", "--spec", "heat.spec", "--grid", "256", "--t", "0.5"]);
    assert_eq!(code, 0);
    let json = read_json(&dir.path().join("resolvent.json"));
    assert!((json["summary"]["mass"].as_f64().unwrap() - 1.0).abs() < 1e-5);
    std::fs::write(dir.path().join("bad.spec"), "drift = sin(phi)\n").unwrap();
    assert_eq!(qreset(dir.path(), &["resolvent", "--spec", "bad.spec"]).0, 2);
    std::fs::write(dir.path().join("qubit.spec"), "preset = qubit\n").unwrap();
    assert_eq!(qreset(dir.path(), &["resolvent", "--spec", "qubit.spec"]).0, 2);
    assert_eq!(qreset(dir.path(), &["resolvent", "--spec", "qubit.spec", "--lambda", "1.5", "--grid", "512"]).0, 0);
}

#[test]
fn verify_reports_each_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout) = qreset(dir.path(), &["verify", "--quick", "--only", "2,4,7"]);
    assert_eq!(code, 0, "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3);
    let json = read_json(&dir.path().join("verify.json"));
    assert_eq!(json["summary"]["criteria"].as_array().unwrap().len(), 3);
}
