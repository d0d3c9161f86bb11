use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use merton_factor::analysis::hjb_residual;
use merton_factor::discretizer::Grid;
use merton_factor::model::{catalog, Model};
use merton_factor::regime_solver::check_wellposed;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_merton-factor"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr summary");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn regime_json(delta: [f64; 2], r: [f64; 2]) -> String {
    format!(
        r#"{{"family":"regime","Q":[[-1,1],[2,-2]],"r":[{},{}],"lambda":[0.3,0.1],
            "sigma":[0.2,0.25],"delta":[{},{}],"R":2}}"#,
        r[0], r[1], delta[0], delta[1]
    )
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn solution_csv_reproduces_logged_residual() {
    let dir = TempDir::new().unwrap();
    let model = catalog::mpr();
    let path = write(dir.path(), "mpr.json", &Model::Diffusion(model.clone()).to_json_string());
    let csv = dir.path().join("sol.csv");
    let out = run(&[
        "solve", "--model", path.to_str().unwrap(), "--domain", "-3,3", "--n", "600", "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let logged = stderr_json(&out)["residual"].as_f64().unwrap();

    let (header, rows) = parse_csv(&std::fs::read_to_string(&csv).unwrap());
    assert_eq!(header.join(","), "y,u,f,xi,pi,eta,psi_eta,du_over_u");
    assert_eq!(rows.len(), 601);
    let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let u: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    assert!(rows.iter().all(|r| r[1] == r[3]));
    let grid = Grid::new(y[0], y[600], 600).unwrap();
    let recomputed =
        hjb_residual(&model, &grid, &u).unwrap().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!((recomputed - logged).abs() <= 1e-12, "{recomputed:e} vs {logged:e}");
}

#[test]
fn regime_csv_reproduces_logged_residual() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "regime.json", &regime_json([0.3, 0.1], [0.02, 0.01]));
    let out = run(&["solve", "--model", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let logged = stderr_json(&out)["residual"].as_f64().unwrap();
    let (_, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    let Model::Regime(m) = Model::from_json_str(&regime_json([0.3, 0.1], [0.02, 0.01])).unwrap()
    else {
        unreachable!()
    };
    let f: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let p = m.exponent();
    let a = merton_factor::regime_solver::assemble_a(&m);
    let af = (0..2).map(|i| (0..2).map(|j| a.get(i, j) * f[j]).sum::<f64>());
    let num = af.zip(&f).map(|(x, fi)| (x - fi.powf(p)).abs()).fold(0.0, f64::max);
    let den = f.iter().map(|fi| fi.powf(p)).fold(0.0, f64::max);
    assert!((num / den - logged).abs() <= 1e-12);
}

#[test]
fn exit_two_exactly_when_ill_posed() {
    let dir = TempDir::new().unwrap();
    let mut seen = [false; 2];
    for (k, (d0, r1)) in [(0.3, 0.01), (0.01, 0.5), (-0.2, 0.01), (0.05, 0.3), (0.0, 0.0)]
        .into_iter()
        .enumerate()
    {
        let text = regime_json([d0, 0.02], [0.02, r1]);
        let Model::Regime(m) = Model::from_json_str(&text).unwrap() else { unreachable!() };
        let expected = check_wellposed(&m).verdict;
        seen[expected as usize] = true;
        let path = write(dir.path(), &format!("m{k}.json"), &text);
        let out = run(&["wellposed", "--model", path.to_str().unwrap()]);
        let report: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["verdict"].as_bool(), Some(expected));
        assert_eq!(out.status.code(), Some(if expected { 0 } else { 2 }));
        let out = run(&["solve", "--model", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(if expected { 0 } else { 2 }));
    }
    assert!(seen[0] && seen[1], "instances must cover both verdicts");
}

#[test]
fn expansion_rate_in_band() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "mpr.json", &Model::Diffusion(catalog::mpr()).to_json_string());
    let out = run(&[
        "expand", "--model", path.to_str().unwrap(), "--m", "1,2,3,4,5,6", "--h", "0.001",
        "--window", "0,1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rate = stderr_json(&out)["fitted_rate"].as_f64().unwrap();
    assert!((0.005..=0.05).contains(&rate), "{rate}");
    let (header, rows) = {
        let text = String::from_utf8(out.stdout).unwrap();
        let mut lines = text.lines().map(String::from).collect::<Vec<_>>();
        let header = lines.remove(0);
        (header, lines)
    };
    assert!(header.starts_with("index,lower,upper"));
    assert_eq!(rows.len(), 6);
}

#[test]
fn malformed_model_exits_one_with_location() {
    let dir = TempDir::new().unwrap();
    let syntax = write(dir.path(), "bad.json", "{\"family\": \"mpr\",\n  \"params\": {,}\n}");
    let out = run(&["solve", "--model", syntax.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let field = write(dir.path(), "field.json", &regime_json([0.3, 0.1], [0.02, 0.01]).replace("\"R\"", "\"Rr\""));
    let out = run(&["wellposed", "--model", field.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Rr"));

    let out = run(&["wellposed", "--model", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn monte_carlo_independent_of_thread_count() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "regime.json", &regime_json([0.3, 0.1], [0.02, 0.01]));
    let outputs: Vec<Value> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = bin()
                .env("MERTON_FACTOR_THREADS", t)
                .args(["mc", "--model", path.to_str().unwrap(), "--paths", "400", "--dt", "0.05"])
                .args(["--seed", "9"])
                .output()
                .unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            serde_json::from_slice(&out.stdout).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    let z = outputs[0]["z_score"].as_f64().unwrap();
    assert!(z.abs() < 4.0, "{}", outputs[0]);
}

#[test]
fn report_and_bounds_emit_json() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "heston.json", &Model::Diffusion(catalog::heston()).to_json_string());
    let p = path.to_str().unwrap();
    let out = run(&["report", "--model", p, "--domain", "0.01,3", "--n", "2990"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["mean_reversion_check"]["holds"].as_bool(), Some(true));
    let out = run(&["bounds", "--model", p, "--domain", "0.01,3", "--n", "500"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(b["certificate"]["valid"].as_bool(), Some(true));
    let out = run(&["refine", "--model", p, "--domain", "0.01,1", "--n", "100,200,400"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);
}
