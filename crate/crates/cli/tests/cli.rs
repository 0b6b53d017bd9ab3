use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_occukernel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_with_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn summary_value(text: &str, key: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with("# summary:"))
        .expect("summary trailer");
    let field = line
        .trim_start_matches("# summary:")
        .trim()
        .split(',')
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"));
    field.parse().unwrap()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_system1_writes_25_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&[
            "simulate",
            "--noise-sigma",
            "0.01",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = csv_files(&a);
    assert_eq!(fa.len(), 25);
    for (x, y) in fa.iter().zip(csv_files(&b)) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let first = fs::read_to_string(&fa[0]).unwrap();
    assert!(first.starts_with("t,x1,x2\n"));
    assert_eq!(first.lines().count(), 1002);
}

#[test]
fn simulate_lorenz_writes_one_long_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--system",
        "lorenz",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let files = csv_files(dir.path());
    assert_eq!(files.len(), 1);
    let text = fs::read_to_string(&files[0]).unwrap();
    assert_eq!(text.lines().count() - 1, 100_001);
}

#[test]
fn identify_writes_result_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["identify", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("result.csv")).unwrap();
    assert_eq!(text, stdout(&o));
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("param_index,monomial,dim,target,estimate,abs_error")
    );
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows[1][1], "x1^1x2^0");
    assert_eq!(rows[1][2], "1");
    assert_eq!(rows[7][2], "2");
    let worst = rows
        .iter()
        .map(|r| r[5].parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
    assert!(summary_value(&text, "max_error") <= 1e-6);
    assert!(summary_value(&text, "l2_error") >= summary_value(&text, "max_error"));
    assert!(summary_value(&text, "condition_number") > 1.0);
    assert!(summary_value(&text, "runtime_seconds") >= 0.0);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"solver": "ridge", "rule": "bogus", "step": 0.01}"#,
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().to_str().unwrap();

    let o = run(&["identify", "--config", cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "identify", "--config", cfg, "--rule", "simpson", "--out", out,
    ]);
    assert_eq!(o.status.code(), Some(2), "ridge still lacks lambda");
    let o = run(&[
        "identify", "--config", cfg, "--rule", "simpson", "--lambda", "1e-14", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(summary_value(&stdout(&o), "max_error") < 1e-3);

    fs::write(dir.path().join("typo.json"), r#"{"kernal": "gaussian"}"#).unwrap();
    let o = run(&[
        "identify",
        "--config",
        dir.path().join("typo.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2_with_parsable_stderr() {
    for args in [
        vec!["identify", "--kernel", "cosine"],
        vec!["identify", "--mu", "-3"],
        vec!["identify", "--system", "pendulum"],
        vec!["identify", "--centers", "0:1:1"],
        vec![
            "identify",
            "--data",
            "/definitely/missing.csv",
            "--basis-degree",
            "2",
            "--centers",
            "0:1:1,0:1:1",
        ],
        vec!["convergence", "--steps", "0.1,0.05"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.starts_with("error: code=2 kind="), "{err}");
        assert!(err.contains("message=\""), "{err}");
    }
}

#[test]
fn sweeps_over_width_and_trajectory_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&[
        "sweep",
        "--param",
        "mu",
        "--values",
        "1,2,3,4,5,6,7,8,9,10",
        "--step",
        "0.01",
        "--out",
        out,
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("value,error\n"));
    let errs: Vec<(String, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (v, e) = l.split_once(',').unwrap();
            (v.to_string(), e.parse().unwrap())
        })
        .collect();
    assert_eq!(
        errs.iter().map(|(v, _)| v.as_str()).collect::<Vec<_>>(),
        ["1", "2", "3", "4", "5", "6", "7", "8", "9", "10"]
    );
    assert!(errs.iter().all(|(_, e)| *e <= 1e-2), "{errs:?}");

    let o = run(&[
        "sweep",
        "--param",
        "trajectories",
        "--values",
        "1,25",
        "--step",
        "0.01",
        "--out",
        out,
    ]);
    let e: Vec<f64> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split_once(',').unwrap().1.parse().unwrap())
        .collect();
    assert!(e[1] <= e[0], "{e:?}");

    let single = run(&[
        "sweep", "--param", "mu", "--values", "10", "--step", "0.01", "--out", out,
    ]);
    let ident = run(&["identify", "--step", "0.01", "--out", out]);
    let sweep_err: f64 = stdout(&single)
        .lines()
        .nth(1)
        .unwrap()
        .split_once(',')
        .unwrap()
        .1
        .parse()
        .unwrap();
    let ident_err = summary_value(&stdout(&ident), "l2_error");
    assert!(
        (sweep_err - ident_err).abs() <= 1e-6 * ident_err.max(1e-300),
        "{sweep_err} vs {ident_err}"
    );

    let o = run(&[
        "sweep",
        "--param",
        "trajectories",
        "--values",
        "0",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn montecarlo_single_trial_is_deterministic_and_noiseless_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["montecarlo", "--trials", "1", "--seed", "42", "--out", out];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("trial,seed,ok_error,ils_error,ok_cond,ils_cond\n0,42,"));
    assert!(!text.contains("# flag"));

    let clean = run(&[
        "montecarlo",
        "--trials",
        "1",
        "--noise-sigma",
        "0",
        "--out",
        out,
    ]);
    assert!(clean.status.success());
    assert!(stdout(&clean).contains("# flag: noiseless"));
    assert!(String::from_utf8_lossy(&clean.stderr).contains("kind=noiseless"));

    let o = run(&["montecarlo", "--system", "system1", "--trials", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

fn fitted_order(text: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix("# fitted_order: "))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn convergence_reports_rule_orders() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ladder = "0.1,0.05,0.025,0.0125";
    for (rule, expected, tol) in [("rh", 1.0, 0.3), ("trap", 2.0, 0.3), ("simpson", 4.0, 0.5)] {
        let o = run(&[
            "convergence",
            "--quantity",
            "quadrature",
            "--rule",
            rule,
            "--steps",
            ladder,
            "--out",
            out,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let p = fitted_order(&stdout(&o));
        assert!((p - expected).abs() <= tol, "{rule}: {p}");
    }

    let rh = run(&[
        "convergence",
        "--quantity",
        "norm",
        "--rule",
        "rh",
        "--steps",
        "0.1,0.05,0.025",
        "--out",
        out,
    ]);
    assert!(
        rh.status.success(),
        "{}",
        String::from_utf8_lossy(&rh.stderr)
    );
    let p = fitted_order(&stdout(&rh));
    assert!((p - 1.0).abs() <= 0.3, "{p}");
    let si = run(&[
        "convergence",
        "--quantity",
        "norm",
        "--rule",
        "simpson",
        "--steps",
        "0.1,0.05,0.025",
        "--out",
        out,
    ]);
    assert!(fitted_order(&stdout(&si)) > 3.5);
    assert!(fs::read_to_string(dir.path().join("convergence.csv"))
        .unwrap()
        .starts_with("h,error\n"));

    let ident = run(&[
        "convergence",
        "--rule",
        "trap",
        "--steps",
        "0.04,0.02,0.01",
        "--out",
        out,
    ]);
    assert!(ident.status.success());
    let p = fitted_order(&stdout(&ident));
    assert!(p > 1.5, "{p}");
}

#[test]
fn stream_replay_matches_batch() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(run(&["simulate", "--out", sim.to_str().unwrap()])
        .status
        .success());
    let files = csv_files(&sim);
    let mut input = Vec::new();
    for f in &files {
        input.extend(fs::read(f).unwrap());
    }
    let o = run_with_stdin(&["stream", "--every", "5000", "--settle", "500"], &input);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("t,theta1,"));
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let theta = &last[1..last.len() - 1];

    let list: Vec<&str> = files.iter().map(|p| p.to_str().unwrap()).collect();
    let data = list.join(",");
    let batch = run(&[
        "identify",
        "--data",
        &data,
        "--basis-degree",
        "2",
        "--centers",
        "-3:3:1,-3:5:1",
        "--rule",
        "trap",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        batch.status.success(),
        "{}",
        String::from_utf8_lossy(&batch.stderr)
    );
    let estimates: Vec<f64> = stdout(&batch)
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    let gap = theta
        .iter()
        .zip(&estimates)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(gap <= 1e-2, "{gap}");
}

#[test]
fn stream_edge_cases() {
    let empty = run_with_stdin(&["stream"], b"");
    assert!(empty.status.success());
    assert!(empty.stdout.is_empty());

    let broken = run_with_stdin(&["stream"], b"t,x1,x2\n0,1,1\n0.01,1,1\n0.05,1,1\n");
    assert_eq!(broken.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("does not continue the grid"));

    let mut rows = String::from("t,x1,x2\n");
    for k in 0..50 {
        let t = k as f64 * 0.01;
        rows.push_str(&format!("{t},{},{}\n", t.cos(), -t.sin()));
    }
    let diverge = run_with_stdin(&["stream", "--step-size", "1e6"], rows.as_bytes());
    assert_eq!(diverge.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&diverge.stderr).contains("kind=numerical"));
}
