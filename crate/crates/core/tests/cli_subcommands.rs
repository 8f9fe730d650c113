//! The `sbc`, `fit`, and `causal` subcommands drive the same library paths
//! as `run`; exercise them through the binary.

use std::fs;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_padbench")
}

#[test]
fn sbc_subcommand_writes_ranks_and_reports_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args(["sbc", "--model", "normal_known_var", "-M", "100", "-L", "99"])
        .args(["--seed", "9", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("p="), "stdout: {stdout}");
    assert!(dir.path().join("ranks.csv").exists());
    assert!(dir.path().join("ecdf.csv").exists());
    let ranks = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    assert!(ranks.starts_with("m,rank"));
    assert_eq!(ranks.lines().count(), 101);
}

#[test]
fn fit_subcommand_round_trips_draws() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    fs::write(&data, "y\n0.4\n-0.2\n1.1\n").unwrap();
    let draws = dir.path().join("draws.csv");
    let out = Command::new(bin())
        .args(["fit", "--model", "normal_known_var"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&draws)
        .args(["--chains", "2", "--iterations", "100", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&draws).unwrap();
    assert!(text.starts_with("chain,draw,mu"));
    assert_eq!(text.lines().count(), 201);

    // Same seed reproduces the file byte for byte.
    let draws2 = dir.path().join("draws2.csv");
    Command::new(bin())
        .args(["fit", "--model", "normal_known_var"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&draws2)
        .args(["--chains", "2", "--iterations", "100", "--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(text, fs::read_to_string(&draws2).unwrap());

    // The rwm approximator works on the same surface.
    let out = Command::new(bin())
        .args(["fit", "--model", "beta_binomial", "--approximator", "rwm"])
        .arg("--data")
        .arg(dir.path().join("bern.csv"))
        .arg("--out")
        .arg(dir.path().join("rwm.csv"))
        .args(["--chains", "1", "--iterations", "200", "--warmup", "100"])
        .output()
        .unwrap();
    // Missing data file: input error.
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn causal_subcommand_exit_codes_follow_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let dag = dir.path().join("dag.txt");
    fs::write(&dag, "w -> x\nx -> y\n").unwrap();
    let good = dir.path().join("good.txt");
    fs::write(&good, "w\nx | w\ny | x\n").unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "w\ny\nx | y w\n").unwrap();

    let ok = Command::new(bin())
        .arg("causal")
        .arg("--dag")
        .arg(&dag)
        .arg("--spec")
        .arg(&good)
        .args(["--do", "x", "--outcome", "y"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("\"identifiable\": true"), "{stdout}");

    let fail = Command::new(bin())
        .arg("causal")
        .arg("--dag")
        .arg(&dag)
        .arg("--spec")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(fail.status.code(), Some(1));

    let missing = Command::new(bin())
        .arg("causal")
        .arg("--dag")
        .arg(dir.path().join("absent.txt"))
        .arg("--spec")
        .arg(&good)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn threads_env_var_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .env("PADBENCH_THREADS", "2")
        .args(["sbc", "--model", "beta_binomial", "-M", "60", "-L", "99"])
        .args(["--seed", "4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
