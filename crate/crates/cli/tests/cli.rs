use std::fs;
use std::process::Command;

fn dsfl() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dsfl"));
    cmd.env_remove("DSFL_SEED");
    cmd
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> std::path::PathBuf {
    let path = dir.path().join("exp.cfg");
    fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = "# small quadratic run\ntask = quadratic\ntask_dim = 4\ntask_samples = 200\nrounds = 5\n";

#[test]
fn run_writes_header_and_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let out = dir.path().join("m.csv");
    let status = dsfl()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "round,loss,accuracy,dist_to_opt,attacker_selected_count,attacker_success_rate,active_participants,bytes_sent"
    );
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("5,"));
}

#[test]
fn identical_seeds_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let status = dsfl()
            .args(["run", "--seed", seed, "--set", "adversary=inversion", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv", "9"), run("b.csv", "9"));
    assert_ne!(run("a.csv", "9"), run("c.csv", "10"));
}

#[test]
fn env_seed_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let get = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = dsfl();
        cmd.args(["run", "--config"]).arg(&cfg);
        if let Some(e) = env {
            cmd.env("DSFL_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(get(Some("4"), None), get(None, Some("4")));
    assert_eq!(get(Some("5"), Some("4")), get(None, Some("4")));
    assert_ne!(get(Some("5"), None), get(None, Some("4")));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "rounds = 3\nnot_a_key = 1\n");
    let out = dsfl().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("not_a_key"), "{err}");

    let out = dsfl().args(["run", "--set", "byz_fraction=0.7"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = dsfl().args(["run", "--config", "/nonexistent/x.cfg"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_three() {
    // The config parses; the data file is only opened when the run starts.
    let out = dsfl()
        .args(["run", "--rounds", "2", "--set", "task=csv", "--set", "csv_path=/nonexistent/data.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn compare_sweep_rows_and_empty_betas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let out = dir.path().join("cmp.csv");
    let status = dsfl()
        .args(["compare", "--aggregators", "fedavg,dsfl", "--betas", "0,0.2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("fedavg,0,") && lines[4].starts_with("dsfl,0.2,"));

    let status = dsfl()
        .args(["compare", "--betas", "", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1);
}

#[test]
fn audit_reports_ambiguous_for_default_grouping() {
    let out = dsfl().arg("audit").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("verdict         ambiguous"), "{text}");
    assert!(text.contains("nullspace_dim   3"), "{text}");
}

#[test]
fn attack_demo_prints_small_error() {
    let out = dsfl().args(["attack-demo", "--dim", "16", "--seed", "3"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let err: f64 = text
        .lines()
        .find(|l| l.starts_with("max_reconstruction_error"))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-6);
}
