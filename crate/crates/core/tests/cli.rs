use std::path::{Path, PathBuf};

use harnack_lab::cli::run_command;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["harnack-lab".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--quiet".into());
    run_command(&argv)
}

fn write_variant(dir: &Path, base: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = std::fs::read_to_string(configs().join(base)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from));
        text = text.replace(from, to);
    }
    let path = dir.join(format!("variant-{}", base));
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn bounds_command_reproduces_example() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("bounds_example.cfg");
    let code = run(&["bounds", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(out.path().join("bounds.csv")).unwrap();
    let value: f64 = csv
        .lines()
        .find(|l| l.starts_with("H_T,value,"))
        .and_then(|l| l.split(',').nth(2))
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - 4.663953413738653).abs() < 1e-9);
    assert!(csv.contains("H_T,s_star,1,"));
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(&format!(",{}", harnack_lab::estimators::version_string())));
    }
}

#[test]
fn jensen_case_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "linear_log_harnack.cfg", &[("eta = constant:0", "eta = constant:1"), ("m = 400", "m = 50")]);
    let out = dir.path().join("out");
    let code = run(&["log-harnack", "--config", cfg.to_str().unwrap(), "--paths", "500", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
}

#[test]
fn short_horizon_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "linear_log_harnack.cfg", &[("T = 2", "T = 0.5"), ("t0 = 1", "t0 = 0.25")]);
    let code = run(&["log-harnack", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn unknown_key_and_missing_config_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "bounds_example.cfg", &[("[bounds]", "[bounds]\nsigma_inverse_mode = dense")]);
    assert_eq!(run(&["bounds", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]), 1);
    assert_eq!(run(&["bounds"]), 1);
    assert_eq!(run(&["no-such-command"]), 1);
}

#[test]
fn command_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("bounds_example.cfg");
    assert_eq!(run(&["log-harnack", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]), 1);
}

#[test]
fn seed_override_and_threads_keep_output_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "linear_couple.cfg", &[("m = 400", "m = 40")]);
    let cfg = cfg.to_str().unwrap();
    let go = |name: &str, seed: &str, threads: &str| {
        let out = dir.path().join(name);
        let code = run(&["couple", "--config", cfg, "--paths", "300", "--seed", seed, "--threads", threads, "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        std::fs::read_to_string(out.join("couple.csv")).unwrap()
    };
    let a = go("a", "5", "1");
    let b = go("b", "5", "3");
    let c = go("c", "6", "1");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.contains(",5,0.025,"));
}

#[test]
fn simulate_and_stationary_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write_variant(dir.path(), "linear_log_harnack.cfg", &[("command = log-harnack", "command = simulate"), ("m = 400", "m = 20")]);
    let out = dir.path().join("sim");
    assert_eq!(run(&["simulate", "--config", sim.to_str().unwrap(), "--paths", "100", "--out", out.to_str().unwrap()]), 0);
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,t,x1\n"));
    assert_eq!(traj.lines().count(), 1 + 41);
    assert!(out.join("simulate.csv").exists());

    let out = dir.path().join("st");
    let st = configs().join("ou_stationary.cfg");
    assert_eq!(run(&["stationary", "--config", st.to_str().unwrap(), "--paths", "200", "--out", out.to_str().unwrap()]), 0);
    assert!(std::fs::read_to_string(out.join("stationary.csv")).unwrap().contains("endpoint_variance,"));
}

#[test]
fn stationary_rejects_delay_systems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(
        dir.path(),
        "ou_stationary.cfg",
        &[("name = ou_nodelay\na = 1\ns0 = 1", "name = linear_additive\na = -1\nc = 0.5\ns0 = 1")],
    );
    assert_eq!(run(&["stationary", "--config", cfg.to_str().unwrap(), "--paths", "50", "--out", dir.path().to_str().unwrap()]), 1);
}
