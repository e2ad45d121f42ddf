//! End-to-end runs of the `trajex` binary.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use trajex_cli::RunConfig;

fn trajex(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_trajex"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn simulate_writes_every_state_and_a_manifest() {
    let dir = TempDir::new().unwrap();
    let o = trajex(dir.path(), "scenario = \"a\"\n", &["simulate", "--params", "0.3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/trajectory.csv"));
    assert_eq!(header[0], "time");
    assert!(header.iter().any(|h| h == "gen1.omega") && header.iter().any(|h| h == "bus2.vmag"));
    assert_eq!(rows.len(), 601);
    let manifest = std::fs::read_to_string(dir.path().join("out/run_manifest.txt")).unwrap();
    assert!(manifest.contains("command = simulate") && manifest.contains("status = ok"));
    assert!(manifest.contains("config_sha256 = "));
}

#[test]
fn dumped_configuration_reparses_identically() {
    let dir = TempDir::new().unwrap();
    let o = trajex(
        dir.path(),
        "scenario = \"b\"\n[sampling]\ncount = 7\n",
        &["mc", "--dump-config", "--seed", "11", "--state", "bus2.vmag", "--fault-sweep", "0.5,0.1"],
    );
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.sampling.seed, 11);
    assert_eq!(cfg.sampling.count, 7);
    assert_eq!(cfg.state, "bus2.vmag");
    assert_eq!(cfg.fault_sweep_pu, vec![0.5, 0.1]);
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&trajex(dir.path(), "scenario = \"a\"\nstate = \"gen7.omega\"\n", &["extremes"])), 2);
    assert_eq!(code(&trajex(dir.path(), "no_such_key = 1\n", &["simulate"])), 2);
    assert_eq!(code(&trajex(dir.path(), "scenario = \"a\"\n", &["simulate", "--params", "0.1,0.2"])), 2);
    assert_eq!(code(&trajex(dir.path(), "scenario = \"a\"\n[bounds]\nlower = [0.5]\nupper = [0.4]\n", &["mc"])), 2);
}

#[test]
fn unconverged_optimizer_exits_with_3() {
    let dir = TempDir::new().unwrap();
    let cfg = "scenario = \"a\"\nstate = \"gen1.omega\"\n[times]\ntimes_s = [0.288]\n[envelope.trust]\nmax_iters = 1\n";
    let o = trajex(dir.path(), cfg, &["extremes"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("out/run_manifest.txt")).unwrap();
    assert!(manifest.contains("status = failed (exit 3)"));
}

#[test]
fn oracle_losing_samples_exits_with_4() {
    // below alpha ~ 0.3 the motor share exceeds its pull-out power and the
    // initialization has no solution
    let dir = TempDir::new().unwrap();
    let cfg = "scenario = \"b\"\n[bounds]\nlower = [0.0]\nupper = [1.0]\n[sampling]\ncount = 20\n[times]\ntimes_s = [0.3]\n";
    let o = trajex(dir.path(), cfg, &["mc"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/failures.csv"));
    assert_eq!(header[0], "sample");
    assert!(!rows.is_empty());
}

#[test]
fn zero_width_box_gives_equal_bounds() {
    let dir = TempDir::new().unwrap();
    let cfg = "scenario = \"a\"\nstate = \"bus2.vmag\"\n[bounds]\nlower = [0.3]\nupper = [0.3]\n[times]\nwindow_s = [0.0, 0.4]\n";
    for (baseline, file) in [("trust", "envelope.csv"), ("taylor", "envelope_taylor.csv")] {
        let o = trajex(dir.path(), cfg, &["extremes", "--baseline", baseline]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let (header, rows) = read_csv(&dir.path().join("out").join(file));
        assert_eq!(&header[..3], ["time", "lower", "upper"]);
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r[1] == r[2]));
    }
}

#[test]
fn compare_reports_zero_error_for_the_oracle_itself() {
    let dir = TempDir::new().unwrap();
    let cfg = "scenario = \"a\"\nstate = \"bus2.vmag\"\n[sampling]\ncount = 5\n[times]\nwindow_s = [0.05, 0.3]\n";
    let o = trajex(dir.path(), cfg, &["compare"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/metrics.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let methods: Vec<&str> = rows.iter().map(|r| r[col("method")].as_str()).collect();
    assert!(methods.contains(&"oracle") && methods.contains(&"trust") && methods.contains(&"taylor"));
    for r in rows.iter().filter(|r| r[col("method")] == "oracle") {
        assert_eq!(r[col("eps_upper")].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[col("eps_lower")].parse::<f64>().unwrap(), 0.0);
    }
}
