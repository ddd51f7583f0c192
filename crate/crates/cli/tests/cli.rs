use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use belh_core::output::RunManifest;

fn belh() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_belh"));
    cmd.env_remove("BELH_THREADS");
    cmd
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_in(out: &Path, args: &[&str], config: &Path) -> Output {
    belh().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn smoke_text() -> String {
    std::fs::read_to_string(configs().join("smoke.toml")).unwrap()
}

#[test]
fn smoke_run_writes_manifest_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["run"], &configs().join("smoke.toml"));
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = csv(&dir.path().join("diagnostics.csv"));
    assert_eq!(header[0], "time");
    for col in ["kinetic", "free_energy", "hyper_dissipation", "g_functional", "a_h_pairing", "max_u"] {
        assert!(header.iter().any(|h| h == col), "missing {col}");
    }
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    assert!((rows[10][0] - 0.1).abs() < 1e-12);
    let (_, steps) = csv(&dir.path().join("steps.csv"));
    assert_eq!(steps.len(), 10);
    let m = RunManifest::read(&RunManifest::path(dir.path())).unwrap();
    assert_eq!(m.subcommand, "run");
    assert_eq!(m.config, smoke_text());
    assert_eq!(m.seed, Some(7));
    assert_eq!(m.status.as_deref(), Some("ok"));
    assert!(m.finished.unwrap() >= m.started);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.toml");
    assert!(run_in(a.path(), &["run", "--seed", "3"], &cfg).status.success());
    assert!(run_in(b.path(), &["run", "--seed", "3"], &cfg).status.success());
    assert!(run_in(c.path(), &["run", "--seed", "4"], &cfg).status.success());
    let read = |d: &Path| std::fs::read(d.join("diagnostics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
    let m = RunManifest::read(&RunManifest::path(a.path())).unwrap();
    assert_eq!(m.seed, Some(3));
}

#[test]
fn missing_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &smoke_text().replace("dt = 0.01\n", ""));
    let o = run_in(&dir.path().join("out"), &["run"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("missing field `dt`"), "{err}");
    assert!(err.contains("bad.toml"), "{err}");
}

#[test]
fn unknown_key_is_rejected_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &smoke_text().replace("n = 16", "n = 16\nsize = 2"));
    let o = run_in(&dir.path().join("out"), &["run"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("size") && err.contains("line"), "{err}");
    let o = belh().args(["run", "--out"]).arg(dir.path().join("o2")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_reports_time() {
    let dir = tempfile::tempdir().unwrap();
    let text = smoke_text().replace("u_norm = 1.0", "u_norm = 400.0").replace("dt = 0.01", "dt = 0.05").replace("t_final = 0.1", "t_final = 0.5");
    let cfg = write(dir.path(), "cfl.toml", &text);
    let out = dir.path().join("out");
    let o = run_in(&out, &["run"], &cfg);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("t = "), "{}", stderr(&o));
    let m = RunManifest::read(&RunManifest::path(&out)).unwrap();
    assert!(m.status.unwrap().starts_with("numerical failure"));
    // the CSV prefix survives
    let (_, rows) = csv(&out.join("diagnostics.csv"));
    assert!(!rows.is_empty());
}

#[test]
fn checkpoints_restart_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let o = run_in(&full, &["run", "--checkpoint-every", "5"], &configs().join("smoke.toml"));
    assert!(o.status.success());
    let ck = full.join("checkpoint_00000005.bin");
    assert!(ck.exists() && full.join("checkpoint_00000010.bin").exists());
    let text = smoke_text().replace(
        "kind = \"random\"\nq_norm = 1.0\nu_norm = 1.0\nk0 = 1.0\nseed = 7",
        &format!("kind = \"checkpoint\"\npath = {:?}", ck.display().to_string()),
    );
    let cfg = write(dir.path(), "restart.toml", &text);
    let rest = dir.path().join("rest");
    let o = run_in(&rest, &["run"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, a) = csv(&full.join("diagnostics.csv"));
    let (_, b) = csv(&rest.join("diagnostics.csv"));
    assert_eq!(b.len(), 6);
    assert_eq!(a.last(), b.last());
}

#[test]
fn threads_come_from_flag_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.toml");
    let o = belh().env("BELH_THREADS", "2").args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(o.status.success());
    assert_eq!(RunManifest::read(&RunManifest::path(dir.path())).unwrap().threads, 2);
    let o = run_in(dir.path(), &["run", "--threads", "3"], &cfg);
    assert!(o.status.success());
    assert_eq!(RunManifest::read(&RunManifest::path(dir.path())).unwrap().threads, 3);
}

#[test]
fn uniaxial_demo_flags_only_the_focusing_case() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["uniaxial"], &configs().join("uniaxial_demo.toml"));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("c = 1: bounded"), "{text}");
    assert!(text.contains("c = -1: BLOW-UP at t = 0.0228"), "{text}");
    let (header, rows) = csv(&dir.path().join("uniaxial_summary.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][col("blowup")], 0.0);
    assert!(rows[1][col("blowup_time")].is_nan());
    assert_eq!(rows[2][col("blowup")], 1.0);
    assert!(rows[2][col("blowup_time")].is_finite());
    assert_eq!(rows[2][col("moment_dominates")], 1.0);
    assert!(dir.path().join("uniaxial_sweep_0.csv").exists());
}

#[test]
fn tail_columns_are_monotone_in_radius() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("tail_gaussian.toml"))
        .unwrap()
        .replace("n = 32", "n = 16")
        .replace("t_final = 1.0", "t_final = 0.1");
    let cfg = write(dir.path(), "tail.toml", &text);
    let out = dir.path().join("out");
    let o = run_in(&out, &["tail"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("non-increasing in R at every record: yes"));
    let (header, rows) = csv(&out.join("tail.csv"));
    assert_eq!(header, ["time", "tail_energy_0", "tail_energy_1", "tail_energy_2", "flux_0", "flux_1", "flux_2"]);
    for r in &rows {
        assert!(r[1] > r[2] && r[2] > r[3], "{r:?}");
    }
    // tail without radii is a configuration error
    let cfg = write(dir.path(), "plain.toml", &smoke_text());
    assert_eq!(run_in(&dir.path().join("o2"), &["tail"], &cfg).status.code(), Some(2));
}

#[test]
fn verify_passes_and_injected_error_fails_cancellation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "verify.toml",
        "samples = 300\ncoercivity_samples = 2000\ngrid_n = 8\ndirections = 3\ntumbling = [-1.0, 0.0, 1.0]\n",
    );
    let ok = dir.path().join("ok");
    let o = run_in(&ok, &["verify", "--seed", "5"], &cfg);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("identities pass"));
    assert_eq!(RunManifest::read(&RunManifest::path(&ok)).unwrap().seed, Some(5));
    let bad = dir.path().join("bad");
    let o = run_in(&bad, &["verify", "--inject-tau-sign-error"], &cfg);
    assert_eq!(o.status.code(), Some(4));
    let listing: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(bad.join("failures.json")).unwrap()).unwrap();
    let names = listing["failures"].as_array().unwrap();
    assert_eq!(names.len(), 6);
    assert!(names.iter().all(|n| n.as_str().unwrap().starts_with("cancellation")));
}

#[test]
fn compare_uniaxial_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("compare_uniaxial.toml"))
        .unwrap()
        .replace("n = 32", "n = 16")
        .replace("t_final = 0.5", "t_final = 0.02");
    let cfg = write(dir.path(), "cmp.toml", &text);
    let o = run_in(&dir.path().join("a"), &["compare-uniaxial"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = csv(&dir.path().join("a/compare.csv"));
    assert_eq!(rows.len(), 11);
    let strict = write(dir.path(), "strict.toml", &text.replace("tolerance = 1e-8", "tolerance = 0.0"));
    let o = run_in(&dir.path().join("b"), &["compare-uniaxial"], &strict);
    assert_eq!(o.status.code(), Some(4), "{}", stdout(&o));
}

#[test]
fn eps_sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("eps_sweep.toml"))
        .unwrap()
        .replace("n = 16", "n = 8")
        .replace("t_final = 8.0", "t_final = 0.04")
        .replace("dt = [3.4722222222222225e-3, 0.02, 0.02, 0.02]", "dt = [0.01, 0.01, 0.02, 0.02]");
    let cfg = write(dir.path(), "eps.toml", &text);
    let o = run_in(&dir.path().join("out"), &["eps-sweep"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = csv(&dir.path().join("out/eps_sweep.csv"));
    assert_eq!(header[0], "hyperviscosity");
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [1e-1, 1e-2, 1e-3, 1e-4]);
    assert!(rows.iter().all(|r| r[2] > 0.0));
    assert!(stdout(&o).contains("spread max/min"));
    let cfg = write(dir.path(), "nosweep.toml", &smoke_text());
    assert_eq!(run_in(&dir.path().join("o2"), &["eps-sweep"], &cfg).status.code(), Some(2));
}
