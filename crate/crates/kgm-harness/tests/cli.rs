//! End-to-end runs of the compiled binary: exit codes, config rejection,
//! artifact determinism across worker counts, and dump round-trips.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgm_harness::formats;

/// Small, fast base configuration shared by the end-to-end runs.
const SMALL: &str = "grid.n = 7\ninvariants.probes = 6\nconstants.restarts = 6\n";

fn run(dir: &Path, config: &Path, out: &str, cmd: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgm-harness"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir.join(out))
        .output()
        .expect("the binary launches")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn invariant_suite_passes_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", SMALL);
    let out = run(tmp.path(), &cfg, "out", "invariants");
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("result: PASS"), "{text}");
    assert!(tmp.path().join("out/report.txt").is_file());
}

#[test]
fn loosened_linear_tolerance_trips_the_invariant_gate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg =
        write_config(tmp.path(), "run.cfg", &format!("{SMALL}tol.lin = 1e-1\n"));
    let out = run(tmp.path(), &cfg, "out", "invariants");
    assert!(!out.status.success(), "a corrupted solver must not pass");
    let text = stdout(&out);
    assert!(text.contains("result: FAIL"), "{text}");
    assert!(text.contains("[FAIL] superposition"), "{text}");
}

#[test]
fn unknown_config_keys_are_rejected_up_front() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg =
        write_config(tmp.path(), "run.cfg", &format!("{SMALL}bogus.key = 1\n"));
    let out = run(tmp.path(), &cfg, "out", "constants");
    assert!(!out.status.success());
    let text = stderr(&out);
    assert!(text.contains("unknown config keys: bogus.key"), "{text}");
}

#[test]
fn zero_sweep_floor_is_rejected_as_inadmissible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg =
        write_config(tmp.path(), "run.cfg", &format!("{SMALL}sweep.t_min = 0\n"));
    let out = run(tmp.path(), &cfg, "out", "sweep-delta");
    assert!(!out.status.success());
    let text = stderr(&out);
    assert!(text.contains("sweep.t_min must be positive"), "{text}");
}

#[test]
fn decay_table_is_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let base = format!(
        "{SMALL}alpha.kind = dipole\nalpha.axis = 0\nalpha.value = 0.2\nvanish.seeds = 2\n"
    );
    let cfg_serial =
        write_config(tmp.path(), "serial.cfg", &format!("{base}workers = 1\n"));
    let cfg_pool =
        write_config(tmp.path(), "pool.cfg", &format!("{base}workers = 3\n"));

    let a = run(tmp.path(), &cfg_serial, "a", "nonexistence");
    assert!(a.status.success(), "stderr: {}", stderr(&a));
    let b = run(tmp.path(), &cfg_pool, "b", "nonexistence");
    assert!(b.status.success(), "stderr: {}", stderr(&b));

    let table_a = fs::read(tmp.path().join("a/decay.csv")).unwrap();
    let table_b = fs::read(tmp.path().join("b/decay.csv")).unwrap();
    assert!(!table_a.is_empty());
    assert_eq!(table_a, table_b, "decay tables differ between worker counts");
}

#[test]
fn solve_artifacts_round_trip_through_the_dump_format() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "run.cfg",
        &format!("{SMALL}solve.seeds = 1\nsolve.points = 1\n"),
    );
    let out = run(tmp.path(), &cfg, "out", "solve");
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("result: PASS"));

    for name in ["u.field", "phi.field", "chi.field"] {
        let path = tmp.path().join("out").join(name);
        let field = formats::read_scalar(&path).unwrap();
        assert_eq!(field.grid().n(), [7, 7, 7], "{name}");
        assert!(field.values().iter().all(|v| v.is_finite()), "{name}");

        // Shortest round-trip printing makes rewrite a byte-level identity.
        let copy = tmp.path().join("copy.field");
        formats::write_scalar(&copy, &field).unwrap();
        assert_eq!(
            fs::read(&copy).unwrap(),
            fs::read(&path).unwrap(),
            "{name} did not round-trip"
        );
    }
    assert!(tmp.path().join("out/trace.csv").is_file());
}
