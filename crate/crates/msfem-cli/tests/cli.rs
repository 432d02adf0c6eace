use std::path::Path;
use std::process::{Command, Output};

fn msfem(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_msfem"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SWEEP: &str = "# small 1d sweep
testcase = 1d
eps = 2^-5
alpha_exponents = 1..3
coarse_exponent = 3
fine_exponent = 10
methods = P1, MsFEM_lin_SUPG, Adv_MsFEM_lin_B
timings = false
";

#[test]
fn sweep_writes_one_row_per_alpha_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let csv = dir.path().join("out/sweep.csv");
    let out = msfem(&["sweep", &cfg, "-o", csv.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], msfem::runner::CSV_HEADER);
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert!(lines[1].starts_with("5.0000000000000000e-1,P1,intrusive,"));
}

#[test]
fn run_uses_the_first_alpha_and_prints_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let out = msfem(&["run", &cfg], &[]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 3);
}

#[test]
fn worker_count_does_not_change_the_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SWEEP.replace("testcase = 1d", "testcase = moderate\ndimension = 2").replace("fine_exponent = 10", "fine_exponent = 6"));
    let one = msfem(&["sweep", &cfg], &[("MSFEM_WORKERS", "1")]);
    let two = msfem(&["sweep", &cfg, "--workers", "1"], &[("MSFEM_WORKERS", "2")]);
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    assert!(two.status.success());
    let mut a: Vec<String> = String::from_utf8(one.stdout).unwrap().lines().map(String::from).collect();
    let mut b: Vec<String> = String::from_utf8(two.stdout).unwrap().lines().map(String::from).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn dump_commands_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let basis = dir.path().join("basis");
    let out = msfem(&["dump-basis", &cfg, "--element", "2", "--dir", basis.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(basis.join("element2_strong_bubble.txt").exists());
    let field = dir.path().join("field.txt");
    let out = msfem(&["dump-field", &cfg, "--method", "PG_Adv_MsFEM_CR_beta:nonintrusive", "--out", field.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(field).unwrap().starts_with("# x reconstruction p1_part reference"));
}

#[test]
fn errors_exit_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "testcase = 1d\nmu_bar = median\n");
    let out = msfem(&["run", &cfg], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2") && err.contains("mu_bar"), "{err}");
    let cfg = write_config(dir.path(), SWEEP);
    let out = msfem(&["dump-basis", &cfg, "--vertex", "0"], &[]);
    assert!(!out.status.success());
    let out = msfem(&["dump-field", &cfg, "--method", "MsFEM_lin:nonintrusive"], &[]);
    assert!(!out.status.success());
}
