use std::path::Path;
use std::process::{Command, Output};

fn msfrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msfrac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn out_flag(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn solve_writes_record_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let o = msfrac(&["solve", "--level", "1", "--case", "ii", "--out", &out_flag(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("units 28"));
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("record.json")).unwrap()).unwrap();
    assert_eq!(record["units_total"], 28);
    assert_eq!(record["converged"], "true");
    assert!(dir.path().join("matrix.vtk").exists() && dir.path().join("fractures.vtk").exists());
}

#[test]
fn exhausted_budget_exits_with_failure() {
    let o = msfrac(&[
        "solve",
        "--level",
        "2",
        "--case",
        "ii",
        "--mode",
        "dd",
        "--max-units",
        "50",
    ]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("converged inf"));
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "geometry.level = 1\ncase = \"iv\"\nbeta = 10.0\nmode = \"dd\"\n").unwrap();
    let o = msfrac(&["solve", "--config", cfg.to_str().unwrap(), "--mode", "ms"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("case iv level 1 beta 10") && s.contains(" ms:"), "{s}");
    assert!(s.contains("units 28"));

    std::fs::write(&cfg, "not_a_key = 1\n").unwrap();
    assert!(!msfrac(&["solve", "--config", cfg.to_str().unwrap()]).status.success());
}

#[test]
fn basis_files_are_reused_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let bases = out_flag(dir.path());
    let o = msfrac(&["basis", "--level", "1", "--case", "i", "--basis-dir", &bases]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("26 solve units"));
    let files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert!(files.iter().any(|p| p.extension().is_some_and(|x| x == "msfb")));
    assert!(files.iter().any(|p| p.extension().is_some_and(|x| x == "manifest")));

    // Case (iv) shares the key of case (i): only data and recovery solves.
    let o = msfrac(&["solve", "--level", "1", "--case", "iv", "--basis-dir", &bases]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("units 2 (basis 0"), "{}", stdout(&o));
}

#[test]
fn mesh_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = msfrac(&["mesh", "--level", "1", "--out", &out_flag(dir.path())]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("sub-domains 10") && s.contains("mortar cells 26"), "{s}");
}

#[test]
fn oracle_agrees() {
    let o = msfrac(&["oracle", "--level", "1", "--case", "iii", "--beta", "1"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = msfrac(&["bench", "--levels", "1", "--out", &out_flag(dir.path())]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "case,level,beta,zeta,method,mode,units_total,units_basis,units_interface,outer_iters,converged"
    );
    assert_eq!(lines.count(), 52);
    assert!(dir.path().join("records.json").exists());
    assert!(dir.path().join("vtk/level1-case-i/matrix.vtk").exists());
}
