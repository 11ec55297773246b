use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparse-evo"))
}

fn write_config(dir: &Path, name: &str, strategy: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.conf"));
    std::fs::write(
        &path,
        format!(
            "name = {name}\nstrategy = {strategy}\ntrain_samples = 300\ntest_samples = 100\n\
             layers = 20,16,3\nepochs = 4\noutput_dir = out\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_compare_inspect() {
    let dir = tempfile::tempdir().unwrap();
    for (name, strategy) in [("a", "set"), ("b", "sensitivity")] {
        let out = bin().arg("run").arg(write_config(dir.path(), name, strategy)).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("epochs      4"));
    }
    let out_dir = dir.path().join("out");
    let csv = dir.path().join("cmp.csv");
    let out = bin()
        .arg("compare")
        .arg(out_dir.join("a.metrics.csv"))
        .arg(out_dir.join("b.metrics.csv"))
        .args(["--threshold", "0.5", "--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("a") && text.contains("b"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);

    let out = bin().arg("inspect").arg(out_dir.join("a.checkpoint")).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("layers      20 16 3"));
}

#[test]
fn subsample_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "grid", "set");
    let out = bin().arg("subsample").arg(&config).args(["--fractions", "1.0,0.5"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(dir.path().join("out/grid.subsample.csv")).unwrap();
    assert_eq!(grid.lines().count(), 3);
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "zeta = 1.5\n").unwrap();
    let out = bin().arg("run").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("line 1"), "{err}");

    let missing = bin().arg("inspect").arg(dir.path().join("none.checkpoint")).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let corrupt = dir.path().join("c.checkpoint");
    std::fs::write(&corrupt, "garbage\n").unwrap();
    let out = bin().arg("inspect").arg(&corrupt).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn divergent_run_reports_the_abort() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hot.conf");
    std::fs::write(&path, "name = hot\nlearning_rate = 1e6\nseparation = 50\nepochs = 5\noutput_dir = out\n").unwrap();
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("aborted"));
    let metrics = std::fs::read_to_string(dir.path().join("out/hot.metrics.csv")).unwrap();
    assert!(metrics.lines().last().unwrap().starts_with("# aborted"));
}
