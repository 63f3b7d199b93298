use std::path::Path;
use std::process::{Command, Output};

fn coff(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coff"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env("COFF_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn generate_then_register_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gen = coff(&["generate", "--kind", "textured_plane", "--pairs", "2", "--seed", "3"], &data);
    assert_eq!(gen.status.code(), Some(0));
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let out = dir.path().join("run");
    let reg = coff(&["register", "--manifest", manifest.to_str().unwrap(), "--jobs", "2"], &out);
    assert_eq!(reg.status.code(), Some(0), "{}", String::from_utf8_lossy(&reg.stderr));
    for f in ["metrics.csv", "coarse.csv", "ecdf.csv", "transforms.json", "summary.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn partial_pair_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(coff(&["generate", "--pairs", "2"], &data).status.code(), Some(0));
    std::fs::remove_file(data.join("clouds/textured_plane_001_b.ply")).unwrap();

    let out = dir.path().join("run");
    let manifest = data.join("manifest.json");
    let reg = coff(&["register", "--manifest", manifest.to_str().unwrap()], &out);
    assert_eq!(reg.status.code(), Some(2));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "the failed pair keeps its row");
}

#[test]
fn fatal_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = coff(&["register", "--manifest", "/nonexistent/manifest.json"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    let no_manifest = coff(&["register"], dir.path());
    assert_eq!(no_manifest.status.code(), Some(1));

    let bad_config = dir.path().join("bad.json");
    std::fs::write(&bad_config, "{\"seed\": \"x\"}").unwrap();
    let data = dir.path().join("data");
    coff(&["generate", "--pairs", "1"], &data);
    let manifest = data.join("manifest.json");
    let out = coff(
        &["register", "--manifest", manifest.to_str().unwrap(), "--config", bad_config.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn subset_and_sweep_subcommands_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mixed");
    assert_eq!(coff(&["generate", "--kind", "mixed_planarity"], &data).status.code(), Some(0));
    let manifest = data.join("manifest.json");
    let sub_dir = dir.path().join("subset");
    let sub = coff(&["subset", "--manifest", manifest.to_str().unwrap(), "--tau2", "0.7"], &sub_dir);
    assert_eq!(sub.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&sub.stdout).contains("selected 4/10"));

    let sweep_dir = dir.path().join("sweep");
    let subset_manifest = sub_dir.join("subset_manifest.json");
    let sweep = coff(
        &["sweep", "--manifest", subset_manifest.to_str().unwrap(), "--ir-radii", "0.05:0.2:4", "--min-irs", "0:0.1:2", "--rmse", "0.1:0.2:2"],
        &sweep_dir,
    );
    assert_eq!(sweep.status.code(), Some(0), "{}", String::from_utf8_lossy(&sweep.stderr));
    let csv = std::fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 2 + 2);

    let bad = coff(&["sweep", "--manifest", subset_manifest.to_str().unwrap(), "--rmse", "0.1:0.2"], &sweep_dir);
    assert_eq!(bad.status.code(), Some(1));
}
