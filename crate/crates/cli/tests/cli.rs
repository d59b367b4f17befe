use std::fs;
use std::process::Command;

fn mflab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mflab"))
}

#[test]
fn empty_suite_exits_zero_with_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "schema = 1\nsuite = []\n").unwrap();
    let out = dir.path().join("out");
    let status = mflab().args(["verify", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = fs::read_to_string(out.join("MANIFEST")).unwrap();
    assert!(manifest.contains("# files 0"));
}

#[test]
fn malformed_config_exits_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "schema = 1\n[perc]\ntrials = -5\n").unwrap();
    let out = mflab().args(["perc", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("perc.trials"));
}

#[test]
fn green_identities_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "schema = 1\n[green]\nkernels = [{ family = \"nn\", d = 3 }]\npairs = [[0.0, 0.5]]\nexponent_betas = [0.5]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = mflab()
        .args(["verify", "--suite", "green-identities", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    assert!(out.join("reports/green-identity_nn-d3_0_0.5.json").exists());
    assert!(out.join("summary.csv").exists());
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "schema = 1\n[scaling]\nranges = [1, 2]\nslope_width = 0.001\n").unwrap();
    let out = dir.path().join("out");
    let run = mflab()
        .args(["verify", "--suite", "sigma-scaling", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(1));
    assert!(out.join("reports/sigma-scaling_d5.json").exists());
}
