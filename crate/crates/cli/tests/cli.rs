use std::path::Path;
use std::process::{Command, Output};

fn osdiag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osdiag"))
        .current_dir(dir)
        .env_remove("OSDIAG_OUTPUT_ROOT")
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let o = osdiag(dir.path(), &[flag]);
        assert_eq!(o.status.code(), Some(0), "{flag}");
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn missing_required_flag_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = osdiag(
        dir.path(),
        &["eval", "--calibration", "c.cal", "--data", "d"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--model"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = osdiag(dir.path(), &["gen", "--out", "d", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = osdiag(
        dir.path(),
        &[
            "calibrate",
            "--model",
            "absent.ckpt",
            "--data",
            ".",
            "--out",
            "c.cal",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.ckpt"), "{}", stderr(&o));
}

#[test]
fn config_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        "[generator]\nrecords_per_klass = 3\n",
    )
    .unwrap();
    let o = osdiag(dir.path(), &["--config", "bad.toml", "config"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("records_per_klass"), "{}", stderr(&o));
}

#[test]
fn config_prints_merged_effective_values() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[generator]\nrecords_per_class = 7\n",
    )
    .unwrap();
    let o = osdiag(dir.path(), &["--config", "run.toml", "config"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let table: toml::Table = text.parse().unwrap();
    assert_eq!(
        table["generator"]["records_per_class"].as_integer(),
        Some(7)
    );
    assert_eq!(table["generator"]["seed"].as_integer(), Some(42));
    assert_eq!(table["mission"]["alpha"].as_float(), Some(5.0));
}

#[test]
fn gen_writes_a_manifest_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = osdiag(
        dir.path(),
        &[
            "gen",
            "--seed",
            "5",
            "--records-per-class",
            "10",
            "--out",
            "data",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("data/manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(5));
    let run = &manifest["provenance"]["run"];
    assert_eq!(run["command"].as_str(), Some("gen"));
    assert_eq!(
        run["config"]["generator"]["records_per_class"].as_integer(),
        Some(10)
    );
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = osdiag(dir.path(), &["gradcheck", "--out", "g.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: toml::Table = std::fs::read_to_string(dir.path().join("g.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(report["passed"].as_bool(), Some(true));
}
