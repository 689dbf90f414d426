mod common;

use common::{bin, write_config};

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.toml", "span_lenght = 4\n");
    let out = bin(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("span_lenght"), "{err}");
}

#[test]
fn cross_field_error_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.toml", "length = 5\nspan_length = 6\n");
    let out = bin(&[
        "attack",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("key `span_length`"));
}

#[test]
fn bad_flags_and_missing_files_exit_2() {
    assert_eq!(
        bin(&["generate", "--trials", "many"]).status.code(),
        Some(2)
    );
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        bin(&["generate", "--config", "/nonexistent/c.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn help_exits_0() {
    let out = bin(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["generate", "attack", "theory", "validate", "plotdata"] {
        assert!(text.contains(cmd));
    }
}

#[test]
fn generate_exits_0_and_times_separately() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        "generate",
        "--out",
        dir.path().to_str().unwrap(),
        "--trials",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let timing: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("generate.timing.json")).unwrap())
            .unwrap();
    assert!(timing["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    let record = std::fs::read_to_string(dir.path().join("generate.json")).unwrap();
    assert!(!record.contains("wall_clock"));
}
