mod common;

use common::{column, mean, read_csv, run, write_config};

#[test]
fn kgw_outputs_are_strongly_detected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run(&[
        "generate",
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "100",
    ])
    .unwrap();
    let (header, rows) = read_csv(&out.join("generate.csv"));
    assert_eq!(header, ["trial", "z", "p", "decision", "quality"]);
    assert_eq!(rows.len(), 100);
    let z = column(&header, &rows, "z");
    assert!(mean(&z) > 4.0, "mean z {}", mean(&z));
    let q = column(&header, &rows, "quality");
    assert!(q.iter().all(|q| (0.0..=1.0).contains(q)));
}

#[test]
fn fixed_key_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let args = [
        "generate",
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "20",
        "--seed",
        "9",
        "--fixed-key",
    ];
    run(&args).unwrap();
    let json = std::fs::read(out.join("generate.json")).unwrap();
    let csv = std::fs::read(out.join("generate.csv")).unwrap();
    run(&args).unwrap();
    assert_eq!(json, std::fs::read(out.join("generate.json")).unwrap());
    assert_eq!(csv, std::fs::read(out.join("generate.csv")).unwrap());

    let record: serde_json::Value = serde_json::from_slice(&json).unwrap();
    let keys: Vec<&str> = record["trials"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["key"].as_str().unwrap())
        .collect();
    assert!(keys.iter().all(|k| *k == keys[0]));
}

#[test]
fn fresh_keys_differ_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run(&["generate", "--out", out.to_str().unwrap(), "--trials", "5"]).unwrap();
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("generate.json")).unwrap()).unwrap();
    let mut keys: Vec<&str> = record["trials"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["key"].as_str().unwrap())
        .collect();
    keys.dedup();
    assert_eq!(keys.len(), 5);
}

#[test]
fn zero_bias_gives_null_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "null.toml", "delta = 0.0\ntrials = 100\n");
    let out = dir.path().join("out");
    run(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let (header, rows) = read_csv(&out.join("generate.csv"));
    let z = column(&header, &rows, "z");
    assert_eq!(z.len(), 100);
    assert!(mean(&z).abs() <= 0.3, "mean z {}", mean(&z));
}

#[test]
fn record_carries_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let text = "# tiny run\nlength = 50\nvocab = 8\ncalibration_samples = 100\n";
    let config = write_config(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    run(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "3",
    ])
    .unwrap();
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("generate.json")).unwrap()).unwrap();
    assert_eq!(
        record["config_hash"],
        wmlab_cli::config::config_hash(text.as_bytes())
    );
    assert_eq!(record["config"]["model"]["length"], 50);
    assert!(out.join("generate.timing.json").exists());
}

#[test]
fn every_scheme_generates() {
    for scheme in ["kgw", "unigram", "exp", "synthetic"] {
        let dir = tempfile::tempdir().unwrap();
        let text =
            format!("scheme = \"{scheme}\"\nlength = 30\nvocab = 6\ncalibration_samples = 100\n");
        let text = if scheme == "exp" {
            text + "resamples = 99\nblock_length = 4\n"
        } else {
            text
        };
        let config = write_config(dir.path(), "c.toml", &text);
        let out = dir.path().join("out");
        run(&[
            "generate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--trials",
            "4",
        ])
        .unwrap();
        let (_, rows) = read_csv(&out.join("generate.csv"));
        assert_eq!(rows.len(), 4, "{scheme}");
    }
}
