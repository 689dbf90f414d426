mod common;

use common::{bin, read_csv, run, write_config};

#[test]
fn full_resampling_mixes_in_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let text = "setup = \"enumerable\"\nproposal = \"uniform\"\nspan_length = 4\ntop_p = 1.0\nq_grid = [0.0]\n";
    let config = write_config(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    run(&[
        "theory",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let (h, rows) = read_csv(&out.join("theory.csv"));
    assert_eq!(
        h,
        [
            "q",
            "source",
            "n_vertices",
            "empty",
            "irreducible",
            "aperiodic",
            "g",
            "pi_min",
            "bound",
            "empirical_t"
        ]
    );
    let zero = rows.iter().find(|r| r[0] == "0").unwrap();
    assert_eq!(zero[2], "81");
    assert!(
        zero[6].parse::<f64>().unwrap().abs() < 1e-12,
        "g = {}",
        zero[6]
    );
    assert_eq!(zero[9], "1");
}

#[test]
fn levels_above_the_top_quality_are_flagged_empty() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "c.toml",
        "setup = \"enumerable\"\nq_grid = [1.5, 2.0]\n",
    );
    let out = dir.path().join("out");
    run(&[
        "theory",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let (_, rows) = read_csv(&out.join("theory.csv"));
    let tail: Vec<&Vec<String>> = rows.iter().rev().take(2).collect();
    for r in tail {
        assert_eq!(
            (r[1].as_str(), r[2].as_str(), r[3].as_str()),
            ("grid", "0", "1")
        );
        assert!(r[6..].iter().all(String::is_empty));
    }
    assert!(rows.iter().any(|r| r[1].contains("q_min")));
    assert!(rows[..rows.len() - 2].iter().all(|r| r[3] == "0"));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.toml", "setup = \"enumerable\"\n");
    let out = dir.path().join("out");
    let args = [
        "theory",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4",
    ];
    run(&args).unwrap();
    let json = std::fs::read(out.join("theory.json")).unwrap();
    let csv = std::fs::read(out.join("theory.csv")).unwrap();
    run(&args).unwrap();
    assert_eq!(json, std::fs::read(out.join("theory.json")).unwrap());
    assert_eq!(csv, std::fs::read(out.join("theory.csv")).unwrap());
}

#[test]
fn small_random_chains_are_analyzed() {
    let dir = tempfile::tempdir().unwrap();
    let text = "vocab = 3\nlength = 5\nspan_length = 2\ncalibration_samples = 200\npercentile_samples = 500\nq_grid = [0.0]\n";
    let config = write_config(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    run(&[
        "theory",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let (_, rows) = read_csv(&out.join("theory.csv"));
    assert!(!rows.is_empty());
    // Quality is never negative, so level 0 keeps every output.
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[0][2], "243");
}

#[test]
fn oversized_spaces_are_refused_with_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["theory", "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("enumeration cap of 100000"), "{err}");
}
