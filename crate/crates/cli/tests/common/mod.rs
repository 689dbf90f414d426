#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use wmlab_cli::commands::Status;
use wmlab_cli::{execute, Cli};

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Runs `wmlab <args>` in-process.
pub fn run(args: &[&str]) -> anyhow::Result<Status> {
    let mut argv = vec!["wmlab"];
    argv.extend_from_slice(args);
    execute(&Cli::try_parse_from(argv)?)
}

pub fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmlab"))
        .args(args)
        .output()
        .unwrap()
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

pub fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
