#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

pub fn pros(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pros"))
        .args(args)
        .output()
        .expect("the pros binary runs")
}

pub fn pros_ok(args: &[&str]) -> String {
    let out = pros(args);
    assert!(
        out.status.success(),
        "pros {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub struct Fixture {
    pub dir: TempDir,
    pub dataset: PathBuf,
    pub index: PathBuf,
    pub bundle: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// `extra[0]` is the subcommand; the fixture's paths follow it.
    pub fn args<'a>(&'a self, extra: &[&'a str]) -> Vec<&'a str> {
        let mut v = vec![
            extra[0],
            "--dataset",
            s(&self.dataset),
            "--index",
            s(&self.index),
            "--bundle",
            s(&self.bundle),
        ];
        v.extend_from_slice(&extra[1..]);
        v
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 4000 random walks of length 64, 300 held out, k = 1.
pub fn random_walks() -> Fixture {
    build(&["--kind", "rw", "--n", "4000", "--len", "64"], 300, "1", 40)
}

/// 3000 labeled CBF series of length 128, 300 held out, k = 5.
pub fn cbf() -> Fixture {
    build(&["--kind", "cbf", "--n", "3000", "--len", "128"], 300, "5", 50)
}

fn build(generate: &[&str], holdout: usize, k: &str, threshold: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("data");
    let dataset = dir.path().join("data.json");
    let index = dir.path().join("data.idx");
    let bundle = dir.path().join("bundle.json");
    let mut args = vec!["generate", "--out", s(&stem)];
    args.extend_from_slice(generate);
    pros_ok(&args);
    let holdout = holdout.to_string();
    let threshold = threshold.to_string();
    pros_ok(&[
        "index",
        "--dataset",
        s(&dataset),
        "--holdout",
        &holdout,
        "--leaf-threshold",
        &threshold,
        "--out",
        s(&index),
    ]);
    pros_ok(&[
        "train",
        "--dataset",
        s(&dataset),
        "--index",
        s(&index),
        "--k",
        k,
        "--witnesses",
        "60",
        "--training",
        "200",
        "--out",
        s(&bundle),
    ]);
    Fixture {
        dir,
        dataset,
        index,
        bundle,
    }
}
