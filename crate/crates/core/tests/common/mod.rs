#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Copy the fixture inputs into a fresh directory and write a config whose
/// cache and output live there too. `edit` may rewrite the config text.
pub fn workspace(edit: impl FnOnce(String) -> String) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    for name in ["corpus.jsonl", "lexicon.jsonl", "labeled_examples.jsonl", "mock_script.json"] {
        fs::copy(fixture_dir().join(name), dir.path().join(name)).unwrap();
    }
    let config = fs::read_to_string(fixture_dir().join("config.toml"))
        .unwrap()
        .lines()
        .map(|l| {
            if l.starts_with("cache_dir") {
                "cache_dir = \"cache\"".to_string()
            } else if l.starts_with("output_dir") {
                "output_dir = \"out\"".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.path().join("config.toml");
    fs::write(&path, edit(config + "\n")).unwrap();
    (dir, path)
}

pub fn stars(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stars"))
        .args(args)
        .env("STARS_LOG", "warn")
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The single run directory under `<dir>/out`.
pub fn run_dir(dir: &Path) -> PathBuf {
    let mut entries: Vec<_> = fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(entries.len(), 1, "expected one run directory, found {entries:?}");
    entries.pop().unwrap()
}
