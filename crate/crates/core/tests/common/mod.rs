#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

/// A configuration small enough to run the whole pipeline in seconds.
pub const SMALL_CONFIG: &str = r#"{
  "out": "o",
  "corpus": {"prompts": 40, "samples_per_prompt": 6},
  "pairs": {"n_win_lose": 60, "n_win_tie": 20},
  "train": {
    "epochs": 1,
    "batch_size": 16,
    "model": {
      "backbone": {"layers": 2, "model_dim": 8, "heads": 2, "seq_len": 6, "feature_dim": 8},
      "hpqa_stages": 2,
      "adapter_heads": 2
    }
  },
  "sim": {"steps": 10},
  "compare": {"repeats": 2}
}"#;

pub const PIPELINE: [&str; 7] = ["gen", "pairs", "train", "eval", "iaa", "sim", "compare"];

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

pub fn rmlab(cwd: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_rmlab"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Workspace with `c.json` holding `config`.
pub fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), config).unwrap();
    dir
}

/// Run the full pipeline; returns each command's stdout.
pub fn run_pipeline(cwd: &Path) -> Vec<String> {
    PIPELINE
        .iter()
        .map(|c| {
            let r = rmlab(cwd, &["--config", "c.json", c]);
            assert_eq!(r.code, 0, "{c}: {}", r.stderr);
            r.stdout
        })
        .collect()
}

/// Every file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}
