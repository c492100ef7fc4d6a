#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparse_prompt::config::RunConfig;

/// Desk layout at a size that runs in well under a second.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.architecture.hidden_widths = vec![16, 16];
    cfg.embedding_dim = 8;
    cfg.budget.steps_per_task = 60;
    cfg.budget.eval_interval = 10;
    cfg
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("config.in.json");
    std::fs::write(&p, cfg.to_json()).unwrap();
    p
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-prompt"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
