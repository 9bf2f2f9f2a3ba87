//! Helpers for driving the `demma` binary from tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn demma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demma"))
        .args(args)
        .output()
        .expect("failed to launch demma")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

/// Fresh scratch directory unique to this process and `name`.
pub fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("demma-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
