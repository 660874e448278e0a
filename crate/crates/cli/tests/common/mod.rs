#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

pub const BIN: &str = env!("CARGO_BIN_EXE_primlight");
/// Small shapes keep every command under a few seconds.
pub const SHAPE: [&str; 4] = ["--w", "4", "--s", "4"];

pub fn primlight(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).env_remove("PRIMLIGHT_SEED").env_remove("PRIMLIGHT_THREADS").args(args).output().unwrap()
}

pub fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "exit {:?}\nstdout: {stdout}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    stdout
}

pub fn teacher_args() -> Vec<&'static str> {
    let mut a = SHAPE.to_vec();
    a.extend(["train-teacher", "--frames", "7", "--px", "16", "--steps", "20"]);
    a
}

pub fn student_args() -> Vec<&'static str> {
    vec!["distill-student", "--poses", "4", "--train-envs", "4", "--test-envs", "2", "--envs-per-view", "1", "--px", "16", "--steps", "20"]
}

/// A model directory holding a briefly trained teacher and student.
pub fn model() -> &'static Path {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("model");
        let d = dir.to_str().unwrap();
        let mut a = vec!["--model-dir", d];
        a.extend(teacher_args());
        ok(&primlight(tmp.path(), &a));
        let mut a = vec!["--model-dir", d];
        a.extend(student_args());
        ok(&primlight(tmp.path(), &a));
        (tmp, dir)
    })
    .1
}
