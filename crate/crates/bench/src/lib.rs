//! Shared fixtures for the criterion benchmarks.

use primlight::illum::EnvMap;
use primlight::math::DVec3;
use primlight::raymarch::Camera;
use primlight::synth::{generate_hand, HandParams, HAND_POSE_DIM};
use primlight::training::{EnvSplit, Stage};
use primlight::appearance::{Scale, StudentConfig, TeacherConfig};

/// Desk-scale stage with `w` primitives per side and `s` voxels per side.
pub fn stage(w: usize, s: usize) -> Stage {
    Stage::new(generate_hand(&HandParams::default(), 0).unwrap(), w, s).unwrap()
}

pub fn teacher(w: usize, s: usize) -> TeacherConfig {
    TeacherConfig::new(Scale::Desk, s, w, HAND_POSE_DIM)
}

pub fn student(w: usize, s: usize) -> StudentConfig {
    StudentConfig::new(Scale::Desk, s, w, HAND_POSE_DIM)
}

pub fn camera(px: usize) -> Camera {
    Camera::look_at(DVec3::new(0.0, 0.13, 0.4), DVec3::new(0.0, 0.07, 0.0), DVec3::Y, 0.6, px, px).unwrap()
}

pub fn sky(rows: usize, cols: usize) -> EnvMap {
    EnvSplit::synthetic(1, 0, rows, cols, 5.0, 0).train.remove(0)
}
