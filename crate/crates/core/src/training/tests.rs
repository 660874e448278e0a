use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::appearance::{Scale, StudentConfig, TeacherConfig};
use crate::error::Error;
use crate::illum::EnvMap;
use crate::raymarch::ColorOperator;
use crate::synth::{generate_hand, simulate_capture, stage_rig, CameraRing, CaptureDataset, CaptureScript, HandParams, Material};
use crate::tensor::{Tape, Tensor};

fn stage(w: usize, s: usize) -> Stage {
    let hand = generate_hand(&HandParams { rings: 8, segments: 8, ..HandParams::default() }, 1).unwrap();
    Stage::new(hand, w, s).unwrap()
}

fn capture(st: &Stage, frames: usize, cams: usize, px: usize) -> CaptureDataset {
    let rig = stage_rig(24, 1.0, [0.0, 0.07, 0.0], 4).unwrap();
    let script = CaptureScript {
        frames,
        keyframe_interval: 3,
        lights_per_group: 3,
        cameras: CameraRing { count: cams, width: px, height: px, ..CameraRing::default() },
        seed: 5,
        pose_amplitude: 0.4,
        render_keyframes: false,
    };
    simulate_capture(&st.hand, &script, &rig, &Material::default()).unwrap()
}

fn partial_frames(c: &CaptureDataset) -> Vec<usize> {
    c.frames.iter().filter(|f| f.interpolation.is_some()).map(|f| f.index).collect()
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

#[test]
fn loss_neg_single_negative_texel() {
    let (n, s) = (4, 2);
    let texels = n * s * s * s;
    let mut c = Tensor::<f64>::full(&[3 * s, 2 * s, 2 * s], 1.0);
    c.data_mut()[7] = -2.0;
    let expect = 4.0 / texels as f64;
    assert!((loss_neg(&c, 3, 5.0, 10.0).unwrap() - expect).abs() < 1e-15);

    let mut tape = Tape::<f64>::new();
    let pv = tape.param(c);
    let img = tape.constant(Tensor::zeros(&[3, 2, 2]));
    let w = LossWeights { mse: 0.0, proxy: 0.0, neg: 1.0, eta_neg: 5.0, t_s: 10.0 };
    let l = loss_total(&mut tape, img, img, &[true; 4], pv, 10, &w).unwrap();
    assert!((l.values(&tape).total - expect).abs() < 1e-15);
    assert!(matches!(loss_neg(&Tensor::<f64>::zeros(&[3, 1, 1]), 0, 5.0, 0.0), Err(Error::InvalidArgument(_))));
}

#[test]
fn schedule_shape() {
    let t_s = 20.0;
    assert_eq!(neg_schedule(20, 5.0, t_s).unwrap(), 1.0);
    assert_eq!(neg_schedule(0, 5.0, t_s).unwrap(), 1.0);
    let mut prev = 1.0;
    for t in 0..200 {
        let g = neg_schedule(t, 5.0, t_s).unwrap();
        assert!(g <= prev && g > 0.0);
        prev = g;
    }
    assert!((neg_schedule(40, 5.0, t_s).unwrap() - (-5.0f64).exp()).abs() < 1e-15);
    assert!(neg_schedule(3, 5.0, -1.0).is_err());
}

#[test]
fn proxy_zero_symmetric_positive() {
    let a = rand_tensor(&[3, 9, 7], 0.0, 1.0, 1);
    let b = rand_tensor(&[3, 9, 7], 0.0, 1.0, 2);
    assert_eq!(perceptual_proxy(&a, &a).unwrap(), 0.0);
    let ab = perceptual_proxy(&a, &b).unwrap();
    let ba = perceptual_proxy(&b, &a).unwrap();
    assert!(ab > 0.0 && (ab - ba).abs() < 1e-12 * ab);
    let mut c = a.clone();
    c.data_mut()[40] += 1e-3;
    assert!(perceptual_proxy(&a, &c).unwrap() > 0.0);
}

#[test]
fn loss_zero_at_match_and_plain_mse_without_extras() {
    let r = rand_tensor(&[3, 6, 5], 0.0, 9.0, 3);
    let g = rand_tensor(&[3, 6, 5], 0.0, 9.0, 4);
    let c = rand_tensor(&[6, 4, 4], 0.0, 2.0, 5);
    let mask: Vec<bool> = (0..30).map(|i| i % 3 != 0).collect();
    let mut tape = Tape::<f64>::new();
    let (rv, gv, cv) = (tape.constant(r.clone()), tape.constant(g.clone()), tape.param(c));
    let w = LossWeights::for_steps(100);
    let same = loss_total(&mut tape, rv, rv, &mask, cv, 0, &w).unwrap();
    assert_eq!(same.values(&tape).total, 0.0);
    let plain = LossWeights { proxy: 0.0, neg: 0.0, ..w };
    let l = loss_total(&mut tape, rv, gv, &mask, cv, 0, &plain).unwrap();
    assert!((l.values(&tape).total - masked_mse(&r, &g, &mask).unwrap()).abs() < 1e-12);
    let bad = tape.constant(Tensor::zeros(&[3, 6, 4]));
    assert!(loss_total(&mut tape, rv, bad, &mask, cv, 0, &w).is_err());
}

fn tiny_operator() -> (Stage, Arc<ColorOperator>) {
    let st = stage(2, 2);
    let pose = st.hand.finger_over_palm();
    let geom = st.frame(&pose).unwrap();
    let cam = CameraRing { count: 1, width: 10, height: 10, ..CameraRing::default() }.cameras().unwrap().remove(0);
    let view = st.view_input(&geom, &cam).unwrap();
    (st, view.op)
}

fn loss_at(op: &Arc<ColorOperator>, payload: &Tensor<f64>, gt: &Tensor<f64>, mask: &[bool], w: &LossWeights) -> (f64, Tensor<f64>) {
    let mut tape = Tape::<f64>::new();
    let c = tape.param(payload.clone());
    let img = render_map(&mut tape, op, c).unwrap();
    let g = tape.constant(gt.clone());
    let l = loss_total(&mut tape, img, g, mask, c, 3, w).unwrap();
    tape.backward(l.total).unwrap();
    (l.values(&tape).total, tape.grad(c).unwrap().clone())
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (_, op) = tiny_operator();
    let shape = op.map_shape;
    let payload = rand_tensor(&shape, -1.0, 3.0, 7);
    let gt = rand_tensor(&[3, op.height, op.width], 0.0, 1.0, 8);
    let mask: Vec<bool> = op.alpha.iter().map(|&a| a > 0.05).collect();
    assert!(mask.iter().any(|&m| m));
    let w = LossWeights { mse: 1.0, proxy: 1.0, neg: 0.5, eta_neg: 5.0, t_s: 2.0 };
    let (_, grad) = loss_at(&op, &payload, &gt, &mask, &w);
    let mut touched: Vec<usize> = op.entries.iter().flatten().map(|e| e.0 as usize).collect();
    touched.sort_unstable();
    touched.dedup();
    let negative = payload.data().iter().position(|&v| v < -0.2).unwrap();
    let mut checked = 0;
    for &i in touched.iter().step_by(touched.len().div_ceil(12).max(1)).chain([&negative]) {
        let h = 1e-5;
        let mut p = payload.clone();
        p.data_mut()[i] += h;
        let up = loss_at(&op, &p, &gt, &mask, &w).0;
        p.data_mut()[i] -= 2.0 * h;
        let down = loss_at(&op, &p, &gt, &mask, &w).0;
        let fd = (up - down) / (2.0 * h);
        let an = grad.data()[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        assert!(rel < 1e-3, "texel {i}: analytic {an}, numeric {fd}");
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn render_op_is_linear_and_its_adjoint_matches() {
    let (_, op) = tiny_operator();
    let a = rand_tensor(&op.map_shape, 0.0, 1.0, 11);
    let g = rand_tensor(&[3, op.height, op.width], -1.0, 1.0, 12);
    let ra = render_image(&op, &a).unwrap();
    let lhs: f64 = ra.data().iter().zip(g.data()).map(|(x, y)| x * y).sum();
    let back = op.apply_transpose(g.data());
    let rhs: f64 = back.iter().zip(a.data()).map(|(x, y)| x * y).sum();
    assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
}

#[test]
fn kde_uniform_on_duplicates() {
    let set = vec![vec![0.3, -1.0, 2.0]; 6];
    let w = pose_importance_weights(&set).unwrap();
    for x in &w {
        assert!((x - 1.0 / 6.0).abs() < 1e-12);
    }
}

#[test]
fn kde_prefers_outlier() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut set: Vec<Vec<f64>> = (0..20).map(|i| {
        let c = if i < 10 { 0.0 } else { 1.0 };
        vec![c + rng.gen_range(-0.05..0.05), c + rng.gen_range(-0.05..0.05)]
    }).collect();
    set.push(vec![4.0, -3.0]);
    let n = set.len();
    let w = pose_importance_weights(&set).unwrap();
    assert!(w[n - 1] > 1.0 / n as f64);
    assert!(w[n - 1] > w[..n - 1].iter().cloned().fold(0.0, f64::max));
    let a = pose_importance_sample(&set, 5, 9).unwrap();
    assert_eq!(a, pose_importance_sample(&set, 5, 9).unwrap());
    assert_eq!(a.iter().collect::<HashSet<_>>().len(), 5);
    let hits = (0..400).filter(|&s| pose_importance_sample(&set, 1, s).unwrap()[0] == n - 1).count();
    assert!(hits as f64 / 400.0 > 1.0 / n as f64);
    assert_eq!(pose_importance_sample(&set, 3 * n, 1).unwrap().len(), 3 * n);
}

#[test]
fn root_normalized_vertices_ignore_root_motion() {
    let st = stage(2, 2);
    let mut pose = st.hand.random_pose(&mut ChaCha8Rng::seed_from_u64(3), 0.5);
    let a = root_normalized_vertices(&st.hand, &pose, &[0, 5, 9]).unwrap();
    pose.root = crate::math::Rigid::new(crate::math::DQuat::from_rotation_y(0.7), crate::math::DVec3::new(0.1, 0.2, 0.3));
    let b = root_normalized_vertices(&st.hand, &pose, &[0, 5, 9]).unwrap();
    assert_eq!(a.len(), 9);
    assert_eq!(a, b);
}

fn tiny_teacher(st: &Stage) -> TeacherConfig {
    let mut cfg = TeacherConfig::new(Scale::Desk, st.s, st.w, st.hand.pose_dim());
    cfg.encoder = vec![7 * st.s, 8];
    cfg.decoder = vec![8, 4 * st.s];
    cfg.joint.channels = vec![4, 8];
    cfg
}

#[test]
fn teacher_training_reduces_error_and_resumes_exactly() {
    let st = stage(4, 4);
    let cap = capture(&st, 4, 2, 24);
    let data = TeacherData::prepare(&st, &cap, &partial_frames(&cap), &[]).unwrap();
    assert_eq!(data.samples.len(), 4);
    assert!(data.samples.iter().all(|s| s.mask.iter().any(|&m| m)));
    let cfg = tiny_teacher(&st);
    let mut train = TrainConfig::new(40, 3);
    train.lr = 3e-3;
    let before = data.mse(&cfg, &cfg.init(3).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = Output::new(dir.path(), "teacher");
    let done = train_teacher(&cfg, &data, &train, None, Some(&out)).unwrap();
    let after = data.mse(&cfg, &done.state.params).unwrap();
    assert!(after < 0.7 * before, "{before} -> {after}");
    let log = std::fs::read_to_string(out.log_path()).unwrap();
    assert_eq!(log.lines().count(), 41);
    assert!(log.starts_with(LOG_HEADER));

    let mut short = train.clone();
    short.steps = 6;
    let full = train_teacher(&cfg, &data, &short, None, None).unwrap();
    let mut half = short.clone();
    half.steps = 3;
    let rdir = tempfile::tempdir().unwrap();
    let rout = Output::new(rdir.path(), "t");
    train_teacher(&cfg, &data, &half, None, Some(&rout)).unwrap();
    let state = TrainState::load(rdir.path(), "t").unwrap();
    assert_eq!(state.step, 3);
    let resumed = train_teacher(&cfg, &data, &short, Some(state), Some(&rout)).unwrap();
    assert_eq!(resumed.log.len(), 3);
    for (a, b) in full.log[3..].iter().zip(&resumed.log) {
        assert_eq!(a.iteration, b.iteration);
        assert!((a.loss.total - b.loss.total).abs() <= 1e-6 * a.loss.total.abs().max(1.0));
    }
    assert_eq!(std::fs::read_to_string(rout.log_path()).unwrap().lines().count(), 7);
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let st = stage(2, 4);
    let cap = capture(&st, 4, 1, 12);
    let data = TeacherData::prepare(&st, &cap, &partial_frames(&cap)[..1], &[]).unwrap();
    let cfg = tiny_teacher(&st);
    let mut params = cfg.init::<f32>(0).unwrap();
    params.get_mut("teacher.dec1.bias").unwrap().data_mut()[3 * st.s] = f32::NAN;
    let dir = tempfile::tempdir().unwrap();
    let out = Output::new(dir.path(), "bad");
    let err = train_teacher(&cfg, &data, &TrainConfig::new(3, 0), Some(TrainState::fresh(params)), Some(&out)).err().unwrap();
    assert!(matches!(err, Error::NonFiniteLoss { iteration: 0, .. }), "{err}");
    let dump = std::fs::read_to_string(dir.path().join("bad_diagnostics.json")).unwrap();
    assert!(dump.contains("theta"));
}

#[test]
fn black_rig_drives_output_down() {
    let st = stage(2, 4);
    let mut cap = capture(&st, 4, 1, 16);
    for l in &mut cap.rig.lights {
        l.intensity = [1.0, 1.0, 1.0];
    }
    for row in &mut cap.images {
        for img in row.iter_mut().flatten() {
            let plane = img.len() / 4;
            img.data_mut()[..3 * plane].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let data = TeacherData::prepare(&st, &cap, &partial_frames(&cap), &[]).unwrap();
    let cfg = tiny_teacher(&st);
    let mut train = TrainConfig::new(30, 1);
    train.lr = 1e-2;
    let before = data.mse(&cfg, &cfg.init(1).unwrap()).unwrap();
    let done = train_teacher(&cfg, &data, &train, None, None).unwrap();
    assert!(data.mse(&cfg, &done.state.params).unwrap() < 0.5 * before);
}

fn tiny_student(st: &Stage) -> StudentConfig {
    let mut cfg = StudentConfig::new(Scale::Desk, st.s, st.w, st.hand.pose_dim());
    cfg.joint.channels = vec![4, 4];
    cfg.plan = vec![cfg.feature_channels() + 4, 8, 8, 3 * st.s];
    cfg
}

#[test]
fn distillation_respects_splits_and_learns() {
    let st = stage(4, 4);
    let cfg_t = tiny_teacher(&st);
    let params = cfg_t.init::<f32>(4).unwrap();
    let split = EnvSplit::synthetic(3, 2, 4, 8, 4.0, 1);
    split.check_disjoint().unwrap();
    let cams = CameraRing { count: 2, width: 16, height: 16, ..CameraRing::default() }.cameras().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let poses: Vec<_> = (0..2).map(|_| st.hand.random_pose(&mut rng, 0.4)).collect();
    let test = split.test_hashes();
    let dcfg = DistillConfig { light_radius: 1.0, envs_per_view: 2, seed: 0 };

    let mut leaky = split.train.clone();
    leaky.push(split.test[1].clone());
    let err = build_distill_set(&st, &cfg_t, &params, &poses, &cams, &leaky, &test, &dcfg).err().unwrap();
    assert!(matches!(err, Error::SplitViolation(_)));

    let set = build_distill_set(&st, &cfg_t, &params, &poses, &cams, &split.train, &test, &dcfg).unwrap();
    assert_eq!(set.samples.len(), 8);
    set.assert_hygiene(&test).unwrap();
    let scfg = tiny_student(&st);
    let feats = set.features(&st, &scfg).unwrap();
    assert_eq!(feats[0].shape(), [scfg.feature_channels(), 16, 16]);
    let before = student_mse(&scfg, &scfg.init(2).unwrap(), &set, &feats).unwrap();
    let mut train = TrainConfig::new(40, 2);
    train.lr = 3e-3;
    let dir = tempfile::tempdir().unwrap();
    let done = distill_student(&scfg, &set, &feats, &test, &train, None, Some(&Output::new(dir.path(), "student"))).unwrap();
    let after = student_mse(&scfg, &done.state.params, &set, &feats).unwrap();
    assert!(after < 0.7 * before, "{before} -> {after}");
    assert!(dir.path().join("student.plt").exists() && dir.path().join("student.json").exists());

    let mut tainted = set;
    tainted.samples[0].record.env_hash = crate::training::env_hash(&split.test[0]);
    assert!(matches!(distill_student(&scfg, &tainted, &feats, &test, &train, None, None).err().unwrap(), Error::SplitViolation(_)));
}

#[test]
fn distill_set_manifest() {
    let st = stage(2, 2);
    let cfg_t = tiny_teacher(&st);
    let params = cfg_t.init::<f32>(0).unwrap();
    let envs = vec![EnvMap::constant(2, 4, [0.5, 0.4, 0.3])];
    let cams = CameraRing { count: 1, width: 8, height: 8, ..CameraRing::default() }.cameras().unwrap();
    let poses = vec![st.hand.finger_over_palm()];
    let set = build_distill_set(&st, &cfg_t, &params, &poses, &cams, &envs, &HashSet::new(), &DistillConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    set.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(line["camera"], 0);
    assert_eq!(line["envmap"], "envmaps/train_000.pfm");
    assert!(dir.path().join(line["image"].as_str().unwrap()).exists());
}

#[test]
fn teacher_envmap_path_is_olat_sum() {
    let st = stage(2, 2);
    let cfg = tiny_teacher(&st);
    let params = cfg.init::<f32>(6).unwrap();
    let pose = st.hand.finger_over_palm();
    let geom = st.frame(&pose).unwrap();
    let env = EnvSplit::synthetic(1, 0, 2, 4, 3.0, 3).train.remove(0);
    let lights = crate::illum::env_to_rig(&env, 1.0).lights;
    let inputs = st.light_inputs(&geom, &lights).unwrap();
    let cam = CameraRing { count: 1, width: 12, height: 12, ..CameraRing::default() }.cameras().unwrap().remove(0);
    let view = st.view_input(&geom, &cam).unwrap();
    let mut tape = Tape::<f32>::new();
    let b = params.bind_frozen(&mut tape);
    let olat: Vec<Tensor<f32>> =
        teacher_olat(&mut tape, &cfg, &b, &pose, &view.dirs, &inputs).unwrap().into_iter().map(|v| tape.value(v).clone()).collect();
    let err = olat_linearity_error(&view.op, &olat, &env.texels).unwrap();
    assert!(err < 1e-5, "{err}");
    let agg = teacher_payload(&mut tape, &cfg, &b, &pose, &view.dirs, &inputs).unwrap();
    let direct = render_image(&view.op, tape.value(agg)).unwrap();
    assert!(direct.data().iter().any(|&v| v > 0.0));
}

#[test]
fn step_batches_are_reproducible() {
    assert_eq!(step_batch(4, 17, 3, 10), step_batch(4, 17, 3, 10));
    assert!(step_batch(4, 17, 3, 10).iter().all(|&i| i < 10));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_neg_permutation_invariant_and_monotone(
        vals in proptest::collection::vec(-3.0f64..3.0, 24),
        shift in 0usize..24,
        idx in 0usize..24,
        extra in 0.01f64..2.0,
    ) {
        let c = Tensor::new(&[6, 2, 2], vals.clone()).unwrap();
        let mut rot = vals.clone();
        rot.rotate_left(shift);
        let r = Tensor::new(&[6, 2, 2], rot).unwrap();
        let a = loss_neg(&c, 0, 5.0, 1.0).unwrap();
        prop_assert!((a - loss_neg(&r, 0, 5.0, 1.0).unwrap()).abs() < 1e-12);
        let mut more = vals;
        if more[idx] < 0.0 {
            more[idx] -= extra;
            let m = Tensor::new(&[6, 2, 2], more).unwrap();
            prop_assert!(loss_neg(&m, 0, 5.0, 1.0).unwrap() > a);
        }
    }
}

