use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Central differences of `f` at `x` in 64-bit.
fn numeric_grad(x: &Tensor<f64>, h: f64, f: &dyn Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Random projection of an output, so the scalar loss touches every element.
fn weights_for(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random(shape, &mut rng)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn project(tape: &mut Tape<f64>, out: Var, w: &Tensor<f64>) -> Var {
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv).unwrap();
    tape.sum(prod)
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[1, 5, 6], &mut rng);
    let k = Tensor::full(&[1, 1, 1, 1], 1.0);
    let y = kernels::conv2d(&x, &k, None, 1, 0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_zero_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 5, 5], &mut rng);
    let k = Tensor::zeros(&[3, 2, 3, 3]);
    let y = kernels::conv2d(&x, &k, None, 1, 1).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert_eq!(y.shape(), &[3, 5, 5]);
}

#[test]
fn conv_output_size_with_stride() {
    let x = Tensor::<f32>::zeros(&[1, 9, 7]);
    let k = Tensor::zeros(&[2, 1, 3, 3]);
    let y = kernels::conv2d(&x, &k, None, 2, 1).unwrap();
    assert_eq!(y.shape(), &[2, 5, 4]);
}

#[test]
fn conv_channel_mismatch_names_both_shapes() {
    let x = Tensor::<f32>::zeros(&[3, 4, 4]);
    let k = Tensor::zeros(&[2, 5, 3, 3]);
    let msg = kernels::conv2d(&x, &k, None, 1, 1).unwrap_err().to_string();
    assert!(msg.contains("[3, 4, 4]") && msg.contains("[2, 5, 3, 3]"), "{msg}");
}

#[test]
fn conv_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 5, 6], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let y = kernels::conv2d(&x, &k, None, 1, 1).unwrap();
    for o in 0..3 {
        for i in 0..5 {
            for j in 0..6 {
                let mut acc = 0.0;
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (yy, xx) = (i as isize + ky as isize - 1, j as isize + kx as isize - 1);
                            if yy >= 0 && yy < 5 && xx >= 0 && xx < 6 {
                                acc += x.data()[c * 30 + yy as usize * 6 + xx as usize]
                                    * k.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                }
                assert!((y.data()[o * 30 + i * 6 + j] - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[4, 8, 8], &mut rng);
    let k = random(&[8, 4, 3, 3], &mut rng);
    let b = random(&[8], &mut rng);
    let w = weights_for(&[8, 8, 8], 5);

    let mut tape = Tape::<f64>::new();
    let xv = tape.param(x.clone());
    let kv = tape.param(k.clone());
    let bv = tape.param(b.clone());
    let y = tape.conv2d(xv, kv, Some(bv), 1, 1).unwrap();
    let loss = project(&mut tape, y, &w);
    tape.backward(loss).unwrap();

    let fx = |xx: &Tensor<f64>| dot(&kernels::conv2d(xx, &k, Some(&b), 1, 1).unwrap(), &w);
    let fk = |kk: &Tensor<f64>| dot(&kernels::conv2d(&x, kk, Some(&b), 1, 1).unwrap(), &w);
    let fb = |bb: &Tensor<f64>| dot(&kernels::conv2d(&x, &k, Some(bb), 1, 1).unwrap(), &w);
    assert!(max_rel_err(tape.grad(xv).unwrap().data(), &numeric_grad(&x, 1e-3, &fx)) < 1e-3);
    assert!(max_rel_err(tape.grad(kv).unwrap().data(), &numeric_grad(&k, 1e-3, &fk)) < 1e-3);
    assert!(max_rel_err(tape.grad(bv).unwrap().data(), &numeric_grad(&b, 1e-3, &fb)) < 1e-3);
}

#[test]
fn strided_conv_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[2, 7, 7], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let w = weights_for(&[3, 4, 4], 7);
    let mut tape = Tape::<f64>::new();
    let xv = tape.param(x.clone());
    let kv = tape.constant(k.clone());
    let y = tape.conv2d(xv, kv, None, 2, 1).unwrap();
    let loss = project(&mut tape, y, &w);
    tape.backward(loss).unwrap();
    let f = |xx: &Tensor<f64>| dot(&kernels::conv2d(xx, &k, None, 2, 1).unwrap(), &w);
    assert!(max_rel_err(tape.grad(xv).unwrap().data(), &numeric_grad(&x, 1e-3, &f)) < 1e-3);
}

#[test]
fn resize_constant_stays_constant() {
    let x = Tensor::<f32>::full(&[2, 3, 5], 0.75);
    for (h, w) in [(1, 1), (7, 2), (6, 10)] {
        let y = kernels::resize_bilinear(&x, h, w).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
    }
}

#[test]
fn resize_halving_averages_pairs() {
    let x = Tensor::<f64>::from_fn(&[2, 4, 6], |i| (i * i % 7) as f64);
    let y = kernels::resize_bilinear(&x, 2, 3).unwrap();
    for c in 0..2 {
        for r in 0..2 {
            for q in 0..3 {
                let at = |rr: usize, qq: usize| x.data()[(c * 4 + rr) * 6 + qq];
                let want = (at(2 * r, 2 * q) + at(2 * r, 2 * q + 1) + at(2 * r + 1, 2 * q) + at(2 * r + 1, 2 * q + 1)) / 4.0;
                assert!((y.data()[(c * 2 + r) * 3 + q] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn resize_doubling_reproduces_interior_ramp() {
    let (h, w) = (6, 9);
    let x = Tensor::<f64>::from_fn(&[1, h, w], |i| 0.3 * (i / w) as f64 - 1.7 * (i % w) as f64 + 0.25);
    let up = kernels::resize_bilinear(&x, 2 * h, 2 * w).unwrap();
    for r in 1..2 * h - 1 {
        for q in 1..2 * w - 1 {
            let (sy, sx) = ((r as f64 + 0.5) / 2.0 - 0.5, (q as f64 + 0.5) / 2.0 - 0.5);
            let want = 0.3 * sy - 1.7 * sx + 0.25;
            assert!((up.data()[r * 2 * w + q] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn resize_is_shift_covariant() {
    let x = Tensor::<f64>::from_fn(&[1, 1, 16], |i| ((i * 5) % 11) as f64);
    let shifted = Tensor::<f64>::from_fn(&[1, 1, 16], |i| if i >= 4 { x.data()[i - 4] } else { 0.0 });
    let a = kernels::resize_bilinear(&x, 1, 8).unwrap();
    let b = kernels::resize_bilinear(&shifted, 1, 8).unwrap();
    for q in 3..8 {
        assert!((b.data()[q] - a.data()[q - 2]).abs() < 1e-12);
    }
}

#[test]
fn resize_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[3, 5, 4], &mut rng);
    for (oh, ow) in [(9, 7), (2, 3), (1, 1)] {
        let w = weights_for(&[3, oh, ow], 9);
        let mut tape = Tape::<f64>::new();
        let xv = tape.param(x.clone());
        let y = tape.resize_bilinear(xv, oh, ow).unwrap();
        let loss = project(&mut tape, y, &w);
        tape.backward(loss).unwrap();
        let f = |xx: &Tensor<f64>| dot(&kernels::resize_bilinear(xx, oh, ow).unwrap(), &w);
        assert!(max_rel_err(tape.grad(xv).unwrap().data(), &numeric_grad(&x, 1e-3, &f)) < 1e-3);
    }
}

#[test]
fn pointwise_values() {
    let sa = Pointwise::ScaleAdd { scale: 25.0, bias: 100.0 };
    assert_eq!(kernels::pointwise_value(0.0f64, sa), 100.0);
    assert_eq!(kernels::pointwise_value(-3.0f64, Pointwise::Relu), 0.0);
    assert_eq!(kernels::pointwise_value(0.0f64, Pointwise::Sigmoid), 0.5);
    assert_eq!(kernels::pointwise_value(-2.0f64, Pointwise::MaxZeroNeg), 2.0);
    assert_eq!(kernels::pointwise_value(2.0f64, Pointwise::MaxZeroNeg), 0.0);
}

#[test]
fn pointwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    // Keep samples away from the kinks so the central difference is smooth.
    let x = Tensor::from_fn(&[2, 3, 3], |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let w = weights_for(&[2, 3, 3], 11);
    for kind in [
        Pointwise::Relu,
        Pointwise::LeakyRelu(0.2),
        Pointwise::Sigmoid,
        Pointwise::ScaleAdd { scale: 25.0, bias: 100.0 },
        Pointwise::MaxZeroNeg,
    ] {
        let mut tape = Tape::<f64>::new();
        let xv = tape.param(x.clone());
        let y = tape.pointwise(xv, kind);
        let loss = project(&mut tape, y, &w);
        tape.backward(loss).unwrap();
        let f = |xx: &Tensor<f64>| dot(&kernels::pointwise(xx, kind), &w);
        let err = max_rel_err(tape.grad(xv).unwrap().data(), &numeric_grad(&x, 1e-5, &f));
        assert!(err < 1e-3, "{kind:?}: {err}");
    }
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut tape = Tape::<f64>::new();
    let xv = tape.param(Tensor::scalar(0.0));
    let y = tape.relu(xv);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(xv).unwrap().data(), &[0.0]);
}

#[test]
fn fan_out_accumulates() {
    // f(x) = sum(sigmoid(x) * x + concat-slice(x)) uses x three times.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[2, 3, 3], &mut rng);
    let build = |tape: &mut Tape<f64>, xv: Var| {
        let s = tape.sigmoid(xv);
        let p = tape.mul(s, xv).unwrap();
        let c = tape.concat(&[xv, p]).unwrap();
        let sl = tape.slice_channels(c, 1, 2).unwrap();
        let q = tape.weighted_sum(&[(sl, vec![2.0, -0.5]), (xv, vec![0.3])]).unwrap();
        tape.sum(q)
    };
    let mut tape = Tape::<f64>::new();
    let xv = tape.param(x.clone());
    let loss = build(&mut tape, xv);
    tape.backward(loss).unwrap();
    let f = |xx: &Tensor<f64>| {
        let mut t = Tape::<f64>::new();
        let v = t.constant(xx.clone());
        let l = build(&mut t, v);
        t.value(l).data()[0]
    };
    let err = max_rel_err(tape.grad(xv).unwrap().data(), &numeric_grad(&x, 1e-5, &f));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::zeros(&[2]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn same_graph_twice_is_bitwise_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x: Tensor<f32> = Tensor::from_fn(&[3, 8, 8], |_| rng.gen_range(-1.0..1.0));
        let k: Tensor<f32> = kaiming_uniform(&[4, 3, 3, 3], &mut rng);
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x);
        let kv = tape.param(k);
        let y = tape.conv2d(xv, kv, None, 1, 1).unwrap();
        let r = tape.resize_bilinear(y, 5, 5).unwrap();
        let a = tape.sigmoid(r);
        let l = tape.sum(a);
        tape.backward(l).unwrap();
        (tape.value(a).clone(), tape.grad(kv).unwrap().clone())
    };
    let (a1, g1) = run();
    let (a2, g2) = run();
    assert_eq!(a1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(g1, g2);
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut p = ParamStore::<f32>::new();
    p.insert("w", Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
    let before = p.clone();
    let mut state = AdamState::new();
    for _ in 0..5 {
        adam_step(&mut p, &[("w".into(), Tensor::zeros(&[3]))], &mut state, &AdamConfig::default()).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn adam_default_lr() {
    assert_eq!(AdamConfig::default().lr, 0.001);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = ParamStore::<f64>::new();
    p.insert("x", Tensor::scalar(1.0));
    let mut state = AdamState::new();
    let cfg = AdamConfig::default();
    adam_step(&mut p, &[("x".into(), Tensor::scalar(1.0))], &mut state, &cfg).unwrap();
    // m_hat = v_hat = 1, so the step is lr / (1 + eps).
    let expected = 1.0 - cfg.lr / (1.0 + cfg.eps);
    assert!((p.get("x").unwrap().data()[0] - expected).abs() < 1e-15);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut p = ParamStore::<f32>::new();
    p.insert("dec.2.weight", Tensor::zeros(&[2]));
    let mut state = AdamState::new();
    let err = adam_step(
        &mut p,
        &[("dec.2.weight".into(), Tensor::new(&[2], vec![1.0, f32::NAN]).unwrap())],
        &mut state,
        &AdamConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("dec.2.weight"));
    assert_eq!(state.step, 0);
}
