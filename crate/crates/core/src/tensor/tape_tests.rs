use super::*;
use crate::rng::Stream;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut s = Stream::new(seed, "tensor-test", 0);
    Tensor::from_fn(shape, |_| s.uniform_in(-1.0, 1.0))
}

/// `sum(out * w)` for fixed random `w`, so every output element carries a
/// distinct upstream gradient.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let w = tape.input(random(tape.value(out).shape(), seed));
    let m = tape.mul(out, w).unwrap();
    tape.sum_all(m)
}

type Build<'a> = &'a dyn Fn(&mut Tape, &ParamStore, &[Var]) -> Var;

/// Central differences over every parameter and input element.
fn fd_check(store: &mut ParamStore, inputs: &[Tensor], build: Build, tol: f64) {
    let h = 1e-5;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.watch(t.clone())).collect();
    let loss = build(&mut tape, store, &vars);
    store.zero_grads();
    let grads = tape.backward(loss, store, |_| true).unwrap();

    let eval = |store: &ParamStore, inputs: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
        let l = build(&mut t, store, &vs);
        t.value(l).item()
    };
    let close = |a: f64, n: f64, what: &str| {
        assert!(
            (a - n).abs() <= tol * a.abs().max(n.abs()) + 1e-8,
            "{what}: analytic {a} vs numeric {n}"
        );
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = store.get(id).grad.clone();
        for i in 0..analytic.len() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let up = eval(store, inputs);
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let down = eval(store, inputs);
            store.get_mut(id).value.data_mut()[i] = orig;
            let tag = store.get(id).tag.clone();
            close(
                analytic.data()[i],
                (up - down) / (2.0 * h),
                &format!("{tag}[{i}]"),
            );
        }
    }
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("watched input gradient");
        let mut xs = inputs.to_vec();
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let up = eval(store, &xs);
            xs[k].data_mut()[i] = orig - h;
            let down = eval(store, &xs);
            xs[k].data_mut()[i] = orig;
            close(
                analytic.data()[i],
                (up - down) / (2.0 * h),
                &format!("input{k}[{i}]"),
            );
        }
    }
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.input(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let p = t.softmax(x);
    for v in t.value(p).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = t.input(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
    let p = t.softmax(x);
    let d = t.value(p).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert_eq!(d[0], 1.0);
    assert!(d[1] < 1e-300);
}

#[test]
fn identity_matmul() {
    let mut t = Tape::new();
    let a = random(&[2, 3, 4], 1);
    let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    let (av, iv) = (t.input(a.clone()), t.input(eye));
    let out = t.matmul(av, iv).unwrap();
    assert_eq!(t.value(out), &a);
}

#[test]
fn shape_mismatches_are_errors() {
    let mut t = Tape::new();
    let a = t.input(Tensor::zeros(&[2, 3]));
    let b = t.input(Tensor::zeros(&[4, 2]));
    assert!(matches!(t.matmul(a, b), Err(Error::Shape(_))));
    assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
    let img = t.input(Tensor::zeros(&[1, 2, 3, 3]));
    let k = t.input(Tensor::zeros(&[1, 3, 3, 3]));
    let bias = t.input(Tensor::zeros(&[1]));
    assert!(matches!(t.conv2d(img, k, bias), Err(Error::Shape(_))));
    assert!(matches!(t.split_heads(a, 2), Err(Error::Shape(_))));
}

fn conv_oracle(x: &Tensor, k: &Tensor, b: &[f64]) -> Vec<f64> {
    let (bs, ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, ks) = (k.shape()[0], k.shape()[2]);
    let half = (ks / 2) as isize;
    let refl = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let mut out = vec![0.0; bs * co * h * w];
    for n in 0..bs {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let sy = refl(y as isize + ky as isize - half, h);
                                let sx = refl(xx as isize + kx as isize - half, w);
                                acc += k.data()[((o * ci + c) * ks + ky) * ks + kx]
                                    * x.data()[((n * ci + c) * h + sy) * w + sx];
                            }
                        }
                    }
                    out[((n * co + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_loop_oracle() {
    let x = random(&[2, 3, 5, 4], 2);
    let k = random(&[4, 3, 3, 3], 3);
    let b = random(&[4], 4);
    let mut t = Tape::new();
    let (xv, kv, bv) = (t.input(x.clone()), t.input(k.clone()), t.input(b.clone()));
    let out = t.conv2d(xv, kv, bv).unwrap();
    let want = conv_oracle(&x, &k, b.data());
    for (a, e) in t.value(out).data().iter().zip(&want) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn pointwise_conv_is_channel_matmul() {
    let x = random(&[1, 3, 2, 2], 5);
    let k = random(&[2, 3, 1, 1], 6);
    let mut t = Tape::new();
    let (xv, kv) = (t.input(x.clone()), t.input(k.clone()));
    let zero = t.input(Tensor::zeros(&[2]));
    let out = t.conv2d(xv, kv, zero).unwrap();
    for o in 0..2 {
        for p in 0..4 {
            let e: f64 = (0..3)
                .map(|c| k.data()[o * 3 + c] * x.data()[c * 4 + p])
                .sum();
            assert!((t.value(out).data()[o * 4 + p] - e).abs() < 1e-14);
        }
    }
}

#[test]
fn delta_kernel_is_identity() {
    let x = random(&[1, 1, 4, 4], 7);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let mut t = Tape::new();
    let (xv, kv) = (t.input(x.clone()), t.input(k));
    let zero = t.input(Tensor::zeros(&[1]));
    let out = t.conv2d(xv, kv, zero).unwrap();
    assert_eq!(t.value(out).data(), x.data());
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::new();
    let x = t.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let g = t.input(Tensor::full(&[3], 1.0));
    let b = t.input(Tensor::zeros(&[3]));
    let y = t.layer_norm(x, g, b).unwrap();
    let want = [-1.224_74, 0.0, 1.224_74];
    for (a, e) in t.value(y).data().iter().zip(want) {
        assert!((a - e).abs() < 1e-4, "{a} vs {e}");
    }
    let g0 = t.input(Tensor::zeros(&[3]));
    let beta = t.input(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
    let y = t.layer_norm(x, g0, beta).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, -1.0, 2.0]);
}

#[test]
fn scaling_by_power_of_two_is_exact() {
    let a = random(&[3, 4], 8);
    let w = random(&[4, 2], 9);
    let mut t = Tape::new();
    let (av, wv) = (t.input(a.clone()), t.input(w.clone()));
    let base = t.matmul(av, wv).unwrap();
    let a4 = t.input(Tensor::from_fn(&[3, 4], |i| a.data()[i] * 4.0));
    let scaled = t.matmul(a4, wv).unwrap();
    for (x, y) in t.value(base).data().iter().zip(t.value(scaled).data()) {
        assert_eq!(x * 4.0, *y);
    }
}

#[test]
fn fd_elementwise_and_reductions() {
    let mut store = ParamStore::new();
    let inputs = [random(&[2, 3], 10), random(&[2, 3], 11)];
    fd_check(
        &mut store,
        &inputs,
        &|t, _, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            let r = t.relu(m);
            let sc = t.scale(r, 0.7);
            let sl = t.sum_last(sc);
            let w = t.input(random(&[2], 12));
            let p = t.mul(sl, w).unwrap();
            t.mean_all(p)
        },
        1e-6,
    );
}

#[test]
fn fd_softmax_and_log() {
    let mut store = ParamStore::new();
    let inputs = [random(&[3, 4], 13)];
    fd_check(
        &mut store,
        &inputs,
        &|t, _, v| {
            let p = t.softmax(v[0]);
            let l = t.ln_clamped(p, 1e-12);
            project(t, l, 14)
        },
        1e-6,
    );
}

#[test]
fn ln_clamp_blocks_gradient_below_floor() {
    let mut t = Tape::new();
    let x = t.watch(Tensor::new(vec![2], vec![0.0, 0.5]).unwrap());
    let l = t.ln_clamped(x, 1e-12);
    let s = t.sum_all(l);
    assert_eq!(t.value(s).item(), 1e-12f64.ln() + 0.5f64.ln());
    let g = t.backward(s, &mut ParamStore::new(), |_| true).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 2.0]);
}

#[test]
fn fd_matmul_bias_concat() {
    let mut store = ParamStore::new();
    let w = store.add("w", random(&[4, 3], 15));
    let b = store.add("b", random(&[3], 16));
    let inputs = [random(&[2, 2, 4], 17)];
    fd_check(
        &mut store,
        &inputs,
        &|t, s, v| {
            let (wv, bv) = (t.param(s, w), t.param(s, b));
            let y = t.matmul(v[0], wv).unwrap();
            let y = t.add_bias(y, bv).unwrap();
            let c = t.concat_last(&[y, v[0]]).unwrap();
            project(t, c, 18)
        },
        1e-6,
    );
}

#[test]
fn fd_conv() {
    let mut store = ParamStore::new();
    let k = store.add("k", random(&[2, 3, 3, 3], 19));
    let b = store.add("b", random(&[2], 20));
    let inputs = [random(&[2, 3, 3, 4], 21)];
    fd_check(
        &mut store,
        &inputs,
        &|t, s, v| {
            let (kv, bv) = (t.param(s, k), t.param(s, b));
            let y = t.conv2d(v[0], kv, bv).unwrap();
            let tok = t.to_tokens(y).unwrap();
            project(t, tok, 22)
        },
        1e-6,
    );
}

#[test]
fn fd_layer_norm() {
    let mut store = ParamStore::new();
    let g = store.add("ln.gamma", random(&[5], 23));
    let b = store.add("ln.beta", random(&[5], 24));
    let inputs = [random(&[3, 5], 25)];
    fd_check(
        &mut store,
        &inputs,
        &|t, s, v| {
            let (gv, bv) = (t.param(s, g), t.param(s, b));
            let y = t.layer_norm(v[0], gv, bv).unwrap();
            project(t, y, 26)
        },
        1e-5,
    );
}

#[test]
fn fd_attention_plumbing() {
    let mut store = ParamStore::new();
    let pos = store.add("pos", random(&[3, 4], 27));
    let inputs = [random(&[2, 3, 4], 28), random(&[2, 3, 4], 29)];
    fd_check(
        &mut store,
        &inputs,
        &|t, s, v| {
            let pv = t.param(s, pos);
            let x = t.add_positional(v[0], pv).unwrap();
            let q = t.split_heads(x, 2).unwrap();
            let k = t.split_heads(v[1], 2).unwrap();
            let scores = t.batch_matmul(q, k, true).unwrap();
            let a = t.softmax(scores);
            let o = t.batch_matmul(a, k, false).unwrap();
            let m = t.merge_heads(o, 2).unwrap();
            let c = t.select_token(m, 1).unwrap();
            let r = t.select_rows(c, &[1, 0, 1]).unwrap();
            project(t, r, 30)
        },
        1e-6,
    );
}

#[test]
fn split_then_merge_round_trips() {
    let x = random(&[2, 3, 6], 31);
    let mut t = Tape::new();
    let v = t.input(x.clone());
    let s = t.split_heads(v, 3).unwrap();
    assert_eq!(t.value(s).shape(), &[6, 3, 2]);
    let m = t.merge_heads(s, 3).unwrap();
    assert_eq!(t.value(m), &x);
}

#[test]
fn filter_leaves_excluded_parameters_untouched() {
    let mut store = ParamStore::new();
    let w = store.add("lin.w", random(&[3, 3], 32));
    let g = store.add("ln.gamma", Tensor::full(&[3], 1.0));
    let b = store.add("ln.beta", Tensor::zeros(&[3]));
    let mut t = Tape::new();
    let x = t.input(random(&[2, 3], 33));
    let (wv, gv, bv) = (t.param(&store, w), t.param(&store, g), t.param(&store, b));
    let y = t.matmul(x, wv).unwrap();
    let y = t.layer_norm(y, gv, bv).unwrap();
    let loss = project(&mut t, y, 34);
    t.backward(loss, &mut store, |p| p.is_layer_norm_affine())
        .unwrap();
    assert!(store.get(w).grad.data().iter().all(|&v| v == 0.0));
    assert!(store.get(g).grad.data().iter().any(|&v| v != 0.0));
    assert!(store.get(b).grad.data().iter().any(|&v| v != 0.0));
}

#[test]
fn gradients_accumulate_across_tapes() {
    let mut store = ParamStore::new();
    let w = store.add("w", random(&[2], 35));
    let mut once = Vec::new();
    for round in 0..2 {
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let l = project(&mut t, wv, 36);
        t.backward(l, &mut store, |_| true).unwrap();
        if round == 0 {
            once = store.get(w).grad.data().to_vec();
        }
    }
    let twice: Vec<f64> = once.iter().map(|v| v * 2.0).collect();
    assert_eq!(store.get(w).grad.data(), &twice[..]);
}

#[test]
fn second_backward_is_stale() {
    let mut store = ParamStore::new();
    let mut t = Tape::new();
    let x = t.watch(Tensor::scalar(2.0));
    let y = t.mul(x, x).unwrap();
    let g = t.backward(y, &mut store, |_| true).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 4.0);
    assert!(matches!(
        t.backward(y, &mut store, |_| true),
        Err(Error::StaleTape)
    ));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut t = Tape::new();
    let x = t.watch(Tensor::zeros(&[2]));
    assert!(matches!(
        t.backward(x, &mut ParamStore::new(), |_| true),
        Err(Error::Shape(_))
    ));
}
