//! Finite-difference verification for every layer, plus the dropout and
//! max-pool contracts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use tabula_ndiff::*;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha12Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn check<F>(build: F, inputs: &[Tensor]) -> f32
where
    F: Fn(&[Var]) -> Var,
{
    finite_diff_check(build, inputs, 1e-3)
}

#[test]
fn linear_layer_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    for _ in 0..20 {
        let m = rng.gen_range(1..5);
        let k = rng.gen_range(1..6);
        let n = rng.gen_range(1..5);
        let inputs = vec![
            rand_tensor(&[m, k], &mut rng),
            rand_tensor(&[k, n], &mut rng),
            rand_tensor(&[n], &mut rng),
        ];
        let err = check(|v| mean_all(&square(&linear(&v[0], &v[1], Some(&v[2])))), &inputs);
        assert!(err < 1e-3, "linear err {err}");
    }
}

#[test]
fn linear_identity_passthrough() {
    let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.5]);
    let mut w = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        w.data_mut()[i * 3 + i] = 1.0;
    }
    let y = linear(&Var::leaf(x.clone()), &Var::leaf(w), Some(&Var::leaf(Tensor::zeros(&[3]))));
    assert_eq!(y.value(), &x);
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    for _ in 0..20 {
        let n = rng.gen_range(1..12);
        let x = rand_tensor(&[n], &mut rng);
        // Keep ReLU inputs away from the kink.
        let x_relu = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let err = check(|v| mean_all(&square(&relu(&v[0]))), &[x_relu]);
        assert!(err < 1e-3, "relu err {err}");
        let err = check(|v| mean_all(&square(&mish(&v[0]))), &[x.clone()]);
        assert!(err < 1e-3, "mish err {err}");
        let err = check(|v| mean_all(&square(&tanh(&v[0]))), &[x.clone()]);
        assert!(err < 1e-3, "tanh err {err}");
        let err = check(|v| mean_all(&square(&softplus(&v[0]))), &[x.clone()]);
        assert!(err < 1e-3, "softplus err {err}");
    }
}

#[test]
fn elementwise_op_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.gen_range(1..10);
        let a = rand_tensor(&[n], &mut rng);
        let b = rand_tensor(&[n], &mut rng);
        let err = check(|v| mean_all(&square(&mul(&v[0], &v[1]))), &[a.clone(), b.clone()]);
        assert!(err < 1e-3, "mul err {err}");
        let err = check(|v| mean_all(&square(&sub(&v[0], &v[1]))), &[a.clone(), b.clone()]);
        assert!(err < 1e-3, "sub err {err}");
        let err = check(|v| mean_all(&square(&add(&v[0], &v[1]))), &[a, b]);
        assert!(err < 1e-3, "add err {err}");
        break;
    }
}

#[test]
fn embedding_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    for _ in 0..20 {
        let v = rng.gen_range(2..6);
        let e = rng.gen_range(1..5);
        let table = rand_tensor(&[v, e], &mut rng);
        let idx: Vec<usize> = (0..3).map(|_| rng.gen_range(0..v)).collect();
        let idx2 = idx.clone();
        let err = check(move |vars| mean_all(&square(&embedding(&vars[0], &idx2))), &[table]);
        assert!(err < 1e-3, "embedding err {err}");
    }
}

#[test]
fn concat_and_slice_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    for _ in 0..20 {
        let m = rng.gen_range(1..4);
        let a = rand_tensor(&[m, 3], &mut rng);
        let b = rand_tensor(&[m, 2], &mut rng);
        let err = check(
            |v| mean_all(&square(&concat_cols(&[v[0].clone(), v[1].clone()]))),
            &[a.clone(), b.clone()],
        );
        assert!(err < 1e-3, "concat err {err}");
        let err = check(|v| mean_all(&square(&slice_cols(&v[0], 1, 3))), &[a]);
        assert!(err < 1e-3, "slice err {err}");
    }
}

#[test]
fn maxpool_gradients_and_permutation_invariance() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    for _ in 0..20 {
        let group = rng.gen_range(2..6);
        let b = rng.gen_range(1..3);
        let c = rng.gen_range(1..5);
        let x = rand_tensor(&[b * group, c], &mut rng);
        let err = check(move |v| mean_all(&square(&maxpool_rows(&v[0], group))), &[x.clone()]);
        assert!(err < 1e-3, "maxpool err {err}");

        // Shuffle rows within each group: pooled output must be identical.
        let mut perm_rows: Vec<Vec<f32>> = vec![];
        for g in 0..b {
            let mut rows: Vec<Vec<f32>> = (0..group)
                .map(|r| x.data()[(g * group + r) * c..(g * group + r + 1) * c].to_vec())
                .collect();
            for i in (1..rows.len()).rev() {
                let j = rng.gen_range(0..=i);
                rows.swap(i, j);
            }
            perm_rows.extend(rows);
        }
        let shuffled = Tensor::from_vec(&[b * group, c], perm_rows.concat());
        let a = maxpool_rows(&Var::leaf(x), group);
        let p = maxpool_rows(&Var::leaf(shuffled), group);
        assert_eq!(a.value(), p.value(), "max-pool must be permutation invariant");
    }
}

#[test]
fn film_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for _ in 0..20 {
        let b = rng.gen_range(1..3);
        let t = rng.gen_range(1..4);
        let c = rng.gen_range(1..5);
        let inputs = vec![
            rand_tensor(&[b * t, c], &mut rng),
            rand_tensor(&[b, c], &mut rng),
            rand_tensor(&[b, c], &mut rng),
        ];
        let err = check(
            move |v| mean_all(&square(&film_rows(&v[0], &v[1], &v[2], t))),
            &inputs,
        );
        assert!(err < 1e-3, "film err {err}");
    }
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    for _ in 0..20 {
        let b = rng.gen_range(1..3);
        let t = rng.gen_range(3..7);
        let cin = rng.gen_range(1..4);
        let cout = rng.gen_range(1..4);
        let k = 3;
        let stride = if rng.gen_bool(0.5) { 1 } else { 2 };
        let pad = 1;
        let inputs = vec![
            rand_tensor(&[b * t, cin], &mut rng),
            rand_tensor(&[k * cin, cout], &mut rng),
            rand_tensor(&[cout], &mut rng),
        ];
        let err = check(
            move |v| {
                mean_all(&square(&conv1d_rows(&v[0], &v[1], &v[2], b, t, k, stride, pad)))
            },
            &inputs,
        );
        assert!(err < 1e-3, "conv err {err} (b={b} t={t} cin={cin} cout={cout} stride={stride})");
    }
}

#[test]
fn upsample_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    for _ in 0..20 {
        let b = rng.gen_range(1..3);
        let t = rng.gen_range(1..5);
        let c = rng.gen_range(1..4);
        let x = rand_tensor(&[b * t, c], &mut rng);
        let err = check(move |v| mean_all(&square(&upsample2_rows(&v[0], b, t))), &[x]);
        assert!(err < 1e-3, "upsample err {err}");
    }
}

#[test]
fn scale_rows_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    for _ in 0..20 {
        let m = rng.gen_range(1..5);
        let n = rng.gen_range(1..5);
        let x = rand_tensor(&[m, n], &mut rng);
        let w: Vec<f32> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = check(move |v| mean_all(&square(&scale_rows(&v[0], &w))), &[x]);
        assert!(err < 1e-3, "scale_rows err {err}");
    }
}

#[test]
fn dropout_eval_is_identity_and_train_preserves_mean() {
    let x = Tensor::full(&[1000], 1.0);
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let eval = dropout(&Var::leaf(x.clone()), 0.3, false, &mut rng);
    assert_eq!(eval.value(), &x);

    // Inverted scaling: E[output] == input over many draws.
    let mut total = 0.0f64;
    let n_draws = 100;
    for _ in 0..n_draws {
        let out = dropout(&Var::leaf(x.clone()), 0.3, true, &mut rng);
        total += out.value().data().iter().map(|&v| v as f64).sum::<f64>();
    }
    let mean = total / (n_draws as f64 * 1000.0);
    assert!((mean - 1.0).abs() < 0.01, "dropout mean {mean}");
}

#[test]
fn dropout_gradient_matches_mask() {
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let x = Tensor::full(&[50], 0.5);
    let leaf = Var::leaf(x);
    let y = dropout(&leaf, 0.4, true, &mut rng);
    let loss = sum_all(&y);
    let grads = backward(&loss);
    let g = grads.get(&leaf).unwrap();
    for (gv, yv) in g.data().iter().zip(y.value().data()) {
        if *yv == 0.0 {
            assert_eq!(*gv, 0.0);
        } else {
            assert!((gv - 1.0 / 0.6).abs() < 1e-6);
        }
    }
}

#[test]
fn training_graph_determinism() {
    // Same seed, same data, same order: identical parameters after updates.
    let run = || {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let mut ps = ParamSet::new();
        ps.insert("w", init_linear(&[4, 2], &mut rng));
        ps.insert("b", Tensor::zeros(&[2]));
        let mut drop_rng = ChaCha12Rng::seed_from_u64(7);
        for i in 0..50 {
            let x = Tensor::uniform(&[3, 4], 1.0, &mut rng);
            let target = Tensor::uniform(&[3, 2], 1.0, &mut rng);
            let mut binder = Binder::new(&ps);
            let w = binder.leaf("w");
            let b = binder.leaf("b");
            let h = dropout(&linear(&Var::leaf(x), &w, Some(&b)), 0.1, true, &mut drop_rng);
            let loss = mse(&h, &Var::leaf(target));
            let grads = backward(&loss);
            ps.adam_step(&binder.collect(&grads), &AdamConfig::default()).unwrap();
            let _ = i;
        }
        params_digest(&ps)
    };
    assert_eq!(run(), run());
}
