use numkit::{
    compare_gradients, grad_check, Activation, AdamConfig, AdamState, Graph, NumError, ParamStore,
    Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_hand_cases() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::identity(2));
    let x = g.constant(t(2, 1, &[3.0, 4.0]));
    let y = g.matmul(i2, x).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 4.0]);

    let a = g.constant(t(1, 2, &[1.0, 2.0]));
    let b = g.constant(t(2, 1, &[3.0, 4.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Small, skinny and packed kernel paths.
    for (m, k, n) in [(5, 7, 3), (1, 9, 40), (40, 30, 50), (64, 64, 64)] {
        let a = Tensor::randn(&[m, k], 1.0, &mut rng);
        let b = Tensor::randn(&[k, n], 1.0, &mut rng);
        let mut expect = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    expect[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        for (x, y) in g.value(c).data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // a · (bᵀ)ᵀ through the transposed path
        let bt: Vec<f64> = (0..n)
            .flat_map(|j| (0..k).map(move |p| (j, p)))
            .map(|(j, p)| b.data()[p * n + j])
            .collect();
        let vbt = g.constant(t(n, k, &bt));
        let c2 = g.matmul_t(va, vbt).unwrap();
        for (x, y) in g.value(c2).data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn packed_matmul_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ins = [Tensor::randn(&[24, 40], 0.3, &mut rng), Tensor::randn(&[40, 36], 0.3, &mut rng)];
    let f = |g: &mut Graph, v: &[numkit::Var]| {
        let y = g.matmul(v[0], v[1])?;
        let y = g.tanh(y)?;
        Ok(g.sum(y))
    };
    let r = grad_check(f, &ins, 1e-4).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn matmul_shape_error_names_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(NumError::Dimension { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn tanh_agrees_with_libm() {
    for i in -4000..=4000 {
        let x = i as f64 * 0.01 + 1e-7;
        let (a, b) = (numkit::tanh(x), x.tanh());
        assert!((a - b).abs() <= 4.0 * f64::EPSILON, "{x}: {a} vs {b}");
    }
    assert_eq!(numkit::tanh(800.0), 1.0);
    assert_eq!(numkit::tanh(-800.0), -1.0);
    assert_eq!(numkit::tanh(-0.0).to_bits(), (-0.0f64).to_bits());
}

#[test]
fn activations() {
    let mut g = Graph::new();
    let x = g.constant(t(1, 2, &[0.0, 0.0]));
    let s = g.softmax(x).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    let th = g.tanh(x).unwrap();
    assert_eq!(g.value(th).data(), &[0.0, 0.0]);

    let x = g.constant(t(1, 3, &[1.0, 2.0, 3.0]));
    let s = g.softmax(x).unwrap();
    // 40-digit reference values
    let expect = [
        0.090_030_573_170_380_457_998,
        0.244_728_471_054_797_652_473,
        0.665_240_955_774_821_889_529,
    ];
    for (a, b) in g.value(s).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }

    let bad = g.constant(t(1, 2, &[f64::NAN, 0.0]));
    assert!(matches!(
        g.activation(bad, Activation::Tanh),
        Err(NumError::NumericDomain(_))
    ));
}

#[test]
fn lookup_cases() {
    let mut g = Graph::new();
    let table = g.leaf(Tensor::identity(4), true);
    let r = g.lookup(table, &[2]).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 1.0, 0.0]);
    assert!(matches!(
        g.lookup(table, &[4]),
        Err(NumError::Vocabulary { id: 4, size: 4 })
    ));

    // repeated ids accumulate both row gradients
    let mut g = Graph::new();
    let table = g.leaf(Tensor::identity(3), true);
    let r = g.lookup(table, &[1, 1]).unwrap();
    let w = g.constant(t(2, 3, &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]));
    let p = g.mul(r, w).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    let grad = g.grad(table).unwrap();
    assert_eq!(&grad[3..6], &[11.0, 22.0, 33.0]);
    assert_eq!(&grad[0..3], &[0.0; 3]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tab = Tensor::randn(&[6, 4], 1.0, &mut rng);
    let ids = [5, 0, 3, 3];
    let mut g = Graph::new();
    let v = g.constant(tab.clone());
    let r = g.lookup(v, &ids).unwrap();
    for (i, &id) in ids.iter().enumerate() {
        assert_eq!(g.value(r).row(i), tab.row(id));
    }
}

#[test]
fn cross_entropy_cases() {
    let mut g = Graph::new();
    let l = g.constant(t(1, 3, &[0.0, 800.0, 0.0]));
    let ce = g.cross_entropy(l, &[1], &[1.0]).unwrap();
    assert!(g.value(ce).item() < 1e-12);

    let l = g.constant(Tensor::zeros(&[1, 7]));
    let ce = g.cross_entropy(l, &[4], &[1.0]).unwrap();
    assert!((g.value(ce).item() - 7f64.ln()).abs() < 1e-14);

    assert!(matches!(
        g.cross_entropy(l, &[4], &[-0.5]),
        Err(NumError::Contract(_))
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits = Tensor::randn(&[4, 5], 2.0, &mut rng);
    let targets = [0, 4, 2, 2];
    let weights = [1.0, 0.25, 0.0, 3.0];
    let mut oracle = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let row = logits.row(i);
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        let p = row[y].exp() / z;
        oracle += weights[i] * -p.ln();
    }
    let mut g = Graph::new();
    let v = g.constant(logits);
    let ce = g.cross_entropy(v, &targets, &weights).unwrap();
    assert!((g.value(ce).item() - oracle).abs() < 1e-10);
}

#[test]
fn backward_basic_properties() {
    let mut g = Graph::new();
    let x = g.leaf(t(1, 3, &[1.0, -2.0, 0.5]), true);
    let unused = g.leaf(t(1, 2, &[1.0, 1.0]), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
    assert!(g.grad(unused).map_or(true, |v| v.iter().all(|x| *x == 0.0)));

    // accumulates without reset
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, -8.0, 2.0]);

    // non-scalar loss
    assert!(matches!(g.backward(sq), Err(NumError::Contract(_))));
}

fn composite_loss(g: &mut Graph, v: &[numkit::Var]) -> numkit::Result<numkit::Var> {
    let h = g.matmul(v[0], v[1])?;
    let h = g.tanh(h)?;
    let logits = g.matmul(h, v[2])?;
    g.cross_entropy(logits, &[1, 0, 3], &[1.0, 0.5, 2.0])
}

#[test]
fn backward_determinism_after_reset() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ins = [
        Tensor::randn(&[3, 4], 1.0, &mut rng),
        Tensor::randn(&[4, 5], 1.0, &mut rng),
        Tensor::randn(&[5, 4], 1.0, &mut rng),
    ];
    let mut g = Graph::new();
    let vars: Vec<_> = ins.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let loss = composite_loss(&mut g, &vars).unwrap();
    g.backward(loss).unwrap();
    let first: Vec<Vec<f64>> = vars.iter().map(|v| g.grad(*v).unwrap().to_vec()).collect();
    g.zero_grad();
    g.backward(loss).unwrap();
    for (v, f) in vars.iter().zip(&first) {
        let again = g.grad(*v).unwrap();
        assert!(again.iter().zip(f).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn composite_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ins = [
            Tensor::randn(&[3, 4], 1.0, &mut rng),
            Tensor::randn(&[4, 5], 1.0, &mut rng),
            Tensor::randn(&[5, 4], 1.0, &mut rng),
        ];
        let r = grad_check(composite_loss, &ins, 1e-4).unwrap();
        assert!(r.passed(), "seed {seed}: {r:?}");
    }
}

#[test]
fn grad_check_tanh_and_negative_control() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
    let f = |g: &mut Graph, v: &[numkit::Var]| {
        let y = g.tanh(v[0])?;
        Ok(g.sum(y))
    };
    let r = grad_check(f, &[x.clone()], 1e-4).unwrap();
    assert!(r.passed(), "{r:?}");

    let wrong: Vec<f64> = x.data().iter().map(|v| 2.0 * (1.0 - v.tanh().powi(2))).collect();
    let value = |xs: &[Tensor]| xs[0].data().iter().map(|v| v.tanh()).sum::<f64>();
    let r = compare_gradients(value, &[x], &[wrong], 1e-4);
    assert!(!r.passed());

    let logits = Tensor::randn(&[3, 6], 1.0, &mut rng);
    let f = |g: &mut Graph, v: &[numkit::Var]| {
        let p = g.softmax(v[0])?;
        let w = g.scale(p, 3.0);
        g.cross_entropy(w, &[0, 5, 2], &[1.0, 1.0, 0.5])
    };
    let r = grad_check(f, &[logits], 1e-4).unwrap();
    assert!(r.passed(), "{r:?}");
}

/// Every op, 20 random instances each.
#[test]
fn every_op_passes_gradient_check() {
    type Builder = fn(&mut Graph, &[numkit::Var]) -> numkit::Result<numkit::Var>;
    let cases: Vec<(&str, Vec<Vec<usize>>, Builder)> = vec![
        ("matmul", vec![vec![2, 3], vec![3, 4]], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let y = g.tanh(y)?;
            Ok(g.sum(y))
        }),
        ("matmul_t", vec![vec![2, 3], vec![4, 3]], |g, v| {
            let y = g.matmul_t(v[0], v[1])?;
            let y = g.tanh(y)?;
            Ok(g.sum(y))
        }),
        ("add_row_mul", vec![vec![3, 2], vec![1, 2], vec![3, 2]], |g, v| {
            let y = g.add_row(v[0], v[1])?;
            let y = g.mul(y, v[2])?;
            let y = g.tanh(y)?;
            Ok(g.sum(y))
        }),
        ("sigmoid_scale", vec![vec![2, 3], vec![1]], |g, v| {
            let y = g.sigmoid(v[0])?;
            let y = g.scale_by(y, v[1])?;
            let y = g.mul(y, y)?;
            Ok(g.sum(y))
        }),
        ("softmax", vec![vec![2, 4], vec![2, 4]], |g, v| {
            let y = g.softmax(v[0])?;
            let y = g.mul(y, v[1])?;
            Ok(g.sum(y))
        }),
        ("slice_concat", vec![vec![2, 5], vec![2, 2]], |g, v| {
            let a = g.slice_cols(v[0], 1, 3)?;
            let a = g.slice_rows(a, 1, 1)?;
            let a = g.repeat_rows(a, 2);
            let c = g.concat_cols(&[v[1], a])?;
            let c = g.tanh(c)?;
            let c = g.mul(c, c)?;
            Ok(g.sum(c))
        }),
        ("lookup_ce", vec![vec![5, 5]], |g, v| {
            let r = g.lookup(v[0], &[4, 1, 1])?;
            g.cross_entropy(r, &[0, 2, 1], &[1.0, 0.5, 2.0])
        }),
        ("repeat_weighted", vec![vec![2, 3], vec![6, 3], vec![2, 3]], |g, v| {
            let r = g.repeat_rows(v[0], 3);
            let s = g.add(r, v[1])?;
            let s = g.tanh(s)?;
            let w = g.softmax(v[2])?;
            let c = g.weighted_row_sum(w, s)?;
            let c = g.mul(c, c)?;
            Ok(g.sum(c))
        }),
        ("interleave_reshape", vec![vec![2, 3], vec![2, 3]], |g, v| {
            let z = g.interleave_rows(&[v[0], v[1]])?;
            let z = g.reshape(z, vec![2, 6])?;
            let z = g.softmax(z)?;
            let z = g.mul(z, z)?;
            Ok(g.sum(z))
        }),
    ];
    for (name, shapes, build) in cases {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
            let r = grad_check(build, &ins, 1e-4).unwrap();
            assert!(r.passed(), "{name} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn adam_zero_gradient_is_identity() {
    let mut store = ParamStore::new();
    let id = store.insert("w", t(1, 3, &[0.3, -1.0, 2.0])).unwrap();
    let mut adam = AdamState::new(AdamConfig::default());
    adam.step(&mut store).unwrap();
    assert_eq!(store.value(id).data(), &[0.3, -1.0, 2.0]);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_first_step_is_signed_lr() {
    let cfg = AdamConfig::default();
    for g0 in [0.7, -3.0, 1e-2] {
        let mut adam = AdamState::new(cfg);
        let mut p = [Tensor::scalar(1.0)];
        adam.step_tensors(&mut p, &[Tensor::scalar(g0)]).unwrap();
        let delta = p[0].item() - 1.0;
        assert!((delta + cfg.lr * g0.signum()).abs() < 1e-9);
    }
}

#[test]
fn adam_two_steps_match_hand_recurrence() {
    let (lr, b1, b2, eps): (f64, f64, f64, f64) = (5e-4, 0.9, 0.999, 1e-8);
    let (g1, g2): (f64, f64) = (0.4, -1.5);
    let mut x = 2.0;
    let m1 = (1.0 - b1) * g1;
    let v1 = (1.0 - b2) * g1 * g1;
    x -= lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
    let m2 = b1 * m1 + (1.0 - b1) * g2;
    let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
    x -= lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

    let mut adam = AdamState::new(AdamConfig::default());
    let mut p = [Tensor::scalar(2.0)];
    adam.step_tensors(&mut p, &[Tensor::scalar(g1)]).unwrap();
    adam.step_tensors(&mut p, &[Tensor::scalar(g2)]).unwrap();
    assert!((p[0].item() - x).abs() < 1e-12);
    assert_eq!(adam.step_count(), 2);
}

#[test]
fn adam_shape_mismatch() {
    let mut adam = AdamState::new(AdamConfig::default());
    let mut p = [Tensor::zeros(&[2, 2])];
    assert!(matches!(
        adam.step_tensors(&mut p, &[Tensor::zeros(&[4, 1])]),
        Err(NumError::Dimension { .. })
    ));
}

#[test]
fn frozen_params_get_no_gradient_and_no_update() {
    let mut store = ParamStore::new();
    let w = store.insert_frozen("emb", Tensor::identity(3)).unwrap();
    let b = store.insert("b", Tensor::zeros(&[1, 3])).unwrap();
    let mut g = Graph::new();
    let vw = g.param(&store, w);
    let vb = g.param(&store, b);
    let r = g.lookup(vw, &[0, 2]).unwrap();
    let r = g.add_row(r, vb).unwrap();
    let loss = g.cross_entropy(r, &[1, 1], &[1.0, 1.0]).unwrap();
    g.backward_into(loss, &mut store).unwrap();
    assert!(store.grad(w).iter().all(|x| *x == 0.0));
    assert!(store.grad(b).iter().any(|x| *x != 0.0));
    let before = store.value(w).clone();
    let mut adam = AdamState::new(AdamConfig::default());
    adam.step(&mut store).unwrap();
    assert_eq!(store.value(w), &before);
    assert!(store.value_mut(w).is_err());
}

#[test]
fn clip_grad_norm_rescales() {
    let mut store = ParamStore::new();
    let id = store.insert("w", Tensor::zeros(&[1, 2])).unwrap();
    store.grad_mut(id).copy_from_slice(&[30.0, 40.0]);
    let n = store.clip_grad_norm(5.0);
    assert_eq!(n, 50.0);
    assert!((store.grad(id)[0] - 3.0).abs() < 1e-12);
    assert!((store.grad(id)[1] - 4.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn softmax_is_simplex_point(row in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let n = row.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, n, row).unwrap());
        let s = g.softmax(x).unwrap();
        let v = g.value(s).data();
        prop_assert!(v.iter().all(|p| *p >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
