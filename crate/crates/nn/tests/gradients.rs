//! Reverse-mode gradients against central finite differences.

use hvfcast_nn::{
    grad_check, grad_check_with_kinks, Activation, BatchNormState, Graph, Mode, ParamId, ParamSet,
    Probe, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Evaluates `build` on a fresh graph with `flat` assigned to `params`.
fn probe_and_grad<F>(params: &ParamSet, build: F) -> (impl FnMut(&[f64]) -> Probe, impl FnMut(&[f64]) -> Vec<f64>)
where
    F: Fn(&mut Graph, &ParamSet, &[hvfcast_nn::Var]) -> hvfcast_nn::Var + Clone,
{
    let p1 = params.clone();
    let b1 = build.clone();
    let probe = move |flat: &[f64]| {
        let mut ps = p1.clone();
        ps.assign_flat(flat).unwrap();
        let mut g = Graph::with_kink_tracking();
        let vars: Vec<_> = ps.iter().map(|(id, _)| g.param(&ps, id)).collect();
        let loss = b1(&mut g, &ps, &vars);
        Probe {
            value: g.value(loss).data()[0],
            kink_signature: g.kink_signature(),
        }
    };
    let p2 = params.clone();
    let grad = move |flat: &[f64]| {
        let mut ps = p2.clone();
        ps.assign_flat(flat).unwrap();
        let mut g = Graph::new();
        let vars: Vec<_> = ps.iter().map(|(id, _)| g.param(&ps, id)).collect();
        let loss = build(&mut g, &ps, &vars);
        let grads = g.backward(loss).unwrap();
        ps.zero_grads();
        grads.accumulate_into(&g, &mut ps);
        ps.flatten_grads()
    };
    (probe, grad)
}

#[test]
fn scalar_square() {
    let mut ps = ParamSet::new();
    ps.insert("theta", Tensor::scalar(3.0)).unwrap();
    let (mut probe, grad) = probe_and_grad(&ps, |g, _, v| {
        let sq = g.mul(v[0], v[0]).unwrap();
        g.sum(sq)
    });
    let err = grad_check(|x| probe(x).value, grad, &[3.0], 1e-6);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn conv_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[2, 3, 4, 5], 1.0);
    let mut ps = ParamSet::new();
    ps.insert("w", random(&mut rng, &[2, 3, 3, 3], 0.5)).unwrap();
    ps.insert("b", random(&mut rng, &[2], 0.5)).unwrap();
    let weights = random(&mut rng, &[2, 2, 4, 5], 1.0);
    let (probe, grad) = probe_and_grad(&ps, move |g, _, v| {
        let xi = g.input(x.clone());
        let y = g.conv2d(xi, v[0], v[1], Activation::Linear).unwrap();
        let wv = g.input(weights.clone());
        let p = g.mul(y, wv).unwrap();
        g.sum(p)
    });
    let r = grad_check_with_kinks(probe, grad, &ps.flatten_values(), 1e-6, 0.0, None);
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn conv_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random(&mut rng, &[3, 2, 3, 3], 0.5);
    let b = random(&mut rng, &[3], 0.5);
    let weights = random(&mut rng, &[1, 3, 4, 4], 1.0);
    let point = random(&mut rng, &[1, 2, 4, 4], 1.0);
    let f = |x: &[f64], want_grad: bool| {
        let mut g = Graph::new();
        let xi = g.input_with_grad(Tensor::new(vec![1, 2, 4, 4], x.to_vec()).unwrap());
        let wi = g.input(w.clone());
        let bi = g.input(b.clone());
        let y = g.conv2d(xi, wi, bi, Activation::Linear).unwrap();
        let wv = g.input(weights.clone());
        let p = g.mul(y, wv).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        (
            g.value(s).data()[0],
            if want_grad {
                grads.get(xi).unwrap().data().to_vec()
            } else {
                vec![]
            },
        )
    };
    let err = grad_check(|x| f(x, false).0, |x| f(x, true).1, point.data(), 1e-6);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn dense_and_reshape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[3, 1, 2, 3], 1.0);
    let target = random(&mut rng, &[3, 4], 1.0);
    let mut ps = ParamSet::new();
    ps.insert("w", random(&mut rng, &[4, 6], 0.5)).unwrap();
    ps.insert("b", random(&mut rng, &[4], 0.5)).unwrap();
    let (probe, grad) = probe_and_grad(&ps, move |g, _, v| {
        let xi = g.input(x.clone());
        let flat = g.reshape(xi, &[3, 6]).unwrap();
        let y = g.dense(flat, v[0], v[1], Activation::Relu).unwrap();
        g.masked_mae(y, &target, &[0, 1, 2, 3]).unwrap()
    });
    let r = grad_check_with_kinks(probe, grad, &ps.flatten_values(), 1e-6, 1e-4, None);
    assert!(r.checked > 0);
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}

#[test]
fn batch_norm_train_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[2, 3, 3, 4], 2.0);
    let weights = random(&mut rng, &[2, 3, 3, 4], 1.0);
    let mut ps = ParamSet::new();
    ps.insert("gamma", random(&mut rng, &[3], 1.5)).unwrap();
    ps.insert("beta", random(&mut rng, &[3], 1.0)).unwrap();
    let (probe, grad) = probe_and_grad(&ps, move |g, _, v| {
        let xi = g.input(x.clone());
        let (y, _) = g.batch_norm_train(xi, v[0], v[1], 1e-5).unwrap();
        let wv = g.input(weights.clone());
        let p = g.mul(y, wv).unwrap();
        g.sum(p)
    });
    let r = grad_check_with_kinks(probe, grad, &ps.flatten_values(), 1e-6, 0.0, None);
    assert!(r.max_rel_error < 1e-7, "{r:?}");
}

#[test]
fn batch_norm_input_gradients_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let point = random(&mut rng, &[2, 2, 3, 3], 2.0);
    let weights = random(&mut rng, &[2, 2, 3, 3], 1.0);
    let mut state = BatchNormState::new(2);
    state.running_mean = vec![0.3, -0.2];
    state.running_var = vec![1.7, 0.4];
    for mode in [Mode::Train, Mode::Infer] {
        let f = |x: &[f64], want_grad: bool| {
            let mut st = state.clone();
            let mut g = Graph::new();
            let xi = g.input_with_grad(Tensor::new(vec![2, 2, 3, 3], x.to_vec()).unwrap());
            let gamma = g.input(Tensor::new(vec![2], vec![1.3, -0.7]).unwrap());
            let beta = g.input(Tensor::new(vec![2], vec![0.1, 0.2]).unwrap());
            let y = g.batch_norm(xi, gamma, beta, &mut st, mode).unwrap();
            let wv = g.input(weights.clone());
            let p = g.mul(y, wv).unwrap();
            let s = g.sum(p);
            let grads = g.backward(s).unwrap();
            (
                g.value(s).data()[0],
                if want_grad {
                    grads.get(xi).unwrap().data().to_vec()
                } else {
                    vec![]
                },
            )
        };
        let err = grad_check(|x| f(x, false).0, |x| f(x, true).1, point.data(), 1e-6);
        assert!(err < 1e-7, "{mode:?}: {err}");
    }
}

#[test]
fn composed_conv_bn_relu_mae() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[2, 2, 4, 5], 1.0);
    let target = random(&mut rng, &[2, 1, 4, 5], 1.0);
    let mask: Vec<usize> = (0..20).filter(|i| i % 7 != 3).collect();
    let mut ps = ParamSet::new();
    ps.insert("w1", random(&mut rng, &[3, 2, 3, 3], 0.6)).unwrap();
    ps.insert("b1", random(&mut rng, &[3], 0.1)).unwrap();
    ps.insert("gamma", Tensor::filled(&[3], 1.0)).unwrap();
    ps.insert("beta", Tensor::zeros(&[3])).unwrap();
    ps.insert("w2", random(&mut rng, &[1, 3, 3, 3], 0.6)).unwrap();
    ps.insert("b2", random(&mut rng, &[1], 0.1)).unwrap();
    let (probe, grad) = probe_and_grad(&ps, move |g, _, v| {
        let xi = g.input(x.clone());
        let h = g.conv2d(xi, v[0], v[1], Activation::Linear).unwrap();
        let (h, _) = g.batch_norm_train(h, v[2], v[3], 1e-5).unwrap();
        let h = g.relu(h);
        let y = g.conv2d(h, v[4], v[5], Activation::Linear).unwrap();
        g.masked_mae(y, &target, &mask).unwrap()
    });
    let r = grad_check_with_kinks(probe, grad, &ps.flatten_values(), 1e-6, 1e-4, None);
    assert!(r.checked > r.excluded, "{r:?}");
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}

/// Scalar Adam recurrence written out independently of the engine.
fn reference_adam_on_square(steps: usize) -> Vec<f64> {
    let (lr, b1, b2, eps) = (1e-3f64, 0.9f64, 0.999f64, 1e-8f64);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(theta);
    }
    out
}

#[test]
fn adam_tracks_reference_on_quadratic() {
    use hvfcast_nn::{adam_step, Adam};
    let mut ps = ParamSet::new();
    let id: ParamId = ps.insert("theta", Tensor::scalar(1.0)).unwrap();
    let mut st = Adam::with_lr(1e-3).init(&ps);
    let reference = reference_adam_on_square(3000);
    let mut first_below = None;
    for (step, expected) in reference.iter().enumerate() {
        let mut g = Graph::new();
        let th = g.param(&ps, id);
        let sq = g.mul(th, th).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap().accumulate_into(&g, &mut ps);
        adam_step(&mut ps, &mut st).unwrap();
        let theta = ps.get(id).value.data()[0];
        assert!((theta - expected).abs() < 1e-12, "step {}: {} vs {}", step + 1, theta, expected);
        if first_below.is_none() && theta.abs() < 1e-2 {
            first_below = Some(step + 1);
        }
    }
    // the bias-corrected trajectory crosses |theta| = 1e-2 a little after step 2000
    let crossing = first_below.expect("converges within 3000 steps");
    assert!((2000..2500).contains(&crossing), "{crossing}");
}

#[test]
fn adam_is_deterministic() {
    use hvfcast_nn::{adam_step, Adam};
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = ParamSet::new();
        ps.insert("w", random(&mut rng, &[5], 1.0)).unwrap();
        let mut st = Adam::default().init(&ps);
        for _ in 0..50 {
            for p in ps.iter_mut() {
                let v: Vec<f64> = p.value.data().iter().map(|x| x.sin()).collect();
                p.grad.data_mut().copy_from_slice(&v);
            }
            adam_step(&mut ps, &mut st).unwrap();
        }
        ps.flatten_values()
    };
    let a: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}
