use hvfcast_nn::{Activation, BatchNormState, Graph, Mode, Tensor};
use proptest::prelude::*;

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn conv(x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let xi = g.input(Tensor::new(vec![1, 2, 3, 4], x.to_vec()).unwrap());
    let wi = g.input(Tensor::new(vec![2, 2, 3, 3], w.to_vec()).unwrap());
    let bi = g.input(Tensor::zeros(&[2]));
    let y = g.conv2d(xi, wi, bi, Activation::Linear).unwrap();
    g.value(y).data().to_vec()
}

fn dense(x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let xi = g.input(Tensor::new(vec![2, 4], x.to_vec()).unwrap());
    let wi = g.input(Tensor::new(vec![3, 4], w.to_vec()).unwrap());
    let bi = g.input(Tensor::zeros(&[3]));
    let y = g.dense(xi, wi, bi, Activation::Linear).unwrap();
    g.value(y).data().to_vec()
}

proptest! {
    #[test]
    fn conv_is_linear(x in vec_of(24), y in vec_of(24), w in vec_of(36), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv(&mix, &w);
        let (fx, fy) = (conv(&x, &w), conv(&y, &w));
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-12 * (1.0 + lhs[i].abs()) * 100.0);
        }
    }

    #[test]
    fn dense_is_linear(x in vec_of(8), y in vec_of(8), w in vec_of(12), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = dense(&mix, &w);
        let (fx, fy) = (dense(&x, &w), dense(&y, &w));
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-12 * (1.0 + lhs[i].abs()) * 100.0);
        }
    }

    #[test]
    fn masked_mae_ignores_off_mask_cells(
        pred in vec_of(12), target in vec_of(12),
        noise_p in vec_of(12), noise_t in vec_of(12),
    ) {
        let mask = [0usize, 2, 3, 5];
        let loss = |p: &[f64], t: &[f64]| {
            let mut g = Graph::new();
            let pi = g.input(Tensor::new(vec![2, 1, 2, 3], p.to_vec()).unwrap());
            let l = g.masked_mae(pi, &Tensor::new(vec![2, 1, 2, 3], t.to_vec()).unwrap(), &mask).unwrap();
            g.value(l).data()[0]
        };
        let mut p2 = pred.clone();
        let mut t2 = target.clone();
        for i in 0..6 {
            for b in 0..2 {
                if !mask.contains(&i) {
                    p2[b * 6 + i] += noise_p[b * 6 + i];
                    t2[b * 6 + i] += noise_t[b * 6 + i];
                }
            }
        }
        prop_assert_eq!(loss(&pred, &target).to_bits(), loss(&p2, &t2).to_bits());
    }

    #[test]
    fn infer_batch_norm_is_pure(x in vec_of(18)) {
        let mut state = BatchNormState::new(2);
        state.running_mean = vec![0.5, -1.0];
        state.running_var = vec![2.0, 0.25];
        let run = |state: &mut BatchNormState| {
            let mut g = Graph::new();
            let xi = g.input(Tensor::new(vec![1, 2, 3, 3], x.clone()).unwrap());
            let gamma = g.input(Tensor::new(vec![2], vec![1.5, 0.5]).unwrap());
            let beta = g.input(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap());
            let y = g.batch_norm(xi, gamma, beta, state, Mode::Infer).unwrap();
            g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        let before = state.clone();
        prop_assert_eq!(run(&mut state), run(&mut state));
        prop_assert_eq!(state, before);
    }
}
