use dgir_tensor::{exec, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Direct 2D cross-correlation with zero padding.
fn naive_conv2d(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], stride: usize, pad: usize) -> Vec<f64> {
    let [n, cin, h, wd] = xs;
    let [cout, _, kh, kw] = ws;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for a in 0..kh {
                            for c in 0..kw {
                                let yy = (i * stride + a) as isize - pad as isize;
                                let xx = (j * stride + c) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += x[((b * cin + ci) * h + yy as usize) * wd + xx as usize]
                                    * w[((co * cin + ci) * kh + a) * kw + c];
                            }
                        }
                    }
                    y[((b * cout + co) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    y
}

#[test]
fn conv_matches_direct_loop() {
    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
        let x = randn(&[2, 3, 7, 6], 1);
        let w = randn(&[4, 3, 3, 3], 2);
        let y = x.conv(&w, None, stride, pad).unwrap();
        let want = naive_conv2d(x.data(), [2, 3, 7, 6], w.data(), [4, 3, 3, 3], stride, pad);
        assert_eq!(y.numel(), want.len());
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn grid_sample_hits_grid_points_and_midpoints() {
    // 2x4 image with identical rows [0, 1, 0, 0].
    let img = Tensor::<f64>::from_vec(vec![0., 1., 0., 0., 0., 1., 0., 0.], &[1, 1, 2, 4]).unwrap();
    // Shift by half a column step: column coordinate -1 + 2(j + 0.5)/3.
    let mut coords = Vec::new();
    for _ in 0..2 {
        for _ in 0..4 {
            coords.push(-1.0);
        }
    }
    for _ in 0..2 {
        for j in 0..4 {
            coords.push(-1.0 + 2.0 * (j as f64 + 0.5) / 3.0);
        }
    }
    let coords = Tensor::from_vec(coords, &[1, 2, 2, 4]).unwrap();
    let out = img.grid_sample(&coords).unwrap();
    // Interior half-step samples are the means of their neighbours; the last
    // one clamps to the border value.
    for (got, want) in out.data()[..4].iter().zip([0.5, 0.5, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn grid_sample_clamps_outside() {
    let img = Tensor::<f64>::from_vec(vec![1., 2., 3., 4.], &[1, 1, 2, 2]).unwrap();
    let coords = Tensor::from_vec(vec![-5.0, 5.0, -5.0, 5.0], &[1, 2, 1, 2]).unwrap();
    let out = img.grid_sample(&coords).unwrap();
    assert_eq!(out.data(), &[1.0, 4.0]);
}

#[test]
fn box_sum_matches_direct_sum() {
    let x = randn(&[1, 1, 6, 5], 3);
    let y = x.box_sum_spatial(3).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 3]);
    for i in 0..4 {
        for j in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += x.data()[(i + a) * 5 + j + b];
                }
            }
            assert!((y.data()[i * 3 + j] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn errors_on_bad_shapes() {
    let a = Tensor::<f32>::zeros(&[2, 3]);
    let b = Tensor::<f32>::zeros(&[3, 2]);
    assert!(a.add(&b).is_err());
    assert!(a.reshape(&[5]).is_err());
    assert!(a.narrow(1, 2, 2).is_err());
    let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
    let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
    assert!(x.conv(&w, None, 1, 1).is_err());
    assert!(x.backward().is_err());
}

#[test]
fn no_graph_without_trainable_leaves() {
    let x = Tensor::<f32>::ones(&[2, 2]);
    let y = x.sqr().sum_all();
    assert!(!y.requires_grad());
    assert!(y.backward().unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn parallel_and_sequential_agree_bitwise(seed in 0u64..1000, batch in 1usize..4) {
        let x = Tensor::<f32>::randn(&[batch, 3, 9, 8], &mut ChaCha8Rng::seed_from_u64(seed)).requires_grad_();
        let w = Tensor::<f32>::randn(&[5, 3, 3, 3], &mut ChaCha8Rng::seed_from_u64(seed + 1)).requires_grad_();
        let run = |parallel: bool| {
            exec::set_parallel(parallel);
            let y = x.conv(&w, None, 1, 1).unwrap();
            let loss = y.sqr().mean_all();
            let g = loss.backward().unwrap();
            (y.to_vec(), g.get(&x).unwrap().to_vec(), g.get(&w).unwrap().to_vec())
        };
        let par = run(true);
        let seq = run(false);
        exec::set_parallel(true);
        prop_assert_eq!(par, seq);
    }
}
