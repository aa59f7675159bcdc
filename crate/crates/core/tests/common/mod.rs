//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use dgir_core::diffusion::{Denoiser, DenoiserConfig};
use dgir_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-window Pearson correlation by direct summation over a `[1, 1, H, W]`
/// pair, clamped and averaged over valid window centres.
pub fn brute_lncc(a: &[f64], b: &[f64], h: usize, w: usize, win: usize, eps: f64) -> f64 {
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    sa += a[y * w + x];
                    sb += b[y * w + x];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let (da, db) = (a[y * w + x] - ma, b[y * w + x] - mb);
                    cov += da * db;
                    va += da * da;
                    vb += db * db;
                }
            }
            let r = (cov / n) / ((va / n + eps) * (vb / n + eps)).sqrt();
            total += r.clamp(-1.0, 1.0);
            count += 1;
        }
    }
    total / count as f64
}

/// Largest deviation between the recorded gradient of `f` at `x` and its
/// central finite difference, relative to the largest numeric component.
pub fn gradient_error(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> Tensor<f64>) -> f64 {
    let leaf = x.detach().requires_grad_();
    let out = f(&leaf);
    let grads = out.backward().expect("backward");
    let analytic = grads.get(&leaf).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x.numel()]);
    let base = x.to_vec();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let eval = |delta: f64| {
            let mut v = base.clone();
            v[i] += delta;
            f(&Tensor::from_vec(v, x.shape()).unwrap()).to_scalar().unwrap()
        };
        numeric.push((eval(h) - eval(-h)) / (2.0 * h));
    }
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = numeric.iter().zip(&analytic).fold(0.0f64, |m, (n, a)| m.max((n - a).abs()));
    assert!(scale > 0.0, "gradient vanished");
    worst / scale
}

/// A small randomly initialised denoiser; enough to exercise feature paths.
pub fn small_denoiser<T: dgir_tensor::Real>(seed: u64) -> Denoiser<T> {
    let cfg = DenoiserConfig { spatial_dims: 2, in_channels: 3, widths: [8, 8, 16], groups: 4, time_dim: 16 };
    Denoiser::new(cfg, &mut rng(seed)).unwrap()
}

/// Smooth random values in `[lo, hi]` shaped `[1, 1, n, n]`.
pub fn smooth_image(n: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let f: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            use rand::Rng;
            (r.random_range(0.5..2.5), r.random_range(0.5..2.5), r.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let mut v = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fy, fx) = (y as f64 / n as f64, x as f64 / n as f64);
            let s: f64 = f.iter().map(|(a, b, p)| (a * 3.0 * fy + b * 3.0 * fx + p).sin()).sum();
            v.push(0.5 + 0.1 * s);
        }
    }
    Tensor::from_vec(v, &[1, 1, n, n]).unwrap()
}
