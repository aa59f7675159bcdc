mod common;

use common::{rng, small_denoiser, smooth_image};
use dgir_core::diffusion::{noise_batch, FeatureProbe, FrozenDenoiser, NoiseSchedule, Stage, BLOCK_COUNT};
use dgir_core::geometry::{make_identity, DeformationField};
use dgir_core::losses::{draw_slices, total_loss, LossConfig};
use dgir_core::registration::{train, RegNetConfig, RegTraining, RegistrationNet};
use dgir_tensor::Tensor;

#[test]
fn hand_schedule_products() {
    let s = NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3]).unwrap();
    assert_eq!(s.steps(), 3);
    let expected = [0.9, 0.9 * 0.8, 0.9 * 0.8 * 0.7];
    for (t, e) in expected.iter().enumerate() {
        assert!((s.alpha_bar(t + 1).unwrap() - e).abs() < 1e-15);
    }
    assert!(s.alpha_bar(0).is_err() && s.alpha_bar(4).is_err());
}

#[test]
fn forward_process_moments() {
    let sched = NoiseSchedule::default();
    let n = 10_000;
    let x0_px = [0.8, -0.3, 0.0, -1.0];
    let x0 = Tensor::from_vec((0..n).flat_map(|_| x0_px).collect(), &[n, 1, 2, 2]).unwrap();
    for t in [10, 500, 1000] {
        let eps = Tensor::<f64>::randn(&[n, 1, 2, 2], &mut rng(t as u64));
        let xt = noise_batch(&x0, &vec![t; n], &eps, &sched).unwrap().to_vec();
        let ab = sched.alpha_bar(t).unwrap();
        for (p, &v0) in x0_px.iter().enumerate() {
            let s: Vec<f64> = (0..n).map(|i| xt[i * 4 + p]).collect();
            let mean = s.iter().sum::<f64>() / n as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = ((1.0 - ab) / n as f64).sqrt();
            let se_var = (1.0 - ab) * (2.0 / (n - 1) as f64).sqrt();
            assert!((mean - ab.sqrt() * v0).abs() < 3.0 * se_mean, "t {t} pixel {p} mean {mean}");
            assert!((var - (1.0 - ab)).abs() < 3.0 * se_var, "t {t} pixel {p} var {var}");
        }
    }
}

#[test]
fn taps_follow_the_layout_table() {
    let net = small_denoiser::<f64>(1);
    let x = Tensor::<f64>::randn(&[2, 3, 16, 24], &mut rng(2));
    let layout = net.layout();
    assert_eq!(layout.len(), BLOCK_COUNT);
    for info in &layout {
        let f = net.forward_to(&x, &[5, 9], info.index).unwrap();
        let scale = 1 << info.level;
        assert_eq!(f.shape(), &[2, info.channels, 16 / scale, 24 / scale], "block {}", info.index);
    }
    assert!(layout.iter().any(|b| b.stage == Stage::Encoder && b.level == 2));
}

#[test]
fn loss_evaluation_leaves_the_denoiser_untouched() {
    let frozen = FrozenDenoiser::new(small_denoiser::<f32>(3), NoiseSchedule::default());
    let before = frozen.param_hash();
    let a = smooth_image(16, 1).cast::<f32>();
    let b = smooth_image(16, 2).cast::<f32>();
    let phi = DeformationField::new(make_identity::<f32>(&[16, 16]).unwrap().into_coords().requires_grad_()).unwrap();
    let parts = total_loss(&a, &b, &phi, &LossConfig::default(), Some(&frozen), &mut rng(4)).unwrap();
    let grads = parts.total.backward().unwrap();
    assert!(grads.get(phi.coords()).is_some());
    assert_eq!(frozen.param_hash(), before);

    let mut net = RegistrationNet::new(RegNetConfig::for_dims(2), &mut rng(5)).unwrap();
    let pairs = vec![(a.clone(), b.clone())];
    let cfg = RegTraining { steps: 3, lr: 1e-3, batch: 1, seed: 0 };
    train(&mut net, &pairs, &LossConfig::default(), Some(&frozen), &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(frozen.param_hash(), before);
}

#[test]
fn fixed_seed_noise_is_repeatable() {
    use dgir_core::diffusion::NoisePolicy;
    let frozen = FrozenDenoiser::new(small_denoiser::<f64>(6), NoiseSchedule::default());
    let probe = FeatureProbe::new(50, 10).with_noise(NoisePolicy::FixedSeed { seed: 9 });
    let x = smooth_image(16, 3);
    let a = frozen.extract(&x, &probe, &mut rng(1)).unwrap().to_vec();
    let b = frozen.extract(&x, &probe, &mut rng(2)).unwrap().to_vec();
    assert_eq!(a, b);
}

#[test]
fn slice_draws_cover_every_plane() {
    let mut seen = [[false; 16]; 3];
    let mut r = rng(0);
    for _ in 0..10_000 {
        let d = draw_slices(&[16, 16, 16], 4, &mut r).unwrap();
        assert_eq!(d.indices.len(), 4);
        assert!(d.indices.windows(2).all(|w| w[0] < w[1]));
        for &i in &d.indices {
            seen[d.axis][i] = true;
        }
    }
    assert!(seen.iter().flatten().all(|&s| s));
}
