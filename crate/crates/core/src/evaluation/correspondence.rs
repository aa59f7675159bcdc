use dgir_tensor::Tensor;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{FeatureProbe, FrozenDenoiser};
use crate::error::{DgirError, Result};
use crate::geometry::{resample, DeformationField, LabelMap};
use crate::losses::LnccConfig;
use crate::synth::RegistrationPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Mse,
    Lncc,
    Ngf,
    DiffusionCosine,
}

/// Scores over a 2D grid; higher means more similar.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl Heatmap {
    /// First index of the largest score.
    pub fn argmax(&self) -> [usize; 2] {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        [best / self.shape[1], best % self.shape[1]]
    }

    /// Min-max rescaling to `[0, 1]`; flat maps become zero.
    pub fn normalized(&self) -> Vec<f64> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        self.values.iter().map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect()
    }
}

/// Single-channel 2D plane of an image `[1, 1, H, W]`.
fn plane(img: &Tensor<f32>) -> Result<([usize; 2], Vec<f64>)> {
    if img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 1 {
        return Err(DgirError::Shape(format!("expected a [1, 1, H, W] image, got {:?}", img.shape())));
    }
    Ok(([img.dim(2), img.dim(3)], img.to_f64_vec()))
}

fn check_point(p: [usize; 2], shape: [usize; 2]) -> Result<()> {
    if p[0] >= shape[0] || p[1] >= shape[1] {
        return Err(DgirError::Param(format!("point {p:?} outside grid {shape:?}")));
    }
    Ok(())
}

/// Patch of `channels` planes centred at `p`, border-clamped, channel-major.
fn patch(data: &[f64], channels: usize, shape: [usize; 2], p: [usize; 2], w: usize) -> Vec<f64> {
    let r = (w / 2) as i64;
    let vol = shape[0] * shape[1];
    let mut out = Vec::with_capacity(channels * w * w);
    for c in 0..channels {
        for dy in -r..=r {
            for dx in -r..=r {
                let y = (p[0] as i64 + dy).clamp(0, shape[0] as i64 - 1) as usize;
                let x = (p[1] as i64 + dx).clamp(0, shape[1] as i64 - 1) as usize;
                out.push(data[c * vol + y * shape[1] + x]);
            }
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (cov / n) / ((va / n + eps) * (vb / n + eps)).sqrt()
}

fn ngf_field(data: &[f64], shape: [usize; 2], eta: f64) -> Vec<[f64; 2]> {
    let at = |y: i64, x: i64| {
        data[y.clamp(0, shape[0] as i64 - 1) as usize * shape[1] + x.clamp(0, shape[1] as i64 - 1) as usize]
    };
    (0..shape[0] * shape[1])
        .map(|p| {
            let (y, x) = ((p / shape[1]) as i64, (p % shape[1]) as i64);
            let gy = (at(y + 1, x) - at(y - 1, x)) / 2.0;
            let gx = (at(y, x + 1) - at(y, x - 1)) / 2.0;
            let n = (gy * gy + gx * gx + eta * eta).sqrt();
            [gy / n, gx / n]
        })
        .collect()
}

/// Per-pixel features resized to the image grid, channel-major.
pub fn dense_features(
    frozen: &FrozenDenoiser<f32>,
    a: &Tensor<f32>,
    b: &Tensor<f32>,
    probe: &FeatureProbe,
) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (fa, fb) = frozen.extract_pair(a, b, probe, &mut rng)?;
    let grid = &a.shape()[2..];
    let fa = resample(&fa, grid)?;
    let fb = resample(&fb, grid)?;
    Ok((fa.dim(1), fa.to_f64_vec(), fb.to_f64_vec()))
}

fn cosine_at(fa: &[f64], fb: &[f64], c: usize, vol: usize, p: usize, q: usize) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let (x, y) = (fa[k * vol + p], fb[k * vol + q]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let den = (na * nb).sqrt();
    if den > 0.0 {
        (dot / den).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Settings shared by heatmaps and matching.
#[derive(Debug, Clone)]
pub struct MatchContext<'a> {
    pub frozen: Option<&'a FrozenDenoiser<f32>>,
    pub probe: FeatureProbe,
    /// Patch extent for the intensity measures.
    pub patch: usize,
    pub lncc_epsilon: f64,
    pub ngf_eta: f64,
}

/// Similarity of every `dst` pixel to `point` of `src`.
pub fn similarity_heatmap(
    src: &Tensor<f32>,
    point: [usize; 2],
    dst: &Tensor<f32>,
    measure: Measure,
    ctx: &MatchContext,
) -> Result<Heatmap> {
    let (shape, s) = plane(src)?;
    let (dshape, d) = plane(dst)?;
    if shape != dshape {
        return Err(DgirError::Shape(format!("heatmap between {shape:?} and {dshape:?}")));
    }
    check_point(point, shape)?;
    let vol = shape[0] * shape[1];
    let w = ctx.patch;
    let values = match measure {
        Measure::Mse | Measure::Lncc => {
            let reference = patch(&s, 1, shape, point, w);
            (0..vol)
                .map(|q| {
                    let other = patch(&d, 1, shape, [q / shape[1], q % shape[1]], w);
                    if measure == Measure::Mse {
                        -reference.iter().zip(&other).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / reference.len() as f64
                    } else {
                        pearson(&reference, &other, ctx.lncc_epsilon)
                    }
                })
                .collect()
        }
        Measure::Ngf => {
            let (ns, nd) = (ngf_field(&s, shape, ctx.ngf_eta), ngf_field(&d, shape, ctx.ngf_eta));
            let flat = |v: &[[f64; 2]]| -> Vec<f64> { v.iter().map(|g| g[0]).chain(v.iter().map(|g| g[1])).collect() };
            let (fs, fd) = (flat(&ns), flat(&nd));
            let reference = patch(&fs, 2, shape, point, w);
            let m = w * w;
            (0..vol)
                .map(|q| {
                    let other = patch(&fd, 2, shape, [q / shape[1], q % shape[1]], w);
                    (0..m).map(|i| (reference[i] * other[i] + reference[m + i] * other[m + i]).powi(2)).sum::<f64>()
                        / m as f64
                })
                .collect()
        }
        Measure::DiffusionCosine => {
            let frozen = ctx.frozen.ok_or_else(|| DgirError::Param("diffusion heatmap needs a denoiser".into()))?;
            let (c, fa, fb) = dense_features(frozen, src, dst, &ctx.probe)?;
            let p = point[0] * shape[1] + point[1];
            (0..vol).map(|q| cosine_at(&fa, &fb, c, vol, p, q)).collect()
        }
    };
    Ok(Heatmap { shape, values })
}

/// Best `dst` match of each `src` keypoint by feature cosine, or by
/// windowed LNCC of feature patches when `window` is given.
pub fn match_keypoints(
    src: &Tensor<f32>,
    keypoints: &[[usize; 2]],
    dst: &Tensor<f32>,
    frozen: &FrozenDenoiser<f32>,
    probe: &FeatureProbe,
    window: Option<&LnccConfig>,
) -> Result<Vec<[usize; 2]>> {
    let (shape, _) = plane(src)?;
    for &k in keypoints {
        check_point(k, shape)?;
    }
    let (c, fa, fb) = dense_features(frozen, src, dst, probe)?;
    let vol = shape[0] * shape[1];
    let matches = dgir_tensor::exec::map_range(keypoints.len(), |i| {
        let k = keypoints[i];
        let p = k[0] * shape[1] + k[1];
        let scores: Vec<f64> = match window {
            None => (0..vol).map(|q| cosine_at(&fa, &fb, c, vol, p, q)).collect(),
            Some(cfg) => {
                let w = cfg.window;
                let m = w * w;
                let reference = patch(&fa, c, shape, k, w);
                (0..vol)
                    .map(|q| {
                        let other = patch(&fb, c, shape, [q / shape[1], q % shape[1]], w);
                        (0..c).map(|ch| pearson(&reference[ch * m..(ch + 1) * m], &other[ch * m..(ch + 1) * m], cfg.epsilon)).sum::<f64>()
                            / c as f64
                    })
                    .collect()
            }
        };
        Heatmap { shape, values: scores }.argmax()
    });
    Ok(matches)
}

/// Best `dst` match of each keypoint by smallest intensity patch MSE.
pub fn match_keypoints_intensity(
    src: &Tensor<f32>,
    keypoints: &[[usize; 2]],
    dst: &Tensor<f32>,
    patch_size: usize,
) -> Result<Vec<[usize; 2]>> {
    let ctx = MatchContext { frozen: None, probe: FeatureProbe::new(1, 1), patch: patch_size, lncc_epsilon: 1e-5, ngf_eta: 0.01 };
    keypoints.iter().map(|&k| Ok(similarity_heatmap(src, k, dst, Measure::Mse, &ctx)?.argmax())).collect()
}

/// Up to `count` labelled points with a differently labelled 4-neighbour,
/// at least `margin` points from the border, sampled without replacement.
pub fn boundary_keypoints(masks: &LabelMap, count: usize, margin: usize, seed: u64) -> Result<Vec<[usize; 2]>> {
    if masks.shape.len() != 2 {
        return Err(DgirError::Shape(format!("keypoints need a 2D label map, got {:?}", masks.shape)));
    }
    let (h, w) = (masks.shape[0], masks.shape[1]);
    let at = |y: usize, x: usize| masks.labels[y * w + x];
    let mut candidates = Vec::new();
    for y in margin.max(1)..h.saturating_sub(margin.max(1)) {
        for x in margin.max(1)..w.saturating_sub(margin.max(1)) {
            let l = at(y, x);
            if l > 0 && (at(y - 1, x) != l || at(y + 1, x) != l || at(y, x - 1) != l || at(y, x + 1) != l) {
                candidates.push([y, x]);
            }
        }
    }
    let take = count.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), take).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| candidates[i]).collect())
}

/// Moving-image position, in grid units, that fixed-grid point `q` maps to.
pub fn gt_correspondence(field: &DeformationField<f32>, q: [usize; 2]) -> Result<[f64; 2]> {
    let spatial = field.spatial();
    if spatial.len() != 2 || field.batch() != 1 {
        return Err(DgirError::Shape(format!("expected one 2D field, got {:?}", field.coords().shape())));
    }
    let shape = [spatial[0], spatial[1]];
    check_point(q, shape)?;
    let c = field.coords().to_f64_vec();
    let vol = shape[0] * shape[1];
    let p = q[0] * shape[1] + q[1];
    Ok([0, 1].map(|k| (c[k * vol + p] + 1.0) / 2.0 * (shape[k] - 1) as f64))
}

fn distance(a: [usize; 2], b: [f64; 2]) -> f64 {
    ((a[0] as f64 - b[0]).powi(2) + (a[1] as f64 - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointMatch {
    pub pair: usize,
    pub fixed: [usize; 2],
    pub truth: [f64; 2],
    pub cosine: [usize; 2],
    pub windowed: [usize; 2],
    pub intensity: [usize; 2],
}

/// Mean matching errors in grid units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointReport {
    pub keypoints: usize,
    pub cosine_error: f64,
    pub windowed_error: f64,
    pub intensity_error: f64,
    pub matches: Vec<KeypointMatch>,
}

/// Matches boundary keypoints of each fixed image into its moving image
/// with plain feature cosine, windowed feature LNCC and intensity-patch MSE,
/// scoring each against the ground-truth field.
pub fn keypoint_benchmark(
    pairs: &[RegistrationPair],
    frozen: &FrozenDenoiser<f32>,
    probe: &FeatureProbe,
    per_pair: usize,
    patch: usize,
    window: &LnccConfig,
    seed: u64,
) -> Result<KeypointReport> {
    let mut matches = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let kps = boundary_keypoints(&pair.fixed_masks, per_pair, patch / 2 + 1, seed.wrapping_add(i as u64))?;
        if kps.is_empty() {
            continue;
        }
        let cosine = match_keypoints(&pair.fixed, &kps, &pair.moving, frozen, probe, None)?;
        let windowed = match_keypoints(&pair.fixed, &kps, &pair.moving, frozen, probe, Some(window))?;
        let intensity = match_keypoints_intensity(&pair.fixed, &kps, &pair.moving, patch)?;
        for (j, &k) in kps.iter().enumerate() {
            matches.push(KeypointMatch {
                pair: i,
                fixed: k,
                truth: gt_correspondence(&pair.gt_field, k)?,
                cosine: cosine[j],
                windowed: windowed[j],
                intensity: intensity[j],
            });
        }
    }
    if matches.is_empty() {
        return Err(DgirError::Data("no boundary keypoints found".into()));
    }
    let n = matches.len() as f64;
    let mean = |f: fn(&KeypointMatch) -> [usize; 2]| matches.iter().map(|m| distance(f(m), m.truth)).sum::<f64>() / n;
    Ok(KeypointReport {
        keypoints: matches.len(),
        cosine_error: mean(|m| m.cosine),
        windowed_error: mean(|m| m.windowed),
        intensity_error: mean(|m| m.intensity),
        matches,
    })
}
