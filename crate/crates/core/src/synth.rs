//! Synthetic missing-anatomy corpora with ground-truth deformations.
//!
//! A sample renders one enclosing outer layer and two or three inner
//! structures. The `full` image shows everything; the `missing` image shows
//! only the inner structures, with its own intensity profile.

use std::path::Path;

use dgir_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DgirError, Result};
use crate::geometry::{grid_coord, make_identity, min_interior_jacobian, warp, warp_labels, DeformationField, LabelMap};
use crate::io::{read_json, read_raw, read_tensor, write_json, write_raw, write_tensor};

/// Rendering parameters of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StructureSpec {
    /// Inclusive range of inner structure count.
    pub inner_min: usize,
    pub inner_max: usize,
    /// Outer-layer intensity in the full image.
    pub full_outer: f64,
    /// Inner-structure intensity in the full image.
    pub full_inner: f64,
    /// Inner-structure intensity in the missing image.
    pub missing_inner: f64,
    /// Per-structure intensity jitter (uniform half-width).
    pub jitter: f64,
    /// Edge width in grid units.
    pub edge: f64,
    /// Amplitude of the smooth multiplicative shading.
    pub shading: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
}

impl Default for StructureSpec {
    fn default() -> Self {
        StructureSpec {
            inner_min: 2,
            inner_max: 3,
            full_outer: 0.5,
            full_inner: 0.8,
            missing_inner: 0.9,
            jitter: 0.05,
            edge: 1.0,
            shading: 0.1,
            noise: 0.02,
        }
    }
}

/// Ground-truth deformation parameters, both in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldParams {
    pub amplitude: f64,
    pub smoothness: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams { amplitude: 6.0, smoothness: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct AnatomySample {
    /// `[1, 1, spatial...]` in `[0, 1]`.
    pub full: Tensor<f32>,
    pub missing: Tensor<f32>,
    /// 0 is background; inner structures are labelled from 1.
    pub masks: LabelMap,
    pub gt_field: Option<DeformationField<f32>>,
}

impl AnatomySample {
    pub fn shape(&self) -> &[usize] {
        &self.masks.shape
    }

    pub fn labels(&self) -> Vec<u8> {
        let max = self.masks.labels.iter().copied().max().unwrap_or(0);
        (1..=max).collect()
    }
}

/// Moving (missing variant, undeformed) and fixed (full variant deformed by
/// the ground truth) with their masks.
#[derive(Debug, Clone)]
pub struct RegistrationPair {
    pub moving: Tensor<f32>,
    pub fixed: Tensor<f32>,
    pub moving_masks: LabelMap,
    pub fixed_masks: LabelMap,
    pub gt_field: DeformationField<f32>,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamped borders over a row-major grid.
fn blur(data: &mut [f64], shape: &[usize], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let d = shape.len();
    for axis in 0..d {
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut line = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * inner];
                }
                for j in 0..n {
                    let mut acc = 0.0;
                    for (t, w) in k.iter().enumerate() {
                        let src = (j as i64 + t as i64 - r).clamp(0, n as i64 - 1) as usize;
                        acc += w * line[src];
                    }
                    data[base + j * inner] = acc;
                }
            }
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if !(2..=3).contains(&shape.len()) || shape.iter().any(|&n| n < 2) {
        return Err(DgirError::Shape(format!("grid shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

/// Identity plus a Gaussian-smoothed random displacement whose largest
/// vector length is `amplitude` grid units. Fields whose minimum Jacobian
/// determinant is not above 0.1 are shrunk by 0.8 and re-checked.
pub fn random_smooth_field(shape: &[usize], params: &FieldParams, seed: u64) -> Result<DeformationField<f64>> {
    let vol = check_shape(shape)?;
    if params.amplitude.is_nan() || params.amplitude < 0.0 || params.smoothness.is_nan() || params.smoothness < 0.0 {
        return Err(DgirError::Param(format!("field parameters {params:?}")));
    }
    let id = make_identity::<f64>(shape)?;
    if params.amplitude == 0.0 {
        return Ok(id);
    }
    let d = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Blur on a padded grid and crop so the field statistics do not depend
    // on the distance to the border.
    let pad = (3.0 * params.smoothness).ceil() as usize;
    let padded: Vec<usize> = shape.iter().map(|&n| n + 2 * pad).collect();
    let pvol: usize = padded.iter().product();
    let mut disp = Vec::with_capacity(d * vol);
    for _ in 0..d {
        let mut comp: Vec<f64> = (0..pvol).map(|_| StandardNormal.sample(&mut rng)).collect();
        blur(&mut comp, &padded, params.smoothness);
        for q in 0..vol {
            let mut r = q;
            let mut off = 0;
            let mut stride = 1;
            for k in (0..d).rev() {
                off += (r % shape[k] + pad) * stride;
                stride *= padded[k];
                r /= shape[k];
            }
            disp.push(comp[off]);
        }
    }
    let max_len = (0..vol)
        .map(|p| (0..d).map(|k| disp[k * vol + p].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if max_len == 0.0 {
        return Ok(id);
    }
    let mut scale = params.amplitude / max_len;
    let idc = id.coords().data();
    for _ in 0..30 {
        let coords: Vec<f64> = (0..d * vol)
            .map(|q| {
                let k = q / vol;
                idc[q] + disp[q] * scale * 2.0 / (shape[k] - 1) as f64
            })
            .collect();
        let mut full = vec![1, d];
        full.extend_from_slice(shape);
        let phi = DeformationField::new(Tensor::from_vec(coords, &full)?)?;
        if crate::geometry::jacobian_determinant(&phi)?.data().iter().all(|&j| j > 0.1) {
            return Ok(phi);
        }
        scale *= 0.8;
    }
    Err(DgirError::Param(format!("no fold-free field for {params:?} within the retry budget")))
}

/// Smooth closed shapes as signed level functions over normalised space.
#[derive(Debug, Clone)]
enum Shape {
    /// Star-shaped blob: `|q| - 1` with `q` the point in the blob's frame
    /// divided by a direction-dependent radius.
    Blob { centre: Vec<f64>, radii: Vec<f64>, waves: Vec<(Vec<f64>, f64, f64)> },
    /// Capsule around a segment.
    Capsule { a: Vec<f64>, b: Vec<f64>, radius: f64 },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Shape {
    /// Approximate signed distance in normalised units; negative inside.
    fn level(&self, p: &[f64]) -> f64 {
        match self {
            Shape::Blob { centre, radii, waves } => {
                let q: Vec<f64> = p.iter().zip(centre).zip(radii).map(|((x, c), r)| (x - c) / r).collect();
                let len = norm(&q);
                let dir: Vec<f64> = if len > 1e-12 { q.iter().map(|v| v / len).collect() } else { q.clone() };
                let bump: f64 = waves
                    .iter()
                    .map(|(w, amp, ph)| amp * (w.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() + ph).cos())
                    .sum();
                let mean_r = radii.iter().sum::<f64>() / radii.len() as f64;
                (len - (1.0 + bump)) * mean_r
            }
            Shape::Capsule { a, b, radius } => {
                let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
                let ap: Vec<f64> = p.iter().zip(a).map(|(x, y)| x - y).collect();
                let t = (ap.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>() / ab.iter().map(|v| v * v).sum::<f64>())
                    .clamp(0.0, 1.0);
                let closest: Vec<f64> = a.iter().zip(&ab).map(|(x, y)| x + t * y).collect();
                let diff: Vec<f64> = p.iter().zip(&closest).map(|(x, y)| x - y).collect();
                norm(&diff) - radius
            }
        }
    }
}

fn random_unit<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn segment_distance(a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64]) -> f64 {
    // Sampled closest approach; exact enough for placement rejection.
    let mut best = f64::INFINITY;
    for i in 0..=16 {
        let s = i as f64 / 16.0;
        let p: Vec<f64> = a0.iter().zip(a1).map(|(x, y)| x + s * (y - x)).collect();
        let cap = Shape::Capsule { a: b0.to_vec(), b: b1.to_vec(), radius: 0.0 };
        best = best.min(cap.level(&p));
    }
    best
}

fn build_shapes<R: Rng>(d: usize, spec: &StructureSpec, rng: &mut R) -> (Shape, Vec<Shape>) {
    let centre: Vec<f64> = (0..d).map(|_| rng.random_range(-0.08..0.08)).collect();
    let radii: Vec<f64> = (0..d).map(|_| rng.random_range(0.6..0.82)).collect();
    let waves = (0..3)
        .map(|_| {
            let f = rng.random_range(2.0..3.5);
            let w = random_unit(d, rng).into_iter().map(|x| x * f).collect();
            (w, rng.random_range(0.0..0.06), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let outer = Shape::Blob { centre, radii, waves };
    let count = rng.random_range(spec.inner_min..=spec.inner_max.max(spec.inner_min));
    let mut inner: Vec<Shape> = Vec::new();
    let mut attempts = 0;
    while inner.len() < count && attempts < 2000 {
        attempts += 1;
        let radius = rng.random_range(0.08..0.15);
        let half_len = rng.random_range(0.12..0.3);
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-0.45..0.45)).collect();
        let dir = random_unit(d, rng);
        let a: Vec<f64> = c.iter().zip(&dir).map(|(x, u)| x - half_len * u).collect();
        let b: Vec<f64> = c.iter().zip(&dir).map(|(x, u)| x + half_len * u).collect();
        // Stay inside the outer layer with a margin of at least a radius.
        let inside = (0..=8).all(|i| {
            let s = i as f64 / 8.0;
            let p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * (y - x)).collect();
            outer.level(&p) < -(radius + 0.08)
        });
        let apart = inner.iter().all(|other| match other {
            Shape::Capsule { a: oa, b: ob, radius: or } => segment_distance(&a, &b, oa, ob) > radius + or + 0.08,
            Shape::Blob { .. } => true,
        });
        if inside && apart {
            inner.push(Shape::Capsule { a, b, radius });
        }
    }
    (outer, inner)
}

fn smoothstep_inside(level: f64, width: f64) -> f64 {
    // Logistic edge: 0.5 on the boundary, level measured in grid units.
    1.0 / (1.0 + (level / width).exp())
}

/// Renders one sample; a pure function of `(shape, spec, seed)`.
pub fn generate_sample(shape: &[usize], spec: &StructureSpec, seed: u64) -> Result<AnatomySample> {
    let vol = check_shape(shape)?;
    if shape.iter().any(|&n| n < 32) {
        return Err(DgirError::Shape(format!("samples need at least 32 points per axis, got {shape:?}")));
    }
    if spec.inner_min == 0 || spec.inner_max < spec.inner_min || spec.edge <= 0.0 {
        return Err(DgirError::Param(format!("structure spec {spec:?}")));
    }
    let d = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (outer, inner) = build_shapes(d, spec, &mut rng);
    let inner_full: Vec<f64> = inner.iter().map(|_| spec.full_inner + rng.random_range(-1.0..=1.0) * spec.jitter).collect();
    let inner_missing: Vec<f64> =
        inner.iter().map(|_| spec.missing_inner + rng.random_range(-1.0..=1.0) * spec.jitter).collect();
    let outer_full = spec.full_outer + rng.random_range(-1.0..=1.0) * spec.jitter;
    // Grid units per normalised unit, averaged over axes.
    let scale = shape.iter().map(|&n| (n - 1) as f64 / 2.0).sum::<f64>() / d as f64;
    let mut shading: Vec<f64> = (0..vol).map(|_| StandardNormal.sample(&mut rng)).collect();
    blur(&mut shading, shape, 8.0);
    let peak = shading.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut full = vec![0f32; vol];
    let mut missing = vec![0f32; vol];
    let mut labels = vec![0u8; vol];
    let mut p = vec![0.0; d];
    let mut idx = vec![0usize; d];
    for q in 0..vol {
        let mut r = q;
        for k in (0..d).rev() {
            idx[k] = r % shape[k];
            r /= shape[k];
        }
        for k in 0..d {
            p[k] = grid_coord(idx[k], shape[k]);
        }
        let shade = 1.0 + spec.shading * shading[q] / peak;
        let o = smoothstep_inside(outer.level(&p) * scale, spec.edge);
        let mut f = outer_full * o;
        let mut m = 0.0;
        for (i, s) in inner.iter().enumerate() {
            let lv = s.level(&p) * scale;
            let w = smoothstep_inside(lv, spec.edge);
            f = f * (1.0 - w) + inner_full[i] * w;
            m = m * (1.0 - w) + inner_missing[i] * w;
            if lv < 0.0 && labels[q] == 0 {
                labels[q] = (i + 1) as u8;
            }
        }
        let nf: f64 = StandardNormal.sample(&mut rng);
        let nm: f64 = StandardNormal.sample(&mut rng);
        full[q] = (f * shade + spec.noise * nf).clamp(0.0, 1.0) as f32;
        missing[q] = (m * shade + spec.noise * nm).clamp(0.0, 1.0) as f32;
    }
    let mut full_shape = vec![1, 1];
    full_shape.extend_from_slice(shape);
    Ok(AnatomySample {
        full: Tensor::from_vec(full, &full_shape)?,
        missing: Tensor::from_vec(missing, &full_shape)?,
        masks: LabelMap::new(shape.to_vec(), labels)?,
        gt_field: None,
    })
}

/// Attaches a ground-truth field drawn from `seed` to the sample.
pub fn with_field(mut sample: AnatomySample, field: &FieldParams, seed: u64) -> Result<AnatomySample> {
    sample.gt_field = Some(random_smooth_field(sample.shape(), field, seed)?.cast());
    Ok(sample)
}

/// Builds the registration pair of a sample that carries a ground truth.
pub fn pair_from_sample(sample: &AnatomySample) -> Result<RegistrationPair> {
    let gt = sample
        .gt_field
        .clone()
        .ok_or_else(|| DgirError::Data("sample has no ground-truth field".into()))?;
    Ok(RegistrationPair {
        moving: sample.missing.clone(),
        fixed: warp(&sample.full, &gt)?,
        moving_masks: sample.masks.clone(),
        fixed_masks: warp_labels(&sample.masks, &gt)?,
        gt_field: gt,
    })
}

/// Deforms `sample` by a fresh random field and returns the pair.
pub fn generate_pair(sample: &AnatomySample, field: &FieldParams, seed: u64) -> Result<RegistrationPair> {
    pair_from_sample(&with_field(sample.clone(), field, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub shape: Vec<usize>,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    #[serde(default)]
    pub structure: StructureSpec,
    #[serde(default)]
    pub field: FieldParams,
}

impl CorpusSpec {
    pub fn default_2d() -> Self {
        CorpusSpec {
            shape: vec![64, 64],
            train: 200,
            test: 50,
            seed: 0,
            structure: StructureSpec::default(),
            field: FieldParams::default(),
        }
    }

    pub fn default_3d() -> Self {
        CorpusSpec { shape: vec![48, 48, 48], train: 40, test: 10, ..Self::default_2d() }
    }
}

/// Seeds for sample `i` of a split, derived from the corpus seed.
fn split_seeds(seed: u64, split: u64, i: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split * 1_000_003 + i as u64);
    (rng.random(), rng.random())
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub train: Vec<AnatomySample>,
    pub test: Vec<AnatomySample>,
}

fn generate_split(spec: &CorpusSpec, split: u64, count: usize) -> Result<Vec<AnatomySample>> {
    let items = dgir_tensor::exec::map_range(count, |i| {
        let (s_img, s_field) = split_seeds(spec.seed, split, i);
        generate_sample(&spec.shape, &spec.structure, s_img).and_then(|s| with_field(s, &spec.field, s_field))
    });
    items.into_iter().collect()
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    Ok(Corpus { spec: spec.clone(), train: generate_split(spec, 0, spec.train)?, test: generate_split(spec, 1, spec.test)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitManifest {
    samples: usize,
    shape: Vec<usize>,
}

pub fn write_dataset(dir: &Path, samples: &[AnatomySample]) -> Result<()> {
    let shape = samples.first().map(|s| s.shape().to_vec()).unwrap_or_default();
    for (i, s) in samples.iter().enumerate() {
        let sd = dir.join(format!("sample_{i}"));
        write_tensor(&sd.join("full"), &s.full)?;
        write_tensor(&sd.join("missing"), &s.missing)?;
        let labels: Vec<f32> = s.masks.labels.iter().map(|&l| l as f32).collect();
        write_raw(&sd.join("masks"), &s.masks.shape, &labels)?;
        if let Some(gt) = &s.gt_field {
            write_tensor(&sd.join("gt_field"), gt.coords())?;
        }
    }
    write_json(&dir.join("manifest.json"), &SplitManifest { samples: samples.len(), shape })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<AnatomySample>> {
    let manifest: SplitManifest = read_json(&dir.join("manifest.json"))?;
    let mut out = Vec::with_capacity(manifest.samples);
    for i in 0..manifest.samples {
        let sd = dir.join(format!("sample_{i}"));
        let full = read_tensor::<f32>(&sd.join("full"))?;
        let missing = read_tensor::<f32>(&sd.join("missing"))?;
        let (mshape, mvals) = read_raw(&sd.join("masks"))?;
        let labels = mvals
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(DgirError::corrupt(sd.join("masks.bin"), format!("non-integral label {v}")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        let gt_stem = sd.join("gt_field");
        let gt_field = if crate::io::header_path(&gt_stem).exists() {
            Some(DeformationField::new(read_tensor::<f32>(&gt_stem)?)?)
        } else {
            None
        };
        out.push(AnatomySample { full, missing, masks: LabelMap::new(mshape, labels)?, gt_field });
    }
    Ok(out)
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    write_json(&dir.join("corpus.json"), &corpus.spec)?;
    write_dataset(&dir.join("train"), &corpus.train)?;
    write_dataset(&dir.join("test"), &corpus.test)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    if !dir.join("corpus.json").exists() {
        return Err(DgirError::MissingArtifact(dir.join("corpus.json")));
    }
    let spec: CorpusSpec = read_json(&dir.join("corpus.json"))?;
    Ok(Corpus { spec, train: read_dataset(&dir.join("train"))?, test: read_dataset(&dir.join("test"))? })
}

/// Smallest interior Jacobian determinant of a sample's ground truth.
pub fn field_min_jacobian(sample: &AnatomySample) -> Result<Option<f64>> {
    sample.gt_field.as_ref().map(min_interior_jacobian).transpose()
}
