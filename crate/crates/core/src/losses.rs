//! Intensity similarities, the diffusion-feature similarity and the total
//! registration objective.

use dgir_tensor::{Real, Tensor};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{FeatureProbe, FrozenDenoiser, DECODER_MID_BLOCK};
use crate::error::{DgirError, Result};
use crate::geometry::{displacement_gradient_penalty, warp, DeformationField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LnccConfig {
    pub window: usize,
    pub epsilon: f64,
}

impl LnccConfig {
    pub fn new(window: usize, epsilon: f64) -> Result<Self> {
        let c = LnccConfig { window, epsilon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) || self.epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(DgirError::Param(format!(
                "lncc needs an odd window >= 3 and epsilon > 0, got {} / {}",
                self.window, self.epsilon
            )));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DgirError::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "mse")?;
    Ok(a.sub(b)?.sqr().mean_all())
}

/// Local Pearson correlation over every fully contained box window,
/// averaged over window centres, channels and batch.
pub fn lncc<T: Real>(a: &Tensor<T>, b: &Tensor<T>, cfg: &LnccConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    same_shape(a, b, "lncc")?;
    if a.rank() < 3 || a.shape()[2..].iter().any(|&e| e < cfg.window) {
        return Err(DgirError::Shape(format!("lncc window {} on {:?}", cfg.window, a.shape())));
    }
    let w = cfg.window;
    let inv = 1.0 / (w.pow(a.rank() as u32 - 2)) as f64;
    let mean = |x: &Tensor<T>| -> Result<Tensor<T>> { Ok(x.box_sum_spatial(w)?.scale(inv)) };
    let ma = mean(a)?;
    let mb = mean(b)?;
    let var_a = mean(&a.sqr())?.sub(&ma.sqr())?;
    let var_b = mean(&b.sqr())?.sub(&mb.sqr())?;
    let cov = mean(&a.mul(b)?)?.sub(&ma.mul(&mb)?)?;
    let denom = var_a.add_scalar(cfg.epsilon).mul(&var_b.add_scalar(cfg.epsilon))?.sqrt();
    Ok(cov.div(&denom)?.clamp(-1.0, 1.0).mean_all())
}

/// Central-difference gradient components on the interior of every axis.
fn interior_gradients<T: Real>(x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let d = x.rank() - 2;
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let axis = k + 2;
        let n = x.dim(axis);
        let mut g = x.narrow(axis, 2, n - 2)?.sub(&x.narrow(axis, 0, n - 2)?)?.scale(0.5);
        for j in 0..d {
            if j != k {
                let m = g.dim(j + 2);
                g = g.narrow(j + 2, 1, m - 2)?;
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// `1 - mean((n_a . n_b)^2)` with `n = grad / sqrt(|grad|^2 + eta^2)`.
pub fn ngf_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>, eta: f64) -> Result<Tensor<T>> {
    same_shape(a, b, "ngf")?;
    if eta.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(DgirError::Param(format!("ngf eta must be positive, got {eta}")));
    }
    if a.rank() < 3 || a.shape()[2..].iter().any(|&e| e < 3) {
        return Err(DgirError::Shape(format!("ngf needs extents >= 3, got {:?}", a.shape())));
    }
    let ga = interior_gradients(a)?;
    let gb = interior_gradients(b)?;
    let norm = |g: &[Tensor<T>]| -> Result<Tensor<T>> {
        let mut s = g[0].sqr();
        for c in &g[1..] {
            s = s.add(&c.sqr())?;
        }
        Ok(s.add_scalar(eta * eta).sqrt())
    };
    let na = norm(&ga)?;
    let nb = norm(&gb)?;
    let mut dot = ga[0].mul(&gb[0])?;
    for k in 1..ga.len() {
        dot = dot.add(&ga[k].mul(&gb[k])?)?;
    }
    let cos = dot.div(&na.mul(&nb)?)?;
    Ok(cos.sqr().mean_all().neg().add_scalar(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Lncc,
    Ngf,
    Dgir,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Mse, LossKind::Lncc, LossKind::Ngf, LossKind::Dgir];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Lncc => "lncc",
            LossKind::Ngf => "ngf",
            LossKind::Dgir => "dgir",
        }
    }
}

/// Every constant of the registration objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda: f64,
    /// LNCC applied to intensities.
    pub image_lncc: LnccConfig,
    /// LNCC applied to diffusion features.
    pub feature_lncc: LnccConfig,
    pub ngf_eta: f64,
    pub probe: FeatureProbe,
    /// Slices per step for volumes.
    pub slices_per_step: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Dgir,
            lambda: 1.0,
            image_lncc: LnccConfig { window: 9, epsilon: 1e-5 },
            feature_lncc: LnccConfig { window: 5, epsilon: 1e-5 },
            ngf_eta: 0.01,
            probe: FeatureProbe::new(50, DECODER_MID_BLOCK),
            slices_per_step: 4,
        }
    }
}

impl LossConfig {
    pub fn with_kind(mut self, kind: LossKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.image_lncc.validate()?;
        self.feature_lncc.validate()?;
        if self.lambda.is_nan() || self.lambda < 0.0 || self.ngf_eta.is_nan() || self.ngf_eta <= 0.0 || self.slices_per_step == 0 {
            return Err(DgirError::Param("lambda >= 0, ngf_eta > 0 and slices_per_step >= 1 are required".into()));
        }
        Ok(())
    }
}

/// `1 - lncc` between block features of the two images.
pub fn dgir_similarity_2d<T: Real, R: Rng + ?Sized>(
    warped: &Tensor<T>,
    fixed: &Tensor<T>,
    cfg: &LossConfig,
    frozen: &FrozenDenoiser<T>,
    rng: &mut R,
) -> Result<Tensor<T>> {
    same_shape(warped, fixed, "dgir")?;
    if warped.rank() != 4 {
        return Err(DgirError::Shape(format!("2D similarity on {:?}", warped.shape())));
    }
    let (fa, fb) = frozen.extract_pair(warped, &fixed.detach(), &cfg.probe, rng)?;
    Ok(lncc(&fa, &fb, &cfg.feature_lncc)?.neg().add_scalar(1.0))
}

/// Axis and distinct indices of the slices used by one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceDraw {
    pub axis: usize,
    pub indices: Vec<usize>,
}

pub fn draw_slices<R: Rng + ?Sized>(extents: &[usize], count: usize, rng: &mut R) -> Result<SliceDraw> {
    let axis = rng.random_range(0..extents.len());
    let n = extents[axis];
    if count == 0 || count > n {
        return Err(DgirError::Param(format!("{count} slices requested on an axis of extent {n}")));
    }
    let mut indices = index::sample(rng, n, count).into_vec();
    indices.sort_unstable();
    Ok(SliceDraw { axis, indices })
}

/// Stacks the chosen slices of `[n, c, D, H, W]` into a 2D batch.
pub fn gather_slices<T: Real>(vol: &Tensor<T>, draw: &SliceDraw) -> Result<Tensor<T>> {
    let parts = draw
        .indices
        .iter()
        .map(|&i| Ok(vol.select(draw.axis + 2, i)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::concat(&parts, 0)?)
}

/// Slice-sampled feature similarity for volumes: one random axis, `N`
/// distinct slices, averaged 2D similarity.
pub fn dgir_similarity_3d<T: Real, R: Rng + ?Sized>(
    warped: &Tensor<T>,
    fixed: &Tensor<T>,
    cfg: &LossConfig,
    frozen: &FrozenDenoiser<T>,
    rng: &mut R,
) -> Result<Tensor<T>> {
    same_shape(warped, fixed, "dgir")?;
    if warped.rank() != 5 {
        return Err(DgirError::Shape(format!("3D similarity on {:?}", warped.shape())));
    }
    let draw = draw_slices(&warped.shape()[2..], cfg.slices_per_step, rng)?;
    let a = gather_slices(warped, &draw)?;
    let b = gather_slices(fixed, &draw)?;
    dgir_similarity_2d(&a, &b, cfg, frozen, rng)
}

/// Similarity of `warped` to `fixed` under the configured loss kind.
pub fn similarity<T: Real, R: Rng + ?Sized>(
    warped: &Tensor<T>,
    fixed: &Tensor<T>,
    cfg: &LossConfig,
    frozen: Option<&FrozenDenoiser<T>>,
    rng: &mut R,
) -> Result<Tensor<T>> {
    match cfg.kind {
        LossKind::Mse => mse_loss(warped, fixed),
        LossKind::Lncc => Ok(lncc(warped, fixed, &cfg.image_lncc)?.neg().add_scalar(1.0)),
        LossKind::Ngf => ngf_loss(warped, fixed, cfg.ngf_eta),
        LossKind::Dgir => {
            let frozen = frozen.ok_or_else(|| DgirError::Param("dgir loss needs a denoiser".into()))?;
            if warped.rank() == 5 {
                dgir_similarity_3d(warped, fixed, cfg, frozen, rng)
            } else {
                dgir_similarity_2d(warped, fixed, cfg, frozen, rng)
            }
        }
    }
}

/// Objective value with its two terms.
#[derive(Clone)]
pub struct LossParts<T: Real> {
    pub total: Tensor<T>,
    pub sim: Tensor<T>,
    pub reg: Tensor<T>,
}

/// `sim(warp(A, phi), B) + lambda * penalty(phi)`.
pub fn total_loss<T: Real, R: Rng + ?Sized>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    phi: &DeformationField<T>,
    cfg: &LossConfig,
    frozen: Option<&FrozenDenoiser<T>>,
    rng: &mut R,
) -> Result<LossParts<T>> {
    let warped = warp(a, phi)?;
    let sim = similarity(&warped, b, cfg, frozen, rng)?;
    let reg = displacement_gradient_penalty(phi)?;
    let total = if cfg.lambda == 0.0 { sim.clone() } else { sim.add(&reg.scale(cfg.lambda))? };
    Ok(LossParts { total, sim, reg })
}
