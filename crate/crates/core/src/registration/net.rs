use dgir_tensor::nn::{join, Conv, Module};
use dgir_tensor::{Real, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DgirError, Result};
use crate::geometry::{compose, make_identity, resample, resample_field, warp, DeformationField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegNetConfig {
    pub spatial_dims: usize,
    /// Channel width at each of the three levels of a stage.
    pub widths: [usize; 3],
    /// Multiplier on the raw head output, in normalised units.
    pub displacement_scale: f64,
}

impl RegNetConfig {
    pub fn for_dims(spatial_dims: usize) -> Self {
        let widths = if spatial_dims == 3 { [8, 16, 16] } else { [16, 32, 32] };
        RegNetConfig { spatial_dims, widths, displacement_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.spatial_dims) || self.widths.contains(&0) || self.displacement_scale.is_nan() || self.displacement_scale <= 0.0 {
            return Err(DgirError::Param(format!("invalid registration net config {self:?}")));
        }
        Ok(())
    }
}

impl Default for RegNetConfig {
    fn default() -> Self {
        RegNetConfig::for_dims(2)
    }
}

/// Three-level encoder-decoder mapping `[moving, fixed]` to a displacement.
#[derive(Debug, Clone)]
struct Stage<T: Real> {
    enc0: Conv<T>,
    enc1: Conv<T>,
    enc2: Conv<T>,
    mid: Conv<T>,
    dec1: Conv<T>,
    dec0: Conv<T>,
    head: Conv<T>,
}

impl<T: Real> Stage<T> {
    fn new<R: Rng + ?Sized>(d: usize, w: [usize; 3], rng: &mut R) -> Self {
        Stage {
            enc0: Conv::new(d, 2, w[0], 3, 1, rng),
            enc1: Conv::new(d, w[0], w[1], 3, 2, rng),
            enc2: Conv::new(d, w[1], w[2], 3, 2, rng),
            mid: Conv::new(d, w[2], w[2], 3, 1, rng),
            dec1: Conv::new(d, w[2] + w[1], w[1], 3, 1, rng),
            dec0: Conv::new(d, w[1] + w[0], w[0], 3, 1, rng),
            head: Conv::zeros(d, w[0], d, 3),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let act = |t: Tensor<T>| t.leaky_relu(0.2);
        let e0 = act(self.enc0.forward(x)?);
        let e1 = act(self.enc1.forward(&e0)?);
        let e2 = act(self.enc2.forward(&e1)?);
        let m = act(self.mid.forward(&e2)?);
        let d1 = act(self.dec1.forward(&Tensor::concat(&[m.upsample_nearest2()?, e1], 1)?)?);
        let d0 = act(self.dec0.forward(&Tensor::concat(&[d1.upsample_nearest2()?, e0], 1)?)?);
        Ok(self.head.forward(&d0)?)
    }
}

impl<T: Real> Module<T> for Stage<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (name, c) in self.convs() {
            c.visit_params(&join(prefix, name), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        let Stage { enc0, enc1, enc2, mid, dec1, dec0, head } = self;
        let convs: [(&str, &mut Conv<T>); 7] =
            [("enc0", enc0), ("enc1", enc1), ("enc2", enc2), ("mid", mid), ("dec1", dec1), ("dec0", dec0), ("head", head)];
        for (name, c) in convs {
            c.visit_params_mut(&join(prefix, name), f);
        }
    }
}

impl<T: Real> Stage<T> {
    fn convs(&self) -> [(&'static str, &Conv<T>); 7] {
        [
            ("enc0", &self.enc0),
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("mid", &self.mid),
            ("dec1", &self.dec1),
            ("dec0", &self.dec0),
            ("head", &self.head),
        ]
    }
}

/// Two-step network: a half-resolution stage whose map is upsampled, then a
/// full-resolution stage predicting a residual on the pre-warped moving image.
#[derive(Debug, Clone)]
pub struct RegistrationNet<T: Real> {
    config: RegNetConfig,
    coarse: Stage<T>,
    fine: Stage<T>,
}

impl<T: Real> RegistrationNet<T> {
    pub fn new<R: Rng + ?Sized>(config: RegNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let coarse = Stage::new(config.spatial_dims, config.widths, rng);
        let fine = Stage::new(config.spatial_dims, config.widths, rng);
        Ok(RegistrationNet { config, coarse, fine })
    }

    pub fn config(&self) -> &RegNetConfig {
        &self.config
    }

    fn field_from(&self, disp: &Tensor<T>) -> Result<DeformationField<T>> {
        let id = make_identity::<T>(&disp.shape()[2..])?.batched(disp.dim(0))?;
        DeformationField::new(id.coords().add(&disp.scale(self.config.displacement_scale))?)
    }

    /// Map taking fixed-grid points to moving-image coordinates.
    pub fn predict(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<DeformationField<T>> {
        if a.shape() != b.shape() || a.rank() != self.config.spatial_dims + 2 || a.dim(1) != 1 {
            return Err(DgirError::Shape(format!(
                "registration expects equal [n, 1, spatial x{}] inputs, got {:?} and {:?}",
                self.config.spatial_dims,
                a.shape(),
                b.shape()
            )));
        }
        let full = a.shape()[2..].to_vec();
        if full.iter().any(|&e| e % 8 != 0) {
            return Err(DgirError::Shape(format!("spatial extents must be multiples of 8, got {full:?}")));
        }
        let half: Vec<usize> = full.iter().map(|e| e / 2).collect();
        let coarse_in = Tensor::concat(&[resample(a, &half)?, resample(b, &half)?], 1)?;
        let phi1 = resample_field(&self.field_from(&self.coarse.forward(&coarse_in)?)?, &full)?;
        let fine_in = Tensor::concat(&[warp(a, &phi1)?, b.clone()], 1)?;
        let phi2 = self.field_from(&self.fine.forward(&fine_in)?)?;
        compose(&phi1, &phi2)
    }
}

impl<T: Real> Module<T> for RegistrationNet<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.coarse.visit_params(&join(prefix, "coarse"), f);
        self.fine.visit_params(&join(prefix, "fine"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.coarse.visit_params_mut(&join(prefix, "coarse"), f);
        self.fine.visit_params_mut(&join(prefix, "fine"), f);
    }
}

pub fn predict_deformation<T: Real>(net: &RegistrationNet<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<DeformationField<T>> {
    net.predict(a, b)
}

/// Inference: the map and the warped moving image, with no graph retained.
pub fn register_pair<T: Real>(
    net: &RegistrationNet<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(DeformationField<T>, Tensor<T>)> {
    let phi = net.predict(&a.detach(), &b.detach())?.detach();
    let warped = warp(&a.detach(), &phi)?;
    Ok((phi, warped))
}
