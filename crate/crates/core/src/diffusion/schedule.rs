use dgir_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{DgirError, Result};

/// Forward-process variances with their running products. Timesteps are
/// 1-based: `alpha_bar(1)` is the first product term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of `T` betas between the endpoints.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DgirError::Param(format!(
                "schedule needs T >= 1 and 0 < beta_start <= beta_end < 1, got T={steps}, [{beta_start}, {beta_end}]"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DgirError::Param("betas must be non-empty and inside (0, 1)".into()));
        }
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, &b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(DgirError::Param(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

pub fn make_noise_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn noise_image<T: Real>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() {
        return Err(DgirError::Shape(format!("noise {:?} for image {:?}", eps.shape(), x0.shape())));
    }
    let ab = sched.alpha_bar(t)?;
    Ok(x0.affine_mix(ab.sqrt(), eps, (1.0 - ab).sqrt())?)
}

/// Per-sample timesteps: each batch item gets its own mixing coefficients.
pub fn noise_batch<T: Real>(x0: &Tensor<T>, ts: &[usize], eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() || ts.len() != x0.dim(0) {
        return Err(DgirError::Shape(format!(
            "{} timesteps, noise {:?} for images {:?}",
            ts.len(),
            eps.shape(),
            x0.shape()
        )));
    }
    let parts = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| noise_image(&x0.narrow(0, i, 1)?, t, &eps.narrow(0, i, 1)?, sched))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::concat(&parts, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_schedules() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars, vec![0.5]);
        let s = NoiseSchedule::from_betas(vec![0.1; 3]).unwrap();
        let expect = [0.9, 0.81, 0.729];
        for (a, b) in s.alpha_bars.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
    }

    #[test]
    fn default_is_strictly_decreasing() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert!((s.betas[0] - 1e-4).abs() < 1e-18 && (s.betas[999] - 0.02).abs() < 1e-15);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(0).is_err() && s.alpha_bar(1001).is_err());
    }

    #[test]
    fn noise_extremes() {
        let s = NoiseSchedule::default();
        let x = Tensor::<f64>::from_vec(vec![0.2, -0.4, 0.9, 1.0], &[1, 1, 2, 2]).unwrap();
        let z = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let ab = s.alpha_bar(50).unwrap();
        let a = noise_image(&x, 50, &z, &s).unwrap();
        for (p, q) in a.data().iter().zip(x.data()) {
            assert!((p - ab.sqrt() * q).abs() < 1e-15);
        }
        let b = noise_image(&z, 50, &x, &s).unwrap();
        for (p, q) in b.data().iter().zip(x.data()) {
            assert!((p - (1.0 - ab).sqrt() * q).abs() < 1e-15);
        }
        assert!(noise_image(&x, 50, &Tensor::zeros(&[1, 1, 4]), &s).is_err());
    }
}
