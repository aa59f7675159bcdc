//! Parameterised layers and parameter traversal.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

/// Anything that owns named parameters.
pub trait Module<T: Real> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}

/// Joins a parameter path segment.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn named_params<T: Real, M: Module<T> + ?Sized>(m: &M) -> BTreeMap<String, Tensor<T>> {
    let mut out = BTreeMap::new();
    m.visit_params("", &mut |name, t| {
        out.insert(name.to_string(), t.clone());
    });
    out
}

pub fn param_count<T: Real, M: Module<T> + ?Sized>(m: &M) -> usize {
    let mut n = 0;
    m.visit_params("", &mut |_, t| n += t.numel());
    n
}

/// Turns gradient recording on or off for every parameter.
pub fn set_trainable<T: Real, M: Module<T> + ?Sized>(m: &mut M, trainable: bool) {
    m.visit_params_mut("", &mut |_, t| {
        *t = if trainable { t.requires_grad_() } else { t.detach() };
    });
}

/// Copies parameters by name, converting the element type. Every parameter of
/// `m` must be present with a matching shape.
pub fn load_params<T: Real, U: Real, M: Module<T> + ?Sized>(
    m: &mut M,
    source: &BTreeMap<String, Tensor<U>>,
) -> Result<()> {
    let mut err = None;
    m.visit_params_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match source.get(name) {
            Some(src) if src.shape() == t.shape() => {
                let cast = src.cast::<T>();
                *t = if t.requires_grad() { cast.requires_grad_() } else { cast };
            }
            Some(src) => {
                err = Some(shape_err::<()>(
                    "load_params",
                    format!("{name}: stored {:?}, expected {:?}", src.shape(), t.shape()),
                ));
            }
            None => {
                err = Some(shape_err::<()>("load_params", format!("missing parameter {name}")));
            }
        }
    });
    match err {
        Some(e) => e,
        None => Ok(()),
    }
}

fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    if bound == 0.0 {
        return Tensor::zeros(shape);
    }
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Convolution layer over 1-3 spatial axes.
#[derive(Debug, Clone)]
pub struct Conv<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv<T> {
    /// Uniform fan-in initialisation, `padding = kernel / 2`.
    pub fn new<R: Rng + ?Sized>(
        spatial_dims: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(kernel, spatial_dims));
        let fan_in = cin * kernel.pow(spatial_dims as u32);
        let bound = (1.0 / fan_in as f64).sqrt();
        Conv {
            weight: uniform(&shape, bound * 3f64.sqrt(), rng).requires_grad_(),
            bias: uniform(&[cout], bound, rng).requires_grad_(),
            stride,
            padding: kernel / 2,
        }
    }

    /// Same layout with all-zero weights and bias.
    pub fn zeros(spatial_dims: usize, cin: usize, cout: usize, kernel: usize) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(kernel, spatial_dims));
        Conv {
            weight: Tensor::zeros(&shape).requires_grad_(),
            bias: Tensor::zeros(&[cout]).requires_grad_(),
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv(&self.weight, Some(&self.bias), self.stride, self.padding)
    }
}

impl<T: Real> Module<T> for Conv<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        Linear {
            weight: uniform(&[output, input], bound * 3f64.sqrt(), rng).requires_grad_(),
            bias: uniform(&[output], bound, rng).requires_grad_(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.weight, Some(&self.bias))
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub groups: usize,
}

impl<T: Real> GroupNorm<T> {
    pub fn new(channels: usize, groups: usize) -> Self {
        GroupNorm {
            gamma: Tensor::ones(&[channels]).requires_grad_(),
            beta: Tensor::zeros(&[channels]).requires_grad_(),
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.group_norm(self.groups, &self.gamma, &self.beta, 1e-5)
    }
}

impl<T: Real> Module<T> for GroupNorm<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
