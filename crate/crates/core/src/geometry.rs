//! Coordinate conventions, warping, composition and Jacobian analysis.
//!
//! Images are tensors shaped `[n, c, spatial...]`. A [`DeformationField`]
//! stores absolute target coordinates shaped `[n, d, spatial...]` in the
//! normalised `[-1, 1]` convention, channel `k` addressing spatial axis `k`.

use dgir_tensor::{Real, Tensor};

use crate::error::{DgirError, Result};

#[derive(Clone)]
pub struct DeformationField<T: Real> {
    coords: Tensor<T>,
}

impl<T: Real> std::fmt::Debug for DeformationField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeformationField").field("shape", &self.coords.shape()).finish()
    }
}

impl<T: Real> DeformationField<T> {
    pub fn new(coords: Tensor<T>) -> Result<Self> {
        let r = coords.rank();
        if !(4..=5).contains(&r) || coords.dim(1) != r - 2 {
            return Err(DgirError::Shape(format!("field needs [n, d, spatial(d)], got {:?}", coords.shape())));
        }
        Ok(DeformationField { coords })
    }

    pub fn coords(&self) -> &Tensor<T> {
        &self.coords
    }

    pub fn into_coords(self) -> Tensor<T> {
        self.coords
    }

    pub fn ndim(&self) -> usize {
        self.coords.dim(1)
    }

    pub fn batch(&self) -> usize {
        self.coords.dim(0)
    }

    pub fn spatial(&self) -> &[usize] {
        &self.coords.shape()[2..]
    }

    pub fn detach(&self) -> Self {
        DeformationField { coords: self.coords.detach() }
    }

    pub fn cast<U: Real>(&self) -> DeformationField<U> {
        DeformationField { coords: self.coords.cast() }
    }

    /// Displacement `phi - id`.
    pub fn displacement(&self) -> Result<Tensor<T>> {
        let id = make_identity::<T>(self.spatial())?.batched(self.batch())?;
        Ok(self.coords.sub(&id.coords)?)
    }

    /// Repeats a single-sample field `n` times along the batch axis.
    pub fn batched(&self, n: usize) -> Result<Self> {
        if self.batch() == n {
            return Ok(self.clone());
        }
        if self.batch() != 1 {
            return Err(DgirError::Shape(format!("cannot broadcast batch {} to {n}", self.batch())));
        }
        Ok(DeformationField { coords: Tensor::concat(&vec![self.coords.clone(); n], 0)? })
    }

    /// Sample `i` of the batch.
    pub fn item(&self, i: usize) -> Result<Self> {
        Ok(DeformationField { coords: self.coords.narrow(0, i, 1)? })
    }
}

/// Normalised coordinate of index `i` on an axis of extent `n`.
pub fn grid_coord(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

/// Identity map for a grid of the given spatial shape.
pub fn make_identity<T: Real>(shape: &[usize]) -> Result<DeformationField<T>> {
    if !(2..=3).contains(&shape.len()) || shape.iter().any(|&n| n < 2) {
        return Err(DgirError::Shape(format!("identity needs 2 or 3 axes of extent >= 2, got {shape:?}")));
    }
    let d = shape.len();
    let vol: usize = shape.iter().product();
    let mut data = vec![T::zero(); d * vol];
    for p in 0..vol {
        let idx = unravel(p, shape);
        for k in 0..d {
            data[k * vol + p] = T::from_f64(grid_coord(idx[k], shape[k]));
        }
    }
    let mut full = vec![1, d];
    full.extend_from_slice(shape);
    DeformationField::new(Tensor::from_vec(data, &full)?)
}

fn unravel(mut p: usize, shape: &[usize]) -> [usize; 3] {
    let mut idx = [0; 3];
    for k in (0..shape.len()).rev() {
        idx[k] = p % shape[k];
        p /= shape[k];
    }
    idx
}

/// Multilinear resampling of `img` at `phi`, clamping to the border.
pub fn warp<T: Real>(img: &Tensor<T>, phi: &DeformationField<T>) -> Result<Tensor<T>> {
    if img.rank() != phi.ndim() + 2 {
        return Err(DgirError::Shape(format!(
            "{}-d field cannot warp image {:?}",
            phi.ndim(),
            img.shape()
        )));
    }
    let phi = phi.batched(img.dim(0))?;
    Ok(img.grid_sample(phi.coords())?)
}

/// `result(x) = outer(inner(x))`.
pub fn compose<T: Real>(outer: &DeformationField<T>, inner: &DeformationField<T>) -> Result<DeformationField<T>> {
    if outer.ndim() != inner.ndim() {
        return Err(DgirError::Shape(format!("compose {}-d with {}-d field", outer.ndim(), inner.ndim())));
    }
    let n = outer.batch().max(inner.batch());
    let o = outer.batched(n)?;
    let i = inner.batched(n)?;
    DeformationField::new(o.coords.grid_sample(i.coords())?)
}

/// Resamples an image onto a grid of `shape` covering the same domain.
pub fn resample<T: Real>(img: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    warp(img, &make_identity(shape)?)
}

/// Resamples a field onto a grid of `shape`; coordinates are absolute, so
/// this is plain interpolation of the coordinate channels.
pub fn resample_field<T: Real>(phi: &DeformationField<T>, shape: &[usize]) -> Result<DeformationField<T>> {
    compose(phi, &make_identity(shape)?)
}

/// Mean over the batch of `sum_{axes, components} mean(|D_k u_j|^2)` where
/// `u = phi - id` and `D_k` is the forward difference along axis `k` divided
/// by the normalised grid spacing.
pub fn displacement_gradient_penalty<T: Real>(phi: &DeformationField<T>) -> Result<Tensor<T>> {
    let u = phi.displacement()?;
    let d = phi.ndim();
    let mut total: Option<Tensor<T>> = None;
    for k in 0..d {
        let axis = k + 2;
        let n = u.dim(axis);
        let diff = u.narrow(axis, 1, n - 1)?.sub(&u.narrow(axis, 0, n - 1)?)?;
        let term = diff.scale((n - 1) as f64 / 2.0).sqr().mean_all().scale(d as f64);
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    Ok(total.expect("at least two axes"))
}

/// Jacobian determinant of each sample's map in grid-index units, shaped
/// `[n, spatial...]`. Central differences inside, one-sided at the border.
pub fn jacobian_determinant<T: Real>(phi: &DeformationField<T>) -> Result<Tensor<f64>> {
    let d = phi.ndim();
    let shape = phi.spatial().to_vec();
    if shape.iter().any(|&n| n < 2) {
        return Err(DgirError::Shape(format!("jacobian needs extent >= 2, got {shape:?}")));
    }
    let vol: usize = shape.iter().product();
    let mut strides = vec![1usize; d];
    for k in (0..d - 1).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    let c = phi.coords().to_f64_vec();
    let mut out = Vec::with_capacity(phi.batch() * vol);
    for b in 0..phi.batch() {
        // Index-unit positions per component.
        let pos: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let half = (shape[j] - 1) as f64 / 2.0;
                c[(b * d + j) * vol..(b * d + j + 1) * vol].iter().map(|&v| (v + 1.0) * half).collect()
            })
            .collect();
        for p in 0..vol {
            let idx = unravel(p, &shape);
            let mut m = [[0.0f64; 3]; 3];
            for k in 0..d {
                let i = idx[k];
                let (lo, hi, span) = if i == 0 {
                    (p, p + strides[k], 1.0)
                } else if i == shape[k] - 1 {
                    (p - strides[k], p, 1.0)
                } else {
                    (p - strides[k], p + strides[k], 2.0)
                };
                for j in 0..d {
                    m[j][k] = (pos[j][hi] - pos[j][lo]) / span;
                }
            }
            out.push(det(&m, d));
        }
    }
    let mut full = vec![phi.batch()];
    full.extend_from_slice(&shape);
    Ok(Tensor::from_vec(out, &full)?)
}

fn det(m: &[[f64; 3]; 3], d: usize) -> f64 {
    if d == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Whether a flat spatial index lies strictly inside the grid.
fn is_interior(p: usize, shape: &[usize]) -> bool {
    let idx = unravel(p, shape);
    (0..shape.len()).all(|k| idx[k] > 0 && idx[k] + 1 < shape[k])
}

/// Percentage of interior grid points, over all samples, whose Jacobian
/// determinant is negative. Grids without interior points report 0.
pub fn percent_negative_jacobian<T: Real>(phi: &DeformationField<T>) -> Result<f64> {
    let j = jacobian_determinant(phi)?;
    let shape = phi.spatial().to_vec();
    let vol: usize = shape.iter().product();
    let (mut neg, mut total) = (0usize, 0usize);
    for (q, &v) in j.data().iter().enumerate() {
        if is_interior(q % vol, &shape) {
            total += 1;
            if v < 0.0 {
                neg += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { 100.0 * neg as f64 / total as f64 })
}

/// Minimum Jacobian determinant over interior points.
pub fn min_interior_jacobian<T: Real>(phi: &DeformationField<T>) -> Result<f64> {
    let j = jacobian_determinant(phi)?;
    let shape = phi.spatial().to_vec();
    let vol: usize = shape.iter().product();
    Ok(j.data()
        .iter()
        .enumerate()
        .filter(|(q, _)| is_interior(q % vol, &shape))
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min))
}

/// Integer label volume, row-major over its spatial shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub shape: Vec<usize>,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(shape: Vec<usize>, labels: Vec<u8>) -> Result<Self> {
        if shape.iter().product::<usize>() != labels.len() {
            return Err(DgirError::Shape(format!("{} labels for shape {shape:?}", labels.len())));
        }
        Ok(LabelMap { shape, labels })
    }

    /// Binary mask of one label as a `[1, 1, spatial...]` tensor.
    pub fn mask<T: Real>(&self, label: u8) -> Tensor<T> {
        let data = self.labels.iter().map(|&l| if l == label { T::one() } else { T::zero() }).collect();
        let mut full = vec![1, 1];
        full.extend_from_slice(&self.shape);
        Tensor::from_vec(data, &full).expect("shape checked at construction")
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Nearest-neighbour warp of a label map by a single-sample field.
pub fn warp_labels<T: Real>(labels: &LabelMap, phi: &DeformationField<T>) -> Result<LabelMap> {
    if phi.batch() != 1 || labels.shape.len() != phi.ndim() {
        return Err(DgirError::Shape(format!(
            "labels {:?} with field {:?}",
            labels.shape,
            phi.coords().shape()
        )));
    }
    let d = phi.ndim();
    let out_shape = phi.spatial().to_vec();
    let vol: usize = out_shape.iter().product();
    let c = phi.coords().to_f64_vec();
    let src = &labels.shape;
    let mut out = Vec::with_capacity(vol);
    for p in 0..vol {
        let mut flat = 0;
        for k in 0..d {
            let n = src[k];
            let u = (c[k * vol + p] + 1.0) * (n - 1) as f64 / 2.0;
            let i = u.round().clamp(0.0, (n - 1) as f64) as usize;
            flat = flat * n + i;
        }
        out.push(labels.labels[flat]);
    }
    LabelMap::new(out_shape, out)
}
