use crate::error::{invalid, shape_err, Result};
use crate::tensor::{numel, GradFn};
use crate::{Real, Tensor};

struct Reshape<T: Real> {
    x: Tensor<T>,
}

impl<T: Real> GradFn<T> for Reshape<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct Narrow<T: Real> {
    x: Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
}

impl<T: Real> GradFn<T> for Narrow<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (outer, extent, inner) = split_axis(self.x.shape(), self.axis);
        let mut gx = vec![T::zero(); self.x.numel()];
        let run = self.len * inner;
        for o in 0..outer {
            let src = &g[o * run..(o + 1) * run];
            let dst_start = (o * extent + self.start) * inner;
            gx[dst_start..dst_start + run].copy_from_slice(src);
        }
        vec![Some(gx)]
    }
}

struct Concat<T: Real> {
    parts: Vec<Tensor<T>>,
    axis: usize,
}

impl<T: Real> GradFn<T> for Concat<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        self.parts.iter().collect()
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (outer, _, inner) = split_axis(self.parts[0].shape(), self.axis);
        let total: usize = self.parts.iter().map(|p| p.dim(self.axis)).sum();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let ext = p.dim(self.axis);
            if p.requires_grad() {
                let mut gp = Vec::with_capacity(p.numel());
                for o in 0..outer {
                    let s = (o * total + offset) * inner;
                    gp.extend_from_slice(&g[s..s + ext * inner]);
                }
                grads.push(Some(gp));
            } else {
                grads.push(None);
            }
            offset += ext;
        }
        grads
    }
}

/// Nearest-neighbour upsampling by two along every spatial axis (axes >= 2).
struct Upsample2<T: Real> {
    x: Tensor<T>,
}

/// Spatial dims of an `[n, c, spatial...]` tensor padded to three axes.
pub(crate) fn spatial3(shape: &[usize]) -> [usize; 3] {
    match shape.len() {
        3 => [1, 1, shape[2]],
        4 => [1, shape[2], shape[3]],
        5 => [shape[2], shape[3], shape[4]],
        _ => unreachable!("spatial tensors have rank 3..=5"),
    }
}

fn upsample_factors(rank: usize) -> [usize; 3] {
    match rank {
        3 => [1, 1, 2],
        4 => [1, 2, 2],
        _ => [2, 2, 2],
    }
}

impl<T: Real> GradFn<T> for Upsample2<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let [d, h, w] = spatial3(self.x.shape());
        let [fd, fh, fw] = upsample_factors(self.x.rank());
        let (od, oh, ow) = (d * fd, h * fh, w * fw);
        let planes = self.x.dim(0) * self.x.dim(1);
        let mut gx = vec![T::zero(); self.x.numel()];
        for p in 0..planes {
            let src = &g[p * od * oh * ow..(p + 1) * od * oh * ow];
            let dst = &mut gx[p * d * h * w..(p + 1) * d * h * w];
            for z in 0..od {
                for y in 0..oh {
                    let row = &src[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                    let base = ((z / fd) * h + y / fh) * w;
                    for (x, &v) in row.iter().enumerate() {
                        dst[base + x / fw] += v;
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return shape_err("reshape", format!("{:?} -> {:?}", self.shape(), shape));
        }
        Ok(Tensor::from_op_shared(self.shared_data(), shape.to_vec(), Reshape { x: self.clone() }))
    }

    /// The sub-tensor `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || start + len > self.dim(axis) {
            return invalid(
                "narrow",
                format!("axis {axis} range {start}..{} on shape {:?}", start + len, self.shape()),
            );
        }
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        let x = self.data();
        for o in 0..outer {
            let s = (o * extent + start) * inner;
            data.extend_from_slice(&x[s..s + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(data, shape, Narrow { x: self.clone(), axis, start, len }))
    }

    /// Removes `axis` after taking index `index` along it.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor<T>> {
        let t = self.narrow(axis, index, 1)?;
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        t.reshape(&shape)
    }

    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let Some(first) = parts.first() else {
            return invalid("concat", "no tensors");
        };
        if axis >= first.rank() {
            return invalid("concat", format!("axis {axis} for shape {:?}", first.shape()));
        }
        for p in parts {
            let same = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return shape_err("concat", format!("{:?} vs {:?} along axis {axis}", p.shape(), first.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.dim(axis)).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let run = p.dim(axis) * inner;
                data.extend_from_slice(&p.data()[o * run..(o + 1) * run]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(data, shape, Concat { parts: parts.to_vec(), axis }))
    }

    /// Repeats a single-channel `[n, 1, ...]` tensor to `channels` channels.
    pub fn repeat_channels(&self, channels: usize) -> Result<Tensor<T>> {
        self.check_rank_at_least(3, "repeat_channels")?;
        if self.dim(1) == channels {
            return Ok(self.clone());
        }
        if self.dim(1) != 1 {
            return shape_err("repeat_channels", format!("cannot map {:?} to {channels} channels", self.shape()));
        }
        let parts = vec![self.clone(); channels];
        Tensor::concat(&parts, 1)
    }

    /// Nearest-neighbour x2 upsampling of every spatial axis.
    pub fn upsample_nearest2(&self) -> Result<Tensor<T>> {
        if !(3..=5).contains(&self.rank()) {
            return invalid("upsample_nearest2", format!("shape {:?}", self.shape()));
        }
        let [d, h, w] = spatial3(self.shape());
        let [fd, fh, fw] = upsample_factors(self.rank());
        let (od, oh, ow) = (d * fd, h * fh, w * fw);
        let planes = self.dim(0) * self.dim(1);
        let x = self.data();
        let mut data = Vec::with_capacity(planes * od * oh * ow);
        for p in 0..planes {
            let plane = &x[p * d * h * w..(p + 1) * d * h * w];
            for z in 0..od {
                for y in 0..oh {
                    let base = ((z / fd) * h + y / fh) * w;
                    data.extend((0..ow).map(|xx| plane[base + xx / fw]));
                }
            }
        }
        let mut shape = self.shape().to_vec();
        for s in shape.iter_mut().skip(2) {
            *s *= 2;
        }
        Ok(Tensor::from_op(data, shape, Upsample2 { x: self.clone() }))
    }
}
