//! Multilinear resampling at absolute normalised coordinates.
//!
//! Coordinates live in `[-1, 1]` per axis with corner alignment: `-1` is the
//! centre of the first sample and `1` the centre of the last. Channel `k` of
//! the coordinate tensor addresses spatial axis `k` of the image. Samples
//! outside the grid are clamped to the border, which also zeroes the
//! coordinate gradient there.

use crate::error::{shape_err, Result};
use crate::exec;
use crate::tensor::GradFn;
use crate::{Real, Tensor};

const MAX_CORNERS: usize = 8;

/// Interpolation stencil of one output point.
struct Stencil<T> {
    count: usize,
    index: [usize; MAX_CORNERS],
    weight: [T; MAX_CORNERS],
    /// d weight / d coordinate, per axis.
    dweight: [[T; MAX_CORNERS]; 3],
}

fn stencil<T: Real>(coords: &[T], point: usize, out_vol: usize, ext: &[usize]) -> Stencil<T> {
    let dims = ext.len();
    let mut lo = [0usize; 3];
    let mut frac = [T::zero(); 3];
    let mut scale = [T::zero(); 3];
    for a in 0..dims {
        let n = ext[a];
        if n < 2 {
            continue;
        }
        let half_span = T::from_f64((n - 1) as f64 * 0.5);
        let p = coords[a * out_vol + point];
        let u = (p + T::one()) * half_span;
        let max = T::from_f64((n - 1) as f64);
        let (u, inside) = if u < T::zero() {
            (T::zero(), false)
        } else if u > max {
            (max, false)
        } else {
            (u, true)
        };
        let i0 = (u.floor().as_f64() as usize).min(n - 2);
        lo[a] = i0;
        frac[a] = u - T::from_f64(i0 as f64);
        scale[a] = if inside { half_span } else { T::zero() };
    }
    let count = 1 << dims;
    let mut s = Stencil {
        count,
        index: [0; MAX_CORNERS],
        weight: [T::zero(); MAX_CORNERS],
        dweight: [[T::zero(); MAX_CORNERS]; 3],
    };
    for corner in 0..count {
        let mut idx = 0;
        let mut w = T::one();
        let mut axis_w = [T::one(); 3];
        let mut axis_dw = [T::zero(); 3];
        for a in 0..dims {
            let bit = (corner >> (dims - 1 - a)) & 1;
            let n = ext[a];
            let (i, wa, dwa) = if n < 2 {
                // Degenerate axis: only the first corner carries weight.
                (0, if bit == 0 { T::one() } else { T::zero() }, T::zero())
            } else if bit == 1 {
                (lo[a] + 1, frac[a], T::one())
            } else {
                (lo[a], T::one() - frac[a], -T::one())
            };
            idx = idx * n + i;
            w *= wa;
            axis_w[a] = wa;
            axis_dw[a] = dwa * scale[a];
        }
        s.index[corner] = idx;
        s.weight[corner] = w;
        for (a, &dwa) in axis_dw.iter().enumerate().take(dims) {
            let mut d = dwa;
            for (b, &wb) in axis_w.iter().enumerate().take(dims) {
                if b != a {
                    d *= wb;
                }
            }
            s.dweight[a][corner] = d;
        }
    }
    s
}

struct GridSample<T: Real> {
    img: Tensor<T>,
    coords: Tensor<T>,
}

impl<T: Real> GridSample<T> {
    fn sizes(&self) -> (usize, usize, usize, usize, Vec<usize>) {
        let dims = self.img.rank() - 2;
        let ext = self.img.shape()[2..].to_vec();
        let in_vol: usize = ext.iter().product();
        let out_vol = self.coords.numel() / (self.coords.dim(0) * dims);
        (self.img.dim(1), dims, in_vol, out_vol, ext)
    }
}

impl<T: Real> GradFn<T> for GridSample<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.img, &self.coords]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (c, dims, in_vol, out_vol, ext) = self.sizes();
        let img = self.img.data();
        let coords = self.coords.data();
        let mut gimg = self.img.requires_grad().then(|| vec![T::zero(); self.img.numel()]);
        let mut gcoords = self.coords.requires_grad().then(|| vec![T::zero(); self.coords.numel()]);
        let item = |n: usize, gi: Option<&mut [T]>, gc: Option<&mut [T]>| {
            let cn = &coords[n * dims * out_vol..(n + 1) * dims * out_vol];
            let imgn = &img[n * c * in_vol..(n + 1) * c * in_vol];
            let gn = &g[n * c * out_vol..(n + 1) * c * out_vol];
            let mut gi = gi;
            let mut gc = gc;
            for o in 0..out_vol {
                let s = stencil(cn, o, out_vol, &ext);
                for ch in 0..c {
                    let go = gn[ch * out_vol + o];
                    if go == T::zero() {
                        continue;
                    }
                    let plane = &imgn[ch * in_vol..(ch + 1) * in_vol];
                    if let Some(gi) = gi.as_deref_mut() {
                        for k in 0..s.count {
                            gi[ch * in_vol + s.index[k]] += go * s.weight[k];
                        }
                    }
                    if let Some(gc) = gc.as_deref_mut() {
                        for a in 0..dims {
                            let mut acc = T::zero();
                            for k in 0..s.count {
                                acc += s.dweight[a][k] * plane[s.index[k]];
                            }
                            gc[a * out_vol + o] += go * acc;
                        }
                    }
                }
            }
        };
        match (gimg.as_mut(), gcoords.as_mut()) {
            (Some(gi), Some(gc)) => exec::for_each_chunk_pair_mut(gi, c * in_vol, gc, dims * out_vol, |n, a, b| {
                item(n, Some(a), Some(b))
            }),
            (Some(gi), None) => exec::for_each_chunk_mut(gi, c * in_vol, |n, a| item(n, Some(a), None)),
            (None, Some(gc)) => exec::for_each_chunk_mut(gc, dims * out_vol, |n, b| item(n, None, Some(b))),
            (None, None) => {}
        }
        vec![gimg, gcoords]
    }
}

impl<T: Real> Tensor<T> {
    /// Samples `self[n, c, spatial...]` at `coords[n, d, out...]` by
    /// multilinear interpolation, returning `[n, c, out...]`.
    pub fn grid_sample(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        let rank = self.rank();
        if !(3..=5).contains(&rank) {
            return shape_err("grid_sample", format!("image shape {:?}", self.shape()));
        }
        let dims = rank - 2;
        if coords.rank() != rank || coords.dim(0) != self.dim(0) || coords.dim(1) != dims {
            return shape_err(
                "grid_sample",
                format!("image {:?} needs coordinates [n, {dims}, ...], got {:?}", self.shape(), coords.shape()),
            );
        }
        let n = self.dim(0);
        let c = self.dim(1);
        let ext = self.shape()[2..].to_vec();
        let in_vol: usize = ext.iter().product();
        let out_vol = coords.numel() / (n * dims);
        let img = self.data();
        let cd = coords.data();
        let mut y = vec![T::zero(); n * c * out_vol];
        exec::for_each_chunk_mut(&mut y, c * out_vol, |i, yn| {
            let cn = &cd[i * dims * out_vol..(i + 1) * dims * out_vol];
            let imgn = &img[i * c * in_vol..(i + 1) * c * in_vol];
            for o in 0..out_vol {
                let s = stencil(cn, o, out_vol, &ext);
                for ch in 0..c {
                    let plane = &imgn[ch * in_vol..(ch + 1) * in_vol];
                    let mut v = T::zero();
                    for k in 0..s.count {
                        v += s.weight[k] * plane[s.index[k]];
                    }
                    yn[ch * out_vol + o] = v;
                }
            }
        });
        let mut shape = vec![n, c];
        shape.extend_from_slice(&coords.shape()[2..]);
        Ok(Tensor::from_op(y, shape, GridSample { img: self.clone(), coords: coords.clone() }))
    }
}
