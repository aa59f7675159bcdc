//! Strided, zero-padded convolution over 1, 2 or 3 spatial axes.
//!
//! Every case is lowered to a 3D problem (missing leading axes have extent 1)
//! and computed per batch item as im2col followed by one GEMM.

use crate::error::{invalid, shape_err, Result};
use crate::exec;
use crate::ops::shape::spatial3;
use crate::tensor::GradFn;
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.out.iter().product()
    }

    fn patch(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

#[inline]
fn source_index(o: usize, stride: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < extent).then_some(i as usize)
}

fn im2col<T: Real>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.out;
    let p = g.out_volume();
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for oz in 0..od {
                        let Some(iz) = source_index(oz, g.stride[0], kz, g.pad[0], d) else {
                            dst[idx..idx + oh * ow].fill(T::zero());
                            idx += oh * ow;
                            continue;
                        };
                        for oy in 0..oh {
                            let Some(iy) = source_index(oy, g.stride[1], ky, g.pad[1], h) else {
                                dst[idx..idx + ow].fill(T::zero());
                                idx += ow;
                                continue;
                            };
                            let src = &plane[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                            for (ox, v) in dst[idx..idx + ow].iter_mut().enumerate() {
                                *v = match source_index(ox, g.stride[2], kx, g.pad[2], w) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                            idx += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.out;
    let p = g.out_volume();
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for oz in 0..od {
                        let Some(iz) = source_index(oz, g.stride[0], kz, g.pad[0], d) else {
                            idx += oh * ow;
                            continue;
                        };
                        for oy in 0..oh {
                            let Some(iy) = source_index(oy, g.stride[1], ky, g.pad[1], h) else {
                                idx += ow;
                                continue;
                            };
                            let dst = &mut plane[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                            for (ox, &v) in src[idx..idx + ow].iter().enumerate() {
                                if let Some(ix) = source_index(ox, g.stride[2], kx, g.pad[2], w) {
                                    dst[ix] += v;
                                }
                            }
                            idx += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Column matrix for one batch item, borrowed directly for pointwise kernels.
fn columns<'a, T: Real>(x: &'a [T], g: &Geometry, buf: &'a mut Vec<T>) -> &'a [T] {
    if g.is_pointwise() {
        return x;
    }
    buf.resize(g.patch() * g.out_volume(), T::zero());
    im2col(x, g, buf);
    buf
}

struct Conv<T: Real> {
    x: Tensor<T>,
    w: Tensor<T>,
    b: Option<Tensor<T>>,
    geom: Geometry,
}

impl<T: Real> GradFn<T> for Conv<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.x, &self.w];
        if let Some(b) = &self.b {
            v.push(b);
        }
        v
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let geom = self.geom;
        let (k, p, cout) = (geom.patch(), geom.out_volume(), geom.cout);
        let in_item = geom.cin * geom.in_volume();
        let out_item = cout * p;
        let w = self.w.data();
        let x = self.x.data();

        let gx = self.x.requires_grad().then(|| {
            let mut gx = vec![T::zero(); self.x.numel()];
            exec::for_each_chunk_mut(&mut gx, in_item, |n, dx| {
                let gn = &g[n * out_item..(n + 1) * out_item];
                if geom.is_pointwise() {
                    T::gemm(k, cout, p, T::one(), w, (1, k), gn, (p, 1), T::zero(), dx, (p, 1));
                } else {
                    let mut dcols = vec![T::zero(); k * p];
                    T::gemm(k, cout, p, T::one(), w, (1, k), gn, (p, 1), T::zero(), &mut dcols, (p, 1));
                    col2im(&dcols, &geom, dx);
                }
            });
            gx
        });

        let gw = self.w.requires_grad().then(|| {
            let batch = self.x.dim(0);
            let partials = exec::map_range(batch, |n| {
                let mut buf = Vec::new();
                let cols = columns(&x[n * in_item..(n + 1) * in_item], &geom, &mut buf);
                let gn = &g[n * out_item..(n + 1) * out_item];
                let mut gw = vec![T::zero(); cout * k];
                T::gemm(cout, p, k, T::one(), gn, (p, 1), cols, (1, p), T::zero(), &mut gw, (k, 1));
                gw
            });
            let mut gw = vec![T::zero(); cout * k];
            for part in partials {
                gw.iter_mut().zip(&part).for_each(|(a, &b)| *a += b);
            }
            gw
        });

        let mut grads = vec![gx, gw];
        if let Some(b) = &self.b {
            grads.push(b.requires_grad().then(|| {
                let mut gb = vec![T::zero(); cout];
                for (i, plane) in g.chunks(p).enumerate() {
                    gb[i % cout] += plane.iter().copied().sum::<T>();
                }
                gb
            }));
        }
        grads
    }
}

impl<T: Real> Tensor<T> {
    /// Cross-correlation of `self[n, cin, spatial...]` with `w[cout, cin, kernel...]`.
    ///
    /// `stride` and `padding` apply uniformly to every spatial axis.
    pub fn conv(&self, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if !(3..=5).contains(&rank) || w.rank() != rank {
            return shape_err("conv", format!("input {:?} kernel {:?}", self.shape(), w.shape()));
        }
        if stride == 0 {
            return invalid("conv", "stride must be positive");
        }
        let (n, cin) = (self.dim(0), self.dim(1));
        let cout = w.dim(0);
        if w.dim(1) != cin {
            return shape_err("conv", format!("input has {cin} channels, kernel expects {}", w.dim(1)));
        }
        if let Some(b) = b {
            if b.shape() != [cout] {
                return shape_err("conv", format!("bias {:?} for {cout} outputs", b.shape()));
            }
        }
        let input = spatial3(self.shape());
        let kernel = spatial3(w.shape());
        let lead = 5 - rank;
        let mut strides = [stride; 3];
        let mut pads = [padding; 3];
        for i in 0..lead {
            strides[i] = 1;
            pads[i] = 0;
        }
        let mut out = [0; 3];
        for i in 0..3 {
            let span = input[i] + 2 * pads[i];
            if span < kernel[i] {
                return shape_err("conv", format!("kernel {:?} larger than padded input {:?}", w.shape(), self.shape()));
            }
            out[i] = (span - kernel[i]) / strides[i] + 1;
        }
        let geom = Geometry { cin, cout, input, kernel, stride: strides, pad: pads, out };
        let (k, p) = (geom.patch(), geom.out_volume());
        let in_item = cin * geom.in_volume();
        let x = self.data();
        let wd = w.data();
        let mut y = vec![T::zero(); n * cout * p];
        exec::for_each_chunk_mut(&mut y, cout * p, |i, yn| {
            let mut buf = Vec::new();
            let cols = columns(&x[i * in_item..(i + 1) * in_item], &geom, &mut buf);
            T::gemm(cout, k, p, T::one(), wd, (k, 1), cols, (p, 1), T::zero(), yn, (p, 1));
            if let Some(b) = b {
                for (plane, &bv) in yn.chunks_mut(p).zip(b.data()) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
        let mut shape = vec![n, cout];
        shape.extend_from_slice(&out[lead..]);
        Ok(Tensor::from_op(
            y,
            shape,
            Conv { x: self.clone(), w: w.clone(), b: b.cloned(), geom },
        ))
    }
}
