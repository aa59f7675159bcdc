use crate::error::{invalid, Result};
use crate::tensor::GradFn;
use crate::{Real, Tensor};

/// Sliding sums over fully contained windows along one axis.
struct BoxSum<T: Real> {
    x: Tensor<T>,
    axis: usize,
    window: usize,
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product())
}

impl<T: Real> GradFn<T> for BoxSum<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (outer, n, inner) = axis_layout(self.x.shape(), self.axis);
        let w = self.window;
        let m = n + 1 - w;
        let mut gx = vec![T::zero(); self.x.numel()];
        for o in 0..outer {
            let gsrc = &g[o * m * inner..(o + 1) * m * inner];
            let dst = &mut gx[o * n * inner..(o + 1) * n * inner];
            // gx[k] = sum of g[j] for j in [k + 1 - w, k] clipped to [0, m).
            for k in 0..n {
                let lo = (k + 1).saturating_sub(w);
                let hi = k.min(m - 1);
                let row = &mut dst[k * inner..(k + 1) * inner];
                for j in lo..=hi {
                    let src = &gsrc[j * inner..(j + 1) * inner];
                    row.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                }
            }
        }
        vec![Some(gx)]
    }
}

impl<T: Real> Tensor<T> {
    /// Sums over every length-`window` run along `axis`; the axis shrinks to
    /// `extent - window + 1`.
    pub fn box_sum(&self, axis: usize, window: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || window == 0 || window > self.dim(axis) {
            return invalid(
                "box_sum",
                format!("window {window} on axis {axis} of shape {:?}", self.shape()),
            );
        }
        let (outer, n, inner) = axis_layout(self.shape(), axis);
        let m = n + 1 - window;
        let x = self.data();
        let mut y = vec![T::zero(); outer * m * inner];
        for o in 0..outer {
            let src = &x[o * n * inner..(o + 1) * n * inner];
            let dst = &mut y[o * m * inner..(o + 1) * m * inner];
            for j in 0..m {
                let row = &mut dst[j * inner..(j + 1) * inner];
                for k in j..j + window {
                    let s = &src[k * inner..(k + 1) * inner];
                    row.iter_mut().zip(s).for_each(|(a, &b)| *a += b);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        Ok(Tensor::from_op(y, shape, BoxSum { x: self.clone(), axis, window }))
    }

    /// [`Tensor::box_sum`] applied along every spatial axis (axes >= 2).
    pub fn box_sum_spatial(&self, window: usize) -> Result<Tensor<T>> {
        self.check_rank_at_least(3, "box_sum_spatial")?;
        let mut t = self.clone();
        for axis in 2..self.rank() {
            t = t.box_sum(axis, window)?;
        }
        Ok(t)
    }
}
