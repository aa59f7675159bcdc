use crate::error::{shape_err, Result};
use crate::tensor::GradFn;
use crate::{Real, Tensor};

struct Linear<T: Real> {
    x: Tensor<T>,
    w: Tensor<T>,
    b: Option<Tensor<T>>,
}

impl<T: Real> GradFn<T> for Linear<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.x, &self.w];
        if let Some(b) = &self.b {
            v.push(b);
        }
        v
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, i) = (self.x.dim(0), self.x.dim(1));
        let o = self.w.dim(0);
        let gx = self.x.requires_grad().then(|| {
            let mut gx = vec![T::zero(); n * i];
            T::gemm(n, o, i, T::one(), g, (o, 1), self.w.data(), (i, 1), T::zero(), &mut gx, (i, 1));
            gx
        });
        let gw = self.w.requires_grad().then(|| {
            let mut gw = vec![T::zero(); o * i];
            T::gemm(o, n, i, T::one(), g, (1, o), self.x.data(), (i, 1), T::zero(), &mut gw, (i, 1));
            gw
        });
        let mut grads = vec![gx, gw];
        if let Some(b) = &self.b {
            grads.push(b.requires_grad().then(|| {
                let mut gb = vec![T::zero(); o];
                for row in g.chunks(o) {
                    gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                gb
            }));
        }
        grads
    }
}

impl<T: Real> Tensor<T> {
    /// `x[n, in] -> x * w^T + b` with `w[out, in]` and `b[out]`.
    pub fn linear(&self, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        if self.rank() != 2 || w.rank() != 2 || self.dim(1) != w.dim(1) {
            return shape_err("linear", format!("input {:?} weight {:?}", self.shape(), w.shape()));
        }
        let (n, i, o) = (self.dim(0), self.dim(1), w.dim(0));
        if let Some(b) = b {
            if b.shape() != [o] {
                return shape_err("linear", format!("bias {:?} for {o} outputs", b.shape()));
            }
        }
        let mut y = vec![T::zero(); n * o];
        T::gemm(n, i, o, T::one(), self.data(), (i, 1), w.data(), (1, i), T::zero(), &mut y, (o, 1));
        if let Some(b) = b {
            for row in y.chunks_mut(o) {
                row.iter_mut().zip(b.data()).for_each(|(a, &v)| *a += v);
            }
        }
        Ok(Tensor::from_op(
            y,
            vec![n, o],
            Linear { x: self.clone(), w: w.clone(), b: b.cloned() },
        ))
    }
}
