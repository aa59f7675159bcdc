use crate::tensor::GradFn;
use crate::{Real, Tensor};

struct SumAll<T: Real> {
    x: Tensor<T>,
    scale: T,
}

impl<T: Real> GradFn<T> for SumAll<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0] * self.scale; self.x.numel()])]
    }
}

impl<T: Real> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], Vec::new(), SumAll { x: self.clone(), scale: T::one() })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_f64(self.numel().max(1) as f64);
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![s / n], Vec::new(), SumAll { x: self.clone(), scale: T::one() / n })
    }
}
