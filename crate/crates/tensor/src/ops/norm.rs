use crate::error::{invalid, shape_err, Result};
use crate::tensor::GradFn;
use crate::{Real, Tensor};

struct GroupNorm<T: Real> {
    x: Tensor<T>,
    gamma: Tensor<T>,
    beta: Tensor<T>,
    groups: usize,
    mean: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Real> GroupNorm<T> {
    fn layout(&self) -> (usize, usize, usize) {
        let c = self.x.dim(1);
        let spatial = self.x.numel() / (self.x.dim(0) * c);
        (c, c / self.groups, spatial)
    }
}

impl<T: Real> GradFn<T> for GroupNorm<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x, &self.gamma, &self.beta]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (c, per_group, spatial) = self.layout();
        let group_len = per_group * spatial;
        let x = self.x.data();
        let gamma = self.gamma.data();
        let mut gx = self.x.requires_grad().then(|| vec![T::zero(); x.len()]);
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for (gi, (xs, gs)) in x.chunks(group_len).zip(g.chunks(group_len)).enumerate() {
            let (mean, rstd) = (self.mean[gi], self.rstd[gi]);
            let first_channel = (gi % self.groups) * per_group;
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for (j, (&xv, &gv)) in xs.iter().zip(gs).enumerate() {
                let ch = first_channel + j / spatial;
                let xhat = (xv - mean) * rstd;
                let dxhat = gv * gamma[ch];
                m1 += dxhat;
                m2 += dxhat * xhat;
                ggamma[ch] += gv * xhat;
                gbeta[ch] += gv;
            }
            if let Some(gx) = gx.as_mut() {
                let inv = T::one() / T::from_f64(group_len as f64);
                let (m1, m2) = (m1 * inv, m2 * inv);
                let dst = &mut gx[gi * group_len..(gi + 1) * group_len];
                for (j, ((&xv, &gv), d)) in xs.iter().zip(gs).zip(dst.iter_mut()).enumerate() {
                    let ch = first_channel + j / spatial;
                    let xhat = (xv - mean) * rstd;
                    *d = rstd * (gv * gamma[ch] - m1 - xhat * m2);
                }
            }
        }
        vec![
            gx,
            self.gamma.requires_grad().then_some(ggamma),
            self.beta.requires_grad().then_some(gbeta),
        ]
    }
}

impl<T: Real> Tensor<T> {
    /// Group normalisation over `[n, c, spatial...]` with per-channel affine.
    pub fn group_norm(&self, groups: usize, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        self.check_rank_at_least(3, "group_norm")?;
        let c = self.dim(1);
        if groups == 0 || !c.is_multiple_of(groups) {
            return invalid("group_norm", format!("{groups} groups for {c} channels"));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return shape_err("group_norm", format!("affine {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()));
        }
        let per_group = c / groups;
        let spatial = self.numel() / (self.dim(0) * c);
        let group_len = per_group * spatial;
        let count = T::from_f64(group_len as f64);
        let x = self.data();
        let mut y = Vec::with_capacity(x.len());
        let mut means = Vec::new();
        let mut rstds = Vec::new();
        for (gi, xs) in x.chunks(group_len).enumerate() {
            let mean = xs.iter().copied().sum::<T>() / count;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let rstd = T::one() / (var + T::from_f64(eps)).sqrt();
            let first_channel = (gi % groups) * per_group;
            y.extend(xs.iter().enumerate().map(|(j, &v)| {
                let ch = first_channel + j / spatial;
                (v - mean) * rstd * gamma.data()[ch] + beta.data()[ch]
            }));
            means.push(mean);
            rstds.push(rstd);
        }
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            GroupNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                groups,
                mean: means,
                rstd: rstds,
            },
        ))
    }
}
