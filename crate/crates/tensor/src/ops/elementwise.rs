use crate::error::{shape_err, Result};
use crate::tensor::GradFn;
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct Binary<T: Real> {
    kind: BinaryKind,
    a: Tensor<T>,
    b: Tensor<T>,
}

impl<T: Real> GradFn<T> for Binary<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (self.a.data(), self.b.data());
        let need_a = self.a.requires_grad();
        let need_b = self.b.requires_grad();
        let (ga, gb) = match self.kind {
            BinaryKind::Add => (need_a.then(|| g.to_vec()), need_b.then(|| g.to_vec())),
            BinaryKind::Sub => (
                need_a.then(|| g.to_vec()),
                need_b.then(|| g.iter().map(|&v| -v).collect()),
            ),
            BinaryKind::Mul => (
                need_a.then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
                need_b.then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
            ),
            BinaryKind::Div => (
                need_a.then(|| g.iter().zip(b).map(|(&g, &b)| g / b).collect()),
                need_b.then(|| {
                    g.iter()
                        .zip(a.iter().zip(b))
                        .map(|(&g, (&a, &b))| -g * a / (b * b))
                        .collect()
                }),
            ),
        };
        vec![ga, gb]
    }
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Neg,
    Sqr,
    Sqrt,
    Exp,
    Relu,
    LeakyRelu(f64),
    Silu,
    Tanh,
    Scale(f64),
    AddScalar(f64),
    Clamp(f64, f64),
}

impl UnaryKind {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Sqr => x * x,
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Relu => x.max(T::zero()),
            UnaryKind::LeakyRelu(s) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::from_f64(s)
                }
            }
            UnaryKind::Silu => x / (T::one() + (-x).exp()),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Scale(s) => x * T::from_f64(s),
            UnaryKind::AddScalar(s) => x + T::from_f64(s),
            UnaryKind::Clamp(lo, hi) => x.max(T::from_f64(lo)).min(T::from_f64(hi)),
        }
    }

    /// dy/dx given input and output.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        let one = T::one();
        match self {
            UnaryKind::Neg => -one,
            UnaryKind::Sqr => x + x,
            UnaryKind::Sqrt => T::from_f64(0.5) / y,
            UnaryKind::Exp => y,
            UnaryKind::Relu => {
                if x > T::zero() {
                    one
                } else {
                    T::zero()
                }
            }
            UnaryKind::LeakyRelu(s) => {
                if x > T::zero() {
                    one
                } else {
                    T::from_f64(s)
                }
            }
            UnaryKind::Silu => {
                let sig = one / (one + (-x).exp());
                sig * (one + x * (one - sig))
            }
            UnaryKind::Tanh => one - y * y,
            UnaryKind::Scale(s) => T::from_f64(s),
            UnaryKind::AddScalar(_) => one,
            UnaryKind::Clamp(lo, hi) => {
                if x < T::from_f64(lo) || x > T::from_f64(hi) {
                    T::zero()
                } else {
                    one
                }
            }
        }
    }
}

struct Unary<T: Real> {
    kind: UnaryKind,
    x: Tensor<T>,
}

impl<T: Real> GradFn<T> for Unary<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = self.x.data();
        let gx = g
            .iter()
            .zip(x.iter().zip(out))
            .map(|(&g, (&x, &y))| g * self.kind.derivative(x, y))
            .collect();
        vec![Some(gx)]
    }
}

/// Channel-broadcast addition: `x[n, c, ...] + b[c]` or `x[n, c, ...] + b[n, c]`.
struct AddChannels<T: Real> {
    x: Tensor<T>,
    b: Tensor<T>,
    per_sample: bool,
}

impl<T: Real> GradFn<T> for AddChannels<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x, &self.b]
    }

    fn backward(&self, _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let gx = self.x.requires_grad().then(|| g.to_vec());
        let gb = self.b.requires_grad().then(|| {
            let (n, c) = (self.x.dim(0), self.x.dim(1));
            let inner = self.x.numel() / (n * c);
            let mut gb = vec![T::zero(); self.b.numel()];
            for (i, block) in g.chunks(inner).enumerate() {
                let s: T = block.iter().copied().sum();
                let idx = if self.per_sample { i } else { i % c };
                gb[idx] += s;
            }
            gb
        });
        vec![gx, gb]
    }
}

impl<T: Real> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: BinaryKind, op: &'static str) -> Result<Tensor<T>> {
        self.check_same_shape(other, op)?;
        let (a, b) = (self.data(), other.data());
        let data: Vec<T> = match kind {
            BinaryKind::Add => a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
            BinaryKind::Sub => a.iter().zip(b).map(|(&x, &y)| x - y).collect(),
            BinaryKind::Mul => a.iter().zip(b).map(|(&x, &y)| x * y).collect(),
            BinaryKind::Div => a.iter().zip(b).map(|(&x, &y)| x / y).collect(),
        };
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Binary { kind, a: self.clone(), b: other.clone() },
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Add, "add")
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Div, "div")
    }

    fn unary(&self, kind: UnaryKind) -> Tensor<T> {
        let data = self.data().iter().map(|&x| kind.apply(x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Unary { kind, x: self.clone() })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(UnaryKind::Neg)
    }

    pub fn sqr(&self) -> Tensor<T> {
        self.unary(UnaryKind::Sqr)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(UnaryKind::Exp)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(UnaryKind::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        self.unary(UnaryKind::LeakyRelu(slope))
    }

    pub fn silu(&self) -> Tensor<T> {
        self.unary(UnaryKind::Silu)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        self.unary(UnaryKind::Scale(s))
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        self.unary(UnaryKind::AddScalar(s))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        self.unary(UnaryKind::Clamp(lo, hi))
    }

    /// `self * a + other * b`, the affine mix used by the forward noising step.
    pub fn affine_mix(&self, a: f64, other: &Tensor<T>, b: f64) -> Result<Tensor<T>> {
        self.scale(a).add(&other.scale(b))
    }

    /// Adds a per-channel vector `b[c]` to `self[n, c, ...]`.
    pub fn add_channel_bias(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_rank_at_least(2, "add_channel_bias")?;
        let c = self.dim(1);
        if b.shape() != [c] {
            return shape_err("add_channel_bias", format!("bias {:?} for input {:?}", b.shape(), self.shape()));
        }
        let inner = self.numel() / (self.dim(0) * c);
        let mut data = self.to_vec();
        if inner > 0 {
            for (i, block) in data.chunks_mut(inner).enumerate() {
                let v = b.data()[i % c];
                block.iter_mut().for_each(|x| *x += v);
            }
        }
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            AddChannels { x: self.clone(), b: b.clone(), per_sample: false },
        ))
    }

    /// Adds `e[n, c]` to every spatial position of `self[n, c, ...]`.
    pub fn add_sample_channels(&self, e: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_rank_at_least(2, "add_sample_channels")?;
        let (n, c) = (self.dim(0), self.dim(1));
        if e.shape() != [n, c] {
            return shape_err("add_sample_channels", format!("{:?} for input {:?}", e.shape(), self.shape()));
        }
        let inner = self.numel() / (n * c);
        let mut data = self.to_vec();
        if inner > 0 {
            for (i, block) in data.chunks_mut(inner).enumerate() {
                let v = e.data()[i];
                block.iter_mut().for_each(|x| *x += v);
            }
        }
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            AddChannels { x: self.clone(), b: e.clone(), per_sample: true },
        ))
    }
}
