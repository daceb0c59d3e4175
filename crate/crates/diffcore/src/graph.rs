use crate::tensor::{broadcast_to, matmul, permute, reduce_to, zip_broadcast};
use crate::{DiffError, Real, Result, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    Offset(Var),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Gather(Var, Vec<usize>),
    BroadcastTo(Var),
    SumAxis(Var, usize),
    SumAll(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm(Var, Vec<T>),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Softplus(Var),
    SmoothL1(Var),
    MaskedFill(Var, Vec<bool>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape. Nodes are appended in evaluation order, which is a valid
/// topological order; backward visits each node once in reverse.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar output with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that requires a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let v = zip_broadcast(name, self.value(a), self.value(b), f)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(v, op, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            Op::Softplus(a),
        )
    }

    /// Elementwise Huber function with unit threshold.
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        let half = T::lit(0.5);
        self.unary(
            a,
            move |x| {
                if x.abs() < T::one() {
                    half * x * x
                } else {
                    x.abs() - half
                }
            },
            Op::SmoothL1(a),
        )
    }

    /// Replaces entries where `mask` is true by `value`; those entries carry
    /// no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: T) -> Result<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(DiffError::ShapeMismatch {
                op: "masked_fill",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut v = self.value(a).clone();
        for (x, &m) in v.data_mut().iter_mut().zip(mask) {
            if m {
                *x = value;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(v, Op::MaskedFill(a, mask.to_vec()), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b), false, false)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = permute(self.value(a), axes)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Permute(a, axes.to_vec()), ng))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(DiffError::BadAxis {
                axis: 1,
                shape: self.shape(a).to_vec(),
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or(DiffError::BadAxis {
            axis,
            shape: vec![],
        })?)
        .to_vec();
        if axis >= first.len() {
            return Err(DiffError::BadAxis { axis, shape: first });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::BadAxis { axis, shape });
        }
        if start > end || end > shape[axis] {
            return Err(DiffError::IndexOutOfRange {
                index: end,
                len: shape[axis],
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::Slice(a, axis, start),
            ng,
        ))
    }

    /// Rows of `table` (along axis 0) selected by `indices`; also serves as
    /// embedding lookup.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.is_empty() {
            return Err(DiffError::BadAxis { axis: 0, shape });
        }
        let row: usize = shape[1..].iter().product();
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= shape[0] {
                return Err(DiffError::IndexOutOfRange {
                    index: i,
                    len: shape[0],
                });
            }
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::Gather(table, indices.to_vec()),
            ng,
        ))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = broadcast_to(self.value(a), shape)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::BroadcastTo(a), ng))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::BadAxis { axis, shape });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    data[o * inner + i] = data[o * inner + i] + src[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(&out_shape, data)?, Op::SumAxis(a, axis), ng))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self.shape(a).get(axis).ok_or_else(|| DiffError::BadAxis {
            axis,
            shape: self.shape(a).to_vec(),
        })?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, T::one() / T::lit(n as f64)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    fn last_axis_rows(&self, a: Var) -> Result<usize> {
        let shape = self.shape(a);
        match shape.last() {
            Some(&n) if n > 0 => Ok(n),
            _ => Err(DiffError::BadAxis {
                axis: 0,
                shape: shape.to_vec(),
            }),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis_rows(a)?;
        let mut v = self.value(a).clone();
        for row in v.data_mut().chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s = s + *x;
            }
            for x in row.iter_mut() {
                *x = *x / s;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(v, Op::Softmax(a), ng))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis_rows(a)?;
        let mut v = self.value(a).clone();
        for row in v.data_mut().chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
            for x in row.iter_mut() {
                *x = *x - lse;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(v, Op::LogSoftmax(a), ng))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Result<Var> {
        let n = self.last_axis_rows(a)?;
        let nf = T::lit(n as f64);
        let mut v = self.value(a).clone();
        let mut inv = Vec::with_capacity(v.numel() / n);
        for row in v.data_mut().chunks_mut(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv.push(is);
        }
        let ng = self.ng(a);
        Ok(self.push(v, Op::LayerNorm(a, inv), ng))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(DiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let elementwise = |a: Var, f: &dyn Fn(T, T, T) -> T| -> Tensor<T> {
            // f(input, output, upstream)
            let x = self.value(a);
            let data = x
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                .collect();
            Tensor::new(x.shape(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, reduce_to(g, self.shape(*a)));
                self.accumulate(grads, *b, reduce_to(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, reduce_to(g, self.shape(*a)));
                let gb = reduce_to(g, self.shape(*b)).map(|x| -x);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let full = zip_broadcast("mul", g, self.value(*b), |x, y| x * y)?;
                    self.accumulate(grads, *a, reduce_to(&full, self.shape(*a)));
                }
                if self.ng(*b) {
                    let full = zip_broadcast("mul", g, self.value(*a), |x, y| x * y)?;
                    self.accumulate(grads, *b, reduce_to(&full, self.shape(*b)));
                }
            }
            Op::Div(a, b) => {
                if self.ng(*a) {
                    let full = zip_broadcast("div", g, self.value(*b), |x, y| x / y)?;
                    self.accumulate(grads, *a, reduce_to(&full, self.shape(*a)));
                }
                if self.ng(*b) {
                    // d(a/b)/db = -out / b
                    let t = zip_broadcast("div", g, out, |x, y| -x * y)?;
                    let full = zip_broadcast("div", &t, self.value(*b), |x, y| x / y)?;
                    self.accumulate(grads, *b, reduce_to(&full, self.shape(*b)));
                }
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c))
            }
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.ng(*a) {
                    self.accumulate(grads, *a, matmul(g, bv, false, true)?);
                }
                if self.ng(*b) {
                    let gb = if bv.rank() == 2 && av.rank() > 2 {
                        let k = av.shape()[av.rank() - 1];
                        let n = g.shape()[g.rank() - 1];
                        let rows = av.numel() / k;
                        let a2 = av.clone().reshaped(&[rows, k])?;
                        let g2 = g.clone().reshaped(&[rows, n])?;
                        matmul(&a2, &g2, true, false)?
                    } else {
                        matmul(av, g, true, false)?
                    };
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                self.accumulate(grads, *a, permute(g, &inv)?);
            }
            Op::Reshape(a) => {
                let s = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.clone().reshaped(&s)?);
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p).to_vec();
                    let len = ps[*axis];
                    if self.ng(p) {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        self.accumulate(grads, p, Tensor::new(&ps, data)?);
                    }
                    offset += len;
                }
            }
            Op::Slice(a, axis, start) => {
                let shape = self.shape(*a).to_vec();
                let (outer, len, inner) = split_axis(&shape, *axis);
                let width = out.shape()[*axis] * inner;
                let mut ga = Tensor::zeros(&shape);
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    ga.data_mut()[dst..dst + width]
                        .copy_from_slice(&g.data()[o * width..(o + 1) * width]);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Gather(table, idx) => {
                let shape = self.shape(*table).to_vec();
                let row: usize = shape[1..].iter().product();
                let mut gt = Tensor::zeros(&shape);
                for (r, &i) in idx.iter().enumerate() {
                    let dst = &mut gt.data_mut()[i * row..(i + 1) * row];
                    for (d, &s) in dst.iter_mut().zip(&g.data()[r * row..(r + 1) * row]) {
                        *d = *d + s;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::BroadcastTo(a) => {
                self.accumulate(grads, *a, reduce_to(g, self.shape(*a)));
            }
            Op::SumAxis(a, axis) => {
                let shape = self.shape(*a).to_vec();
                let (outer, len, inner) = split_axis(&shape, *axis);
                let mut ga = Tensor::zeros(&shape);
                for o in 0..outer {
                    for l in 0..len {
                        let dst = (o * len + l) * inner;
                        ga.data_mut()[dst..dst + inner]
                            .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv));
            }
            Op::Softmax(a) => {
                let n = *out.shape().last().expect("rank >= 1");
                let mut ga = Tensor::zeros(out.shape());
                for ((gr, yr), dr) in g
                    .data()
                    .chunks(n)
                    .zip(out.data().chunks(n))
                    .zip(ga.data_mut().chunks_mut(n))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yi * (gi - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let n = *out.shape().last().expect("rank >= 1");
                let mut ga = Tensor::zeros(out.shape());
                for ((gr, yr), dr) in g
                    .data()
                    .chunks(n)
                    .zip(out.data().chunks(n))
                    .zip(ga.data_mut().chunks_mut(n))
                {
                    let s: T = gr.iter().copied().sum();
                    for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = gi - yi.exp() * s;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LayerNorm(a, inv) => {
                let n = *out.shape().last().expect("rank >= 1");
                let nf = T::lit(n as f64);
                let mut ga = Tensor::zeros(out.shape());
                for (((gr, yr), dr), &is) in g
                    .data()
                    .chunks(n)
                    .zip(out.data().chunks(n))
                    .zip(ga.data_mut().chunks_mut(n))
                    .zip(inv)
                {
                    let mg = gr.iter().copied().sum::<T>() / nf;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / nf;
                    for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = is * (gi - mg - yi * mgy);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let ga = elementwise(*a, &|x, _, gi| gi * gelu_grad(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = elementwise(*a, &|_, y, gi| gi * y * (T::one() - y));
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = elementwise(*a, &|_, y, gi| gi * (T::one() - y * y));
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = elementwise(*a, &|_, y, gi| gi * y);
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = elementwise(*a, &|x, _, gi| gi / x);
                self.accumulate(grads, *a, ga);
            }
            Op::Sqrt(a) => {
                let ga = elementwise(*a, &|_, y, gi| gi / (T::lit(2.0) * y));
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let ga = elementwise(*a, &|x, _, gi| gi * T::lit(2.0) * x);
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = elementwise(*a, &|x, _, gi| gi * sigmoid(x));
                self.accumulate(grads, *a, ga);
            }
            Op::SmoothL1(a) => {
                let ga = elementwise(*a, &|x, _, gi| {
                    if x.abs() < T::one() {
                        gi * x
                    } else {
                        gi * x.signum()
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::MaskedFill(a, mask) => {
                let mut ga = g.clone();
                for (d, &m) in ga.data_mut().iter_mut().zip(mask) {
                    if m {
                        *d = T::zero();
                    }
                }
                self.accumulate(grads, *a, ga);
            }
        }
        Ok(())
    }
}
