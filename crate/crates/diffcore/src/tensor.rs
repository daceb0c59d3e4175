use crate::{DiffError, Real, Result};

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel = shape.iter().product::<usize>();
        if numel != data.len() {
            return Err(DiffError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[flat_index(&self.shape, index)]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        matmul(self, rhs, false, false)
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return Err(DiffError::BadAxis {
                axis: 1,
                shape: self.shape.clone(),
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        permute(self, &axes)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len());
    index
        .iter()
        .zip(strides(shape))
        .map(|(&i, s)| i * s)
        .sum()
}

/// Result shape of broadcasting `a` against `b` with trailing alignment.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat position of `out_shape`, the flat position in `in_shape`
/// that broadcasts onto it.
pub(crate) fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let r = out_shape.len();
    let offset = r - in_shape.len();
    let in_strides = strides(in_shape);
    let mut eff = vec![0usize; r];
    for i in 0..in_shape.len() {
        if in_shape[i] != 1 {
            eff[i + offset] = in_strides[i];
        }
    }
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; r];
    let mut pos = 0usize;
    for _ in 0..numel {
        map.push(pos);
        for d in (0..r).rev() {
            idx[d] += 1;
            pos += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            pos -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn broadcast_to<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    match broadcast_shapes(t.shape(), shape) {
        Some(s) if s == shape => {}
        _ => {
            return Err(DiffError::ShapeMismatch {
                op: "broadcast_to",
                lhs: t.shape.clone(),
                rhs: shape.to_vec(),
            })
        }
    }
    if t.shape == shape {
        return Ok(t.clone());
    }
    let map = broadcast_map(&t.shape, shape);
    Ok(Tensor {
        shape: shape.to_vec(),
        data: map.into_iter().map(|i| t.data[i]).collect(),
    })
}

/// Sums `grad` (of shape `out_shape`) back onto `in_shape`.
pub(crate) fn reduce_to<T: Real>(grad: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    if grad.shape == in_shape {
        return grad.clone();
    }
    let map = broadcast_map(in_shape, &grad.shape);
    let mut out = Tensor::zeros(in_shape);
    for (g, i) in grad.data.iter().zip(map) {
        out.data[i] = out.data[i] + *g;
    }
    out
}

pub(crate) fn zip_broadcast<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        return Ok(Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        });
    }
    let shape = broadcast_shapes(&a.shape, &b.shape).ok_or_else(|| DiffError::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    let data = if b.numel() == 1 && shape == a.shape {
        let y = b.data[0];
        a.data.iter().map(|&x| f(x, y)).collect()
    } else {
        let ma = broadcast_map(&a.shape, &shape);
        let mb = broadcast_map(&b.shape, &shape);
        ma.into_iter()
            .zip(mb)
            .map(|(i, j)| f(a.data[i], b.data[j]))
            .collect()
    };
    Ok(Tensor { shape, data })
}

pub(crate) fn permute<T: Real>(t: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let r = t.rank();
    let mut seen = vec![false; r];
    if axes.len() != r {
        return Err(DiffError::ShapeMismatch {
            op: "permute",
            lhs: t.shape.clone(),
            rhs: axes.to_vec(),
        });
    }
    for &a in axes {
        if a >= r || seen[a] {
            return Err(DiffError::BadAxis {
                axis: a,
                shape: t.shape.clone(),
            });
        }
        seen[a] = true;
    }
    let in_strides = strides(&t.shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel = t.numel();
    let mut data = Vec::with_capacity(numel);
    let mut idx = vec![0usize; r];
    let mut pos = 0usize;
    for _ in 0..numel {
        data.push(t.data[pos]);
        for d in (0..r).rev() {
            idx[d] += 1;
            pos += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            pos -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor {
        shape: out_shape,
        data,
    })
}

/// Batched matrix product over the last two axes. `rhs` may be rank 2, in
/// which case it is shared across every batch entry of `lhs`.
pub(crate) fn matmul<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    trans_a: bool,
    trans_b: bool,
) -> Result<Tensor<T>> {
    let mismatch = || DiffError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch());
    }
    let ra = a.rank();
    let rb = b.rank();
    let (am, ak) = (a.shape[ra - 2], a.shape[ra - 1]);
    let (bm, bk) = (b.shape[rb - 2], b.shape[rb - 1]);
    let (m, k) = if trans_a { (ak, am) } else { (am, ak) };
    let (k2, n) = if trans_b { (bk, bm) } else { (bm, bk) };
    if k != k2 {
        return Err(mismatch());
    }
    let batch_a = &a.shape[..ra - 2];
    let batch_b = &b.shape[..rb - 2];
    let shared_rhs = rb == 2;
    if !shared_rhs && batch_a != batch_b {
        return Err(mismatch());
    }
    let batches: usize = batch_a.iter().product();
    let mut shape = batch_a.to_vec();
    shape.extend([m, n]);
    let mut out = vec![T::zero(); batches * m * n];
    let (rsa, csa) = if trans_a { (1, ak as isize) } else { (ak as isize, 1) };
    let (rsb, csb) = if trans_b { (1, bk as isize) } else { (bk as isize, 1) };
    let sa = am * ak;
    let sb = bm * bk;
    for i in 0..batches {
        let bo = if shared_rhs { 0 } else { i * sb };
        T::gemm_acc(
            m,
            k,
            n,
            &a.data[i * sa..(i + 1) * sa],
            rsa,
            csa,
            &b.data[bo..bo + sb],
            rsb,
            csb,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Ok(Tensor { shape, data: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shapes(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[4, 1, 3], &[2, 1]), Some(vec![4, 2, 3]));
        assert_eq!(broadcast_shapes(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shapes(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn matmul_shapes_and_values() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[3, 4], &(0..12).map(f64::from).collect::<Vec<_>>())
            .unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert_eq!(c.data(), &[32., 38., 44., 50., 68., 83., 98., 113.]);
        assert!(matches!(
            b.matmul(&a),
            Err(DiffError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn permute_roundtrip() {
        let t = Tensor::<f64>::from_f64(&[2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>())
            .unwrap();
        let p = permute(&t, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        let back = permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn reduce_inverts_broadcast_sum() {
        let t = Tensor::<f64>::from_f64(&[3, 1], &[1., 2., 3.]).unwrap();
        let b = broadcast_to(&t, &[2, 3, 4]).unwrap();
        let r = reduce_to(&b, &[3, 1]);
        assert_eq!(r.data(), &[8., 16., 24.]);
    }
}
