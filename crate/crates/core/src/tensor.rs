//! Dense row-major tensors and the forward kernels used by the model.
//!
//! Every kernel here is a pure function of its inputs. The differentiable
//! versions in [`crate::tape`] call into these for their forward values.

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
///
/// Matrix kernels view a rank-2 tensor as `rows × cols`, a rank-1 tensor of
/// length `n` as a `1 × n` row and a rank-0 tensor as `1 × 1`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "shape {shape:?} does not describe {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<T>) -> Self {
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    /// Convenience for literals in tests and examples.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
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

    /// Matrix view `(rows, cols)`.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols, cols)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts every element through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn add_scalar(&self, c: T) -> Self {
        self.map(|v| v + c)
    }

    /// In-place `self += other`, used for gradient accumulation.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(shape_err("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(T::tanh)
    }

    pub fn exp(&self) -> Self {
        self.map(T::exp)
    }

    pub fn powf(&self, p: T) -> Self {
        self.map(|v| v.powf(p))
    }

    /// `self · other` for `m×k` and `k×n` matrices.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return Err(shape_err("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (r, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[r * n..(r + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ` for `m×k` and `n×k` matrices.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2();
        let (n, k2) = other.dims2();
        if k != k2 {
            return Err(shape_err("matmul_t", &self.shape, &other.shape));
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.push(acc);
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `selfᵀ · other` for `k×m` and `k×n` matrices.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        let (k, m) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return Err(shape_err("t_matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for r in 0..k {
            let a_row = &self.data[r * m..(r + 1) * m];
            let b_row = &other.data[r * n..(r + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Repeats a single row (`1×C` or `[C]`) `rows` times.
    pub fn broadcast_rows(&self, rows: usize) -> Result<Self> {
        let (r, c) = self.dims2();
        if r != 1 {
            return Err(shape_err("broadcast_rows", &self.shape, &[1, c]));
        }
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(&self.data);
        }
        Ok(Self {
            shape: vec![rows, c],
            data: out,
        })
    }

    /// Repeats a single column (`R×1`) `cols` times.
    pub fn broadcast_cols(&self, cols: usize) -> Result<Self> {
        let (r, c) = self.dims2();
        if c != 1 {
            return Err(shape_err("broadcast_cols", &self.shape, &[r, 1]));
        }
        let mut out = Vec::with_capacity(r * cols);
        for &v in &self.data {
            out.extend(std::iter::repeat_n(v, cols));
        }
        Ok(Self {
            shape: vec![r, cols],
            data: out,
        })
    }

    /// Column sums as a `1×C` row.
    pub fn sum_rows(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        Self {
            shape: vec![1, c],
            data: out,
        }
    }

    /// Row sums as an `R×1` column.
    pub fn sum_cols(&self) -> Self {
        let (r, c) = self.dims2();
        let data = (0..r)
            .map(|i| self.data[i * c..(i + 1) * c].iter().copied().sum())
            .collect();
        Self {
            shape: vec![r, 1],
            data,
        }
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.dims2();
        if len == 0 || start + len > r {
            return Err(Error::Contract(format!(
                "slice_rows {start}..{} out of {r} rows",
                start + len
            )));
        }
        Ok(Self {
            shape: vec![len, c],
            data: self.data[start * c..(start + len) * c].to_vec(),
        })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.dims2();
        if len == 0 || start + len > c {
            return Err(Error::Contract(format!(
                "slice_cols {start}..{} out of {c} cols",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Ok(Self {
            shape: vec![r, len],
            data: out,
        })
    }

    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let c = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != c {
                return Err(shape_err("concat_rows", &first.shape, &p.shape));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![rows, c],
            data,
        })
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let r = first.rows();
        if let Some(p) = parts.iter().find(|p| p.rows() != r) {
            return Err(shape_err("concat_cols", &first.shape, &p.shape));
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self {
            shape: vec![r, total],
            data,
        })
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Self> {
        let (r, c) = self.dims2();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(Error::Contract(format!("gather row {i} out of {r}")));
            }
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Ok(Self {
            shape: vec![index.len(), c],
            data,
        })
    }

    /// Row-wise softmax over the columns flagged valid; invalid columns get
    /// exactly zero. The same column mask applies to every row.
    pub fn masked_softmax_rows(&self, valid: &[bool]) -> Result<Self> {
        let (r, c) = self.dims2();
        if valid.len() != c {
            return Err(shape_err("masked_softmax", &self.shape, &[valid.len()]));
        }
        if !valid.iter().any(|&v| v) {
            return Err(Error::Domain {
                op: "masked_softmax",
                msg: "every position is masked".into(),
            });
        }
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let max = row
                .iter()
                .zip(valid)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            let out_row = &mut out[i * c..(i + 1) * c];
            let mut total = T::zero();
            for ((o, &v), &ok) in out_row.iter_mut().zip(row).zip(valid) {
                if ok {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            for o in out_row.iter_mut() {
                *o /= total;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Branching keeps exp() from overflowing for large |x|.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax of a score vector restricted to the valid positions.
pub fn masked_softmax<T: Scalar>(scores: &Tensor<T>, valid: &[bool]) -> Result<Tensor<T>> {
    let flat = scores.reshape(&[1, scores.numel()])?;
    flat.masked_softmax_rows(valid)?.reshape(scores.shape())
}

/// `W·x + b` for a weight matrix `W: m×p`, input `x: [p]` and bias `b: [m]`.
pub fn affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, p) = w.dims2();
    if x.numel() != p {
        return Err(shape_err("affine", w.shape(), x.shape()));
    }
    if b.numel() != m {
        return Err(shape_err("affine", w.shape(), b.shape()));
    }
    let col = x.reshape(&[p, 1])?;
    let wx = w.matmul(&col)?.reshape(&[m])?;
    wx.add(&b.reshape(&[m])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(Tensor::eye(2).matmul(&a).unwrap(), a);
        let c = t(&[1, 2], &[1.0, 2.0]).matmul(&t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(c.data(), &[11.0]);
        let z = Tensor::<f64>::zeros(&[2, 3])
            .matmul(&t(&[3, 4], &[1.5; 12]))
            .unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::<f64>::zeros(&[2, 3])
            .matmul(&Tensor::zeros(&[2, 3]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let b = t(&[4, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2]);
        assert_eq!(a.matmul_t(&b).unwrap(), a.matmul(&b.transpose()).unwrap());
        let c = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(a.t_matmul(&c).unwrap(), a.transpose().matmul(&c).unwrap());
    }

    #[test]
    fn affine_cases() {
        let v = Tensor::vector(vec![0.3, -1.2]);
        let id = affine(&v, &Tensor::eye(2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(id, v);
        let y = affine(&t(&[1], &[3.0]), &t(&[1, 1], &[2.0]), &t(&[1], &[1.0])).unwrap();
        assert_eq!(y.data(), &[7.0]);
        let c = Tensor::vector(vec![4.0, -5.0]);
        let y = affine(&v, &Tensor::zeros(&[2, 2]), &c).unwrap();
        assert_eq!(y, c);
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0_f64), 0.5);
        assert_eq!(Tensor::scalar(0.0_f64).tanh().item().unwrap(), 0.0);
        assert!((sigmoid(3.0_f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0_f64).is_finite());
        assert!((sigmoid(800.0_f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn masked_softmax_cases() {
        let v = masked_softmax(&t(&[2], &[0.0, 0.0]), &[true, true]).unwrap();
        assert_eq!(v.data(), &[0.5, 0.5]);
        let v = masked_softmax(&t(&[2], &[2.0_f64.ln(), 0.0]), &[true, true]).unwrap();
        assert!((v.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let v = masked_softmax(&t(&[3], &[0.0, 0.0, 5.0]), &[true, true, false]).unwrap();
        assert_eq!(v.data(), &[0.5, 0.5, 0.0]);
        let err = masked_softmax(&t(&[2], &[0.0, 0.0]), &[false, false]).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn masked_softmax_is_stable_for_huge_scores() {
        let v = masked_softmax(&t(&[3], &[1000.0, 999.0, f64::MAX]), &[true, true, false]).unwrap();
        assert!(v.all_finite());
        assert!((v.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 2], vec![]).is_err());
    }
}
