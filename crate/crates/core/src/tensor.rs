//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is an immutable value once produced: every operation returns a
//! fresh tensor. Matrix products go through `matrixmultiply`'s strided `dgemm`,
//! which lets the backward pass use transposed operands without copying.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::Parameter(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// A rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::Parameter("from_rows needs at least one row".into()));
        }
        let n = rows[0].len();
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::dim("Tensor::from_rows", &[m, n], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new([m, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all extents after the first.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::dim("reshape", &self.shape, &shape));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    /// Rows `idx` gathered into a new `[idx.len() × cols]` tensor (keeps trailing extents).
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = idx.len();
        Tensor::from_parts(shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim("zip_map", &self.shape, &other.shape));
        }
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the maximum in each row; ties go to the smallest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::dim(op, other, &[0, 0])),
    }
}

/// `c (+)= op(a) · op(b)` on raw row-major buffers, where `op` optionally
/// transposes. `a` is stored `[m×k]` (or `[k×m]` if `ta`), `b` is `[k×n]`
/// (or `[n×k]` if `tb`), and `c` is `[m×n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the buffer lengths above cover every index reachable through
    // the given strides for an m×k by k×n product into an m×n output.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product `[m×k] · [k×n] → [m×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(a.data(), false, b.data(), false, &mut out, m, k, n, false);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Adds `bias [n]` to every row of `a [m×n]`.
pub fn add_row(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, n) = require_matrix("add_row", a)?;
    if bias.len() != n {
        return Err(Error::dim("add_row", a.shape(), bias.shape()));
    }
    let mut out = a.data.clone();
    for row in out.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(Tensor::from_parts(a.shape.clone(), out))
}

/// `x·w + b` for a row batch `x`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    add_row(&matmul(x, w)?, b)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise log-softmax of a `[B×K]` tensor, via log-sum-exp.
pub fn log_softmax(a: &Tensor) -> Result<Tensor> {
    let (_, k) = require_matrix("log_softmax", a)?;
    let mut out = a.data.clone();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Ok(Tensor::from_parts(a.shape.clone(), out))
}

pub fn softmax(a: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(a)?.map(f64::exp))
}

pub(crate) fn check_dropout_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_dropout_p(p)?;
    let keep = 1.0 / (1.0 - p);
    Ok((0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}

/// Dropout on a plain value. Identity when `training` is false or `p == 0`.
pub fn dropout<R: Rng + ?Sized>(a: &Tensor, p: f64, rng: &mut R, training: bool) -> Result<Tensor> {
    check_dropout_p(p)?;
    if !training || p == 0.0 {
        return Ok(a.clone());
    }
    let mask = dropout_mask(a.len(), p, rng)?;
    let data = a.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let id = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = Tensor::from_rows(&[vec![1.5, -2.0], vec![3.25, 4.0]]).unwrap();
        assert_eq!(matmul(&id, &a).unwrap(), a);
    }

    #[test]
    fn hand_evaluated_matmul() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros([2, 3]);
        let err = matmul(&a, &a).unwrap_err();
        match err {
            Error::Dimension { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transposed_gemm_matches_explicit() {
        // a is [3×2] stored, used as aᵀ [2×3]; b is [3×2].
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, -1.0, 0.5, 2.0, -3.0, 1.0];
        let mut c = [0.0; 4];
        gemm(&a, true, &b, false, &mut c, 2, 3, 2, false);
        // aᵀ = [[1,3,5],[2,4,6]]
        assert_eq!(c, [1.0 + 1.5 - 15.0, -1.0 + 6.0 + 5.0, 2.0 + 2.0 - 18.0, -2.0 + 8.0 + 6.0]);
    }

    #[test]
    fn relu_definition() {
        let t = Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::new([4], vec![-1.0, -0.5, -3.0, -1e-9]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_zero_extent_and_bad_length() {
        assert!(Tensor::new([0, 2], vec![]).is_err());
        assert!(Tensor::new([2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn log_softmax_is_stable_for_large_logits() {
        let t = Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let ls = log_softmax(&t).unwrap();
        assert!(ls.all_finite());
        assert!(ls.data()[0].abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_cases() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::new([4], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dropout(&t, 0.0, &mut rng, true).unwrap(), t);
        assert_eq!(dropout(&t, 0.7, &mut rng, false).unwrap(), t);
        assert!(matches!(dropout(&t, 1.0, &mut rng, true), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_preserves_mean_statistically() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let t = Tensor::full([n], 1.0);
        let d = dropout(&t, 0.5, &mut rng, true).unwrap();
        // each entry is 0 or 2 with prob 1/2: variance 1, so σ(mean) = 1/sqrt(n)
        let sigma = 1.0 / (n as f64).sqrt();
        assert!((d.mean() - 1.0).abs() < 3.0 * sigma);
        assert!(d.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn argmax_ties_pick_smallest_index() {
        let t = Tensor::from_rows(&[vec![0.2, 0.5, 0.5], vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(t.argmax_rows(), vec![1, 0]);
    }
}
