//! Dense row-major tensors and the eager (tape-free) arithmetic used by the
//! projection algebra.

use std::fmt::Debug;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;

/// Scalar element type stored in a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::Config(format!("unknown dtype {other:?}"))),
        }
    }
}

/// Floating point element usable by tensors, the tape and the gemm kernels.
pub trait Element: Float + Default + Debug + Send + Sync + 'static {
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;

    /// `c = alpha * a * b + beta * c` over strided views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing regions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erf(self as f64) as f32
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// A dense row-major tensor. `shape.iter().product() == data.len()` always holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Builds a 2-D tensor from nested rows (handy in tests).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().map(|&v| T::from_f64(v)).collect();
        Tensor::new(vec![r, c], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Interprets the tensor as a matrix `[rows, last_dim]`.
    pub fn as_rows(&self) -> (usize, usize) {
        let c = self.last_dim();
        self.data.len().checked_div(c).map_or((0, 0), |r| (r, c))
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected a 2-D tensor, got {s:?}"))),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape.clone()))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0, |m, &x| f64::max(m, x.as_f64().abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (&a, &b)| {
            f64::max(m, (a.as_f64() - b.as_f64()).abs())
        }))
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Tensor {
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

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// Adds a bias vector along the trailing dimension.
    pub fn add_bias(&self, bias: &Self) -> Result<Self> {
        if bias.ndim() != 1 || bias.len() != self.last_dim() {
            return Err(Error::Shape(format!(
                "bias of shape {:?} does not broadcast over {:?}",
                bias.shape, self.shape
            )));
        }
        let n = bias.len();
        let mut out = self.clone();
        for row in out.data.chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(&bias.data) {
                *x = *x + b;
            }
        }
        Ok(out)
    }

    pub fn gelu(&self) -> Self {
        self.map(gelu)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Tensor::new(vec![c, r], out)
    }

    /// Standard matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_rowmajor(m, k, n, &self.data, &other.data, &mut out, false);
        Tensor::new(vec![m, n], out)
    }

    /// Row vector times matrix: `[k] x [k,n] -> [n]`.
    pub fn vecmat(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 1 {
            return Err(Error::Shape(format!("vecmat lhs {:?}", self.shape)));
        }
        let row = Tensor::new(vec![1, self.len()], self.data.clone())?;
        let out = row.matmul(other)?;
        Tensor::new(vec![out.len()], out.data)
    }

    /// Kronecker product of two matrices.
    pub fn kron(&self, other: &Self) -> Result<Self> {
        let (p, q) = self.dims2()?;
        let (r, s) = other.dims2()?;
        let mut out = Tensor::zeros(&[p * r, q * s]);
        for i in 0..p {
            for j in 0..q {
                let a = self.at2(i, j);
                for k in 0..r {
                    for l in 0..s {
                        out.set2(i * r + k, j * s + l, a * other.at2(k, l));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Column sums of a matrix.
    pub fn col_sums(&self) -> Result<Vec<T>> {
        let (r, c) = self.dims2()?;
        let mut sums = vec![T::zero(); c];
        for i in 0..r {
            for (j, s) in sums.iter_mut().enumerate() {
                *s = *s + self.data[i * c + j];
            }
        }
        Ok(sums)
    }

    /// Row sums of a matrix.
    pub fn row_sums(&self) -> Result<Vec<T>> {
        let (_, c) = self.dims2()?;
        Ok(self
            .data
            .chunks(c.max(1))
            .map(|row| row.iter().fold(T::zero(), |a, &b| a + b))
            .collect())
    }

    /// `self * diag(d)`: scales column `j` by `d[j]`.
    pub fn scale_cols(&self, d: &[T]) -> Result<Self> {
        let (_, c) = self.dims2()?;
        if d.len() != c {
            return Err(Error::Shape(format!("scale_cols: {} vs {c}", d.len())));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(c) {
            for (x, &s) in row.iter_mut().zip(d) {
                *x = *x * s;
            }
        }
        Ok(out)
    }

    /// `diag(d) * self`: scales row `i` by `d[i]`.
    pub fn scale_rows(&self, d: &[T]) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if d.len() != r {
            return Err(Error::Shape(format!("scale_rows: {} vs {r}", d.len())));
        }
        let mut out = self.clone();
        for (row, &s) in out.data.chunks_mut(c.max(1)).zip(d) {
            for x in row {
                *x = *x * s;
            }
        }
        Ok(out)
    }

    /// Numerical rank by Gaussian elimination with partial pivoting.
    pub fn rank(&self, tol: f64) -> Result<usize> {
        let (r, c) = self.dims2()?;
        let mut a: Vec<f64> = self.data.iter().map(|x| x.as_f64()).collect();
        let mut rank = 0;
        for col in 0..c {
            if rank == r {
                break;
            }
            let (pivot, best) = (rank..r)
                .map(|i| (i, a[i * c + col].abs()))
                .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= tol {
                continue;
            }
            for j in 0..c {
                a.swap(rank * c + j, pivot * c + j);
            }
            for i in rank + 1..r {
                let f = a[i * c + col] / a[rank * c + col];
                if f != 0.0 {
                    for j in col..c {
                        a[i * c + j] -= f * a[rank * c + j];
                    }
                }
            }
            rank += 1;
        }
        Ok(rank)
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Exact GELU: `0.5 x (1 + erf(x / sqrt 2))`.
pub fn gelu<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(INV_SQRT_2)).erf())
}

/// Derivative of [`gelu`].
pub fn gelu_grad<T: Element>(x: T) -> T {
    let xf = x.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(xf * INV_SQRT_2));
    let pdf = (-0.5 * xf * xf).exp() / (2.0 * std::f64::consts::PI).sqrt();
    T::from_f64(cdf + xf * pdf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_small_cases() {
        let id = Tensor::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let col = Tensor::<f64>::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(id.matmul(&col).unwrap().data(), &[3.0, 4.0]);

        let row = Tensor::<f64>::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn add_and_bias() {
        let a = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);

        let m = Tensor::<f64>::zeros(&[3, 2]);
        let out = m.add_bias(&b).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
        assert!(m.add_bias(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn gelu_zero() {
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn kron_identity_and_stack() {
        let one = Tensor::<f64>::from_rows(&[vec![1.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(one.kron(&b).unwrap(), b);

        let h = Tensor::<f64>::from_rows(&[vec![0.5], vec![0.5]]).unwrap();
        let k = h.kron(&Tensor::identity(2)).unwrap();
        assert_eq!(k.shape(), &[4, 2]);
        assert_eq!(
            k.data(),
            &[0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5],
            "two stacked copies of 0.5 * I2"
        );
    }

    #[test]
    fn rank_of_simple_matrices() {
        let r = Tensor::<f64>::from_rows(&[
            vec![0.5, 0.0],
            vec![0.5, 0.0],
            vec![0.0, 0.5],
            vec![0.0, 0.5],
        ])
        .unwrap();
        assert_eq!(r.rank(1e-12).unwrap(), 2);
        let deficient = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(deficient.rank(1e-12).unwrap(), 1);
    }

    #[test]
    fn identity_product_is_bitwise() {
        let a = Tensor::<f64>::from_fn(&[5, 4], |i| (i as f64 * 0.37).sin() * 1e3);
        let out = a.matmul(&Tensor::identity(4)).unwrap();
        assert_eq!(out.data(), a.data());
    }
}
