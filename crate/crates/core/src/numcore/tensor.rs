use std::fmt;

use super::error::{NumError, Result};
use super::memory;

const F64_BYTES: usize = std::mem::size_of::<f64>();

/// Dense row-major `f64` array.
///
/// Values are always finite: constructors reject NaN and infinities. The
/// buffer size is reported to the thread-local allocator accounting in
/// [`memory`](super::memory) for the lifetime of the tensor.
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: "tensor" });
        }
        Ok(Self::from_parts(shape, data))
    }

    /// Builds a tensor from a buffer already known to be finite and correctly sized.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        memory::track_alloc(data.len() * F64_BYTES);
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Like [`Tensor::new`] but reports `op` on non-finite input.
    pub(crate) fn checked(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op });
        }
        Ok(Self::from_parts(shape, data))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, vec![0.0; n])
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NumError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Row count of a matrix (first dimension; 1 for scalars).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Column count of a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for in-place parameter updates. Callers keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(NumError::ShapeMismatch {
                op: "set_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        if let Some(old) = &self.grad {
            memory::track_free(old.len() * F64_BYTES);
        }
        memory::track_alloc(grad.len() * F64_BYTES);
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(old) = self.grad.take() {
            memory::track_free(old.len() * F64_BYTES);
        }
    }

    /// Copy of the values with a new shape of equal element count.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Selects rows by index into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self::from_parts(vec![rows.len(), c], data)
    }

    /// Selects columns by index into a new matrix.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let n = self.rows();
        let mut data = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Self::from_parts(vec![n, cols.len()], data)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_parts(vec![c, r], data)
    }

    /// Plain (untracked) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        super::gemm::gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        Tensor::checked("matmul", vec![m, n], out)
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        let mut t = Self::from_parts(self.shape.clone(), self.data.clone());
        t.requires_grad = self.requires_grad;
        if let Some(g) = &self.grad {
            memory::track_alloc(g.len() * F64_BYTES);
            t.grad = Some(g.clone());
        }
        t
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        memory::track_free(self.data.len() * F64_BYTES);
        if let Some(g) = &self.grad {
            memory::track_free(g.len() * F64_BYTES);
        }
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}
