//! Dense row-major matrices and the hand-differentiated operator set used by
//! the model: linear maps, activations, RMSNorm, the gated MLP, sparse masked
//! attention and the MSE loss. Every forward kernel has a matching backward
//! kernel; there is no tape.

mod attention;
mod gradcheck;
mod layers;
mod ops;

pub use attention::{
    grouped_attention, grouped_attention_backward, sparse_attention, sparse_attention_backward, GroupScores, SparseScores,
};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use layers::{GatedMlp, GatedMlpCache, Linear, RmsNorm};
pub use ops::{gelu, gelu_backward, mse_loss, relu, relu_backward};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `rows x cols` matrix with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 { rows, cols, data: vec![T::zero(); rows * cols], grad: None }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor2 { rows, cols, data, grad: None })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Tensor2 { rows, cols, data: vec![value; rows * cols], grad: None }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Uniform entries in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::of(if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 }))
            .collect();
        Tensor2 { rows, cols, data, grad: None }
    }

    /// Same tensor with a zeroed gradient buffer attached.
    pub fn into_param(mut self) -> Self {
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Data and gradient together, allocating a gradient if missing.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], &mut [T]) {
        if self.grad.is_none() {
            self.grad = Some(vec![T::zero(); self.data.len()]);
        }
        (&mut self.data, self.grad.as_deref_mut().expect("allocated above"))
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Adds `delta` (same shape) into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let (_, g) = self.data_and_grad_mut();
        for (a, &b) in g.iter_mut().zip(delta) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor2<U> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same(self, other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Tensor2 { rows: self.rows, cols: self.cols, data, grad: None })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        check_same(self, other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Columns `start..start + width` as a new contiguous tensor.
    pub fn columns(&self, start: usize, width: usize) -> Self {
        let mut out = Self::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Writes `src` into columns `start..start + src.cols()`.
    pub fn set_columns(&mut self, start: usize, src: &Self) {
        for i in 0..self.rows {
            let w = src.cols;
            self.row_mut(i)[start..start + w].copy_from_slice(src.row(i));
        }
    }

    /// Rows at `indices`, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(indices.len(), self.cols);
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }
}

pub(crate) fn check_same<T>(a: &Tensor2<T>, b: &Tensor2<T>, what: &str) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
pub fn gemm<T: Scalar>(
    alpha: T,
    a: &Tensor2<T>,
    trans_a: bool,
    b: &Tensor2<T>,
    trans_b: bool,
    beta: T,
    c: &mut Tensor2<T>,
) -> Result<()> {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != kb || c.rows != m || c.cols != n {
        return Err(Error::Shape(format!(
            "gemm: op(a) {m}x{k}, op(b) {kb}x{n}, c {}x{}",
            c.rows, c.cols
        )));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        for v in &mut c.data {
            *v *= beta;
        }
        return Ok(());
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: shapes were checked above and `c` is a distinct allocation.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

/// `op(a) * op(b)` into a fresh tensor.
pub fn matmul<T: Scalar>(a: &Tensor2<T>, trans_a: bool, b: &Tensor2<T>, trans_b: bool) -> Result<Tensor2<T>> {
    let m = if trans_a { a.cols } else { a.rows };
    let n = if trans_b { b.rows } else { b.cols };
    let mut c = Tensor2::zeros(m, n);
    gemm(T::one(), a, trans_a, b, trans_b, T::zero(), &mut c)?;
    Ok(c)
}

/// Visitor over named trainable tensors.
pub trait ParamAccess<T: Scalar> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<T>));

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Tensor2<T>));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params_ref(&mut |_, p| n += p.len());
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_all_transpose_combinations() {
        let a = Tensor2::<f64>::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor2::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let ab = matmul(&a, false, &b, false).unwrap();
        assert_eq!(ab.data(), &[4.0, 5.0, 10.0, 11.0]);
        let at_t = matmul(&a.transpose(), true, &b.transpose(), true).unwrap();
        assert_eq!(at_t, ab);
        let aat = matmul(&a, false, &a, true).unwrap();
        assert_eq!(aat.data(), &[14.0, 32.0, 32.0, 77.0]);
        assert!(matmul(&a, false, &a, false).is_err());
    }

    #[test]
    fn column_slicing_round_trips() {
        let a = Tensor2::<f32>::from_vec(2, 4, (0..8).map(|v| v as f32).collect()).unwrap();
        let mid = a.columns(1, 2);
        assert_eq!(mid.data(), &[1.0, 2.0, 5.0, 6.0]);
        let mut b = Tensor2::zeros(2, 4);
        b.set_columns(1, &mid);
        assert_eq!(b.get(1, 2), 6.0);
        assert!(Tensor2::<f32>::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
