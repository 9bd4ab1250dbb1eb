use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::Float;

/// Work (multiply-adds) above which matrix kernels split rows across threads.
const PAR_THRESHOLD: usize = 1 << 15;

/// Dense row-major matrix. Vectors are `1 x n` or `n x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<Float>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: Float) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Float>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape [{rows}, {cols}]", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<Float>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(value: Float) -> Self {
        Self::row_vector(vec![value])
    }

    /// I.i.d. uniform entries on `[low, high]`.
    pub fn uniform<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        low: Float,
        high: Float,
        rng: &mut R,
    ) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(low..=high)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Float] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Float] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Float> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[Float] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Float] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> Float {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Float) {
        self.data[r * self.cols + c] = v;
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> Float {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: Float) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn squared_norm(&self) -> Float {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Fixed-order dot product with eight independent partial sums.
pub(crate) fn dot(a: &[Float], b: &[Float]) -> Float {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0 as Float; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: Float, x: &[Float], y: &mut [Float]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `a[m,k] · b[k,n]`. Each output row depends only on the matching row of
/// `a`, so results are independent of batch composition and thread count.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(m, n);
    if n == 0 {
        return out;
    }
    let kernel = |(i, orow): (usize, &mut [Float])| {
        let arow = &a.data[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                axpy(av, &b.data[kk * n..(kk + 1) * n], orow);
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.data.par_chunks_mut(n).enumerate().for_each(kernel);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(kernel);
    }
    out
}

/// `dy[m,n] · b[k,n]ᵀ` accumulated into `dx[m,k]`.
pub(crate) fn matmul_nt_acc(dy: &Tensor, b: &Tensor, dx: &mut Tensor) {
    let (n, k) = (dy.cols, b.rows);
    if k == 0 {
        return;
    }
    let kernel = |(i, xrow): (usize, &mut [Float])| {
        let dyrow = &dy.data[i * n..(i + 1) * n];
        for (kk, x) in xrow.iter_mut().enumerate() {
            *x += dot(dyrow, &b.data[kk * n..(kk + 1) * n]);
        }
    };
    if dy.rows * k * n >= PAR_THRESHOLD && dy.rows > 1 {
        dx.data.par_chunks_mut(k).enumerate().for_each(kernel);
    } else {
        dx.data.chunks_mut(k).enumerate().for_each(kernel);
    }
}

/// `a[m,k]ᵀ · dy[m,n]` accumulated into `db[k,n]`, summing over `m` in order.
pub(crate) fn matmul_tn_acc(a: &Tensor, dy: &Tensor, db: &mut Tensor) {
    let (m, k, n) = (a.rows, a.cols, dy.cols);
    if n == 0 {
        return;
    }
    let kernel = |(kk, brow): (usize, &mut [Float])| {
        for i in 0..m {
            let av = a.data[i * k + kk];
            if av != 0.0 {
                axpy(av, &dy.data[i * n..(i + 1) * n], brow);
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        db.data.par_chunks_mut(n).enumerate().for_each(kernel);
    } else {
        db.data.chunks_mut(n).enumerate().for_each(kernel);
    }
}
