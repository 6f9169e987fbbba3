//! Dense row-major `f64` matrices, seeded random streams and weight initialisation.
//!
//! Graphs in this crate have at most a few thousand nodes, so everything is
//! dense. Products are parallelised over output rows; each row is reduced in
//! a fixed order, so results are bit-identical regardless of thread count.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("row {row} has length {len}, expected {expected}")]
    RaggedRows { row: usize, len: usize, expected: usize },
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::RaggedRows {
                    row: i,
                    len: r.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of the selected rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), self.cols);
        for (o, &r) in rows.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(r));
        }
        out
    }

    /// Copy of the contiguous row range `start..end`.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let n = rhs.cols;
        if n == 0 {
            return Ok(out);
        }
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| {
                let a_row = self.row(i);
                for (k, &a) in a_row.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let b_row = rhs.row(k);
                    for (o, &b) in out_row.iter_mut().zip(b_row) {
                        *o += a * b;
                    }
                }
            });
        Ok(out)
    }

    /// `selfᵀ · rhs` without materialising the transpose of `self`.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != rhs.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "t_matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        self.transpose().matmul(rhs)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != rhs.cols {
            return Err(LinalgError::ShapeMismatch {
                op: "matmul_t",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        self.matmul(&rhs.transpose())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn zip_with(
        &self,
        rhs: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, LinalgError> {
        if self.shape() != rhs.shape() {
            return Err(LinalgError::ShapeMismatch {
                op,
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    /// In-place `self += rhs`.
    pub fn add_assign(&mut self, rhs: &Matrix) -> Result<(), LinalgError> {
        if self.shape() != rhs.shape() {
            return Err(LinalgError::ShapeMismatch {
                op: "add_assign",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn negate(&self) -> Matrix {
        self.map(|v| -v)
    }

    /// Divides each row by its sum when that sum is positive; other rows are left as-is.
    pub fn row_normalize(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, LinalgError> {
    if u.len() != v.len() {
        return Err(LinalgError::LengthMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(LinalgError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Logistic function. The argument is clamped to ±36 so the result stays
/// strictly inside `(0, 1)` in `f64`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-36.0, 36.0);
    1.0 / (1.0 + (-x).exp())
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Seeded, portable random stream (ChaCha8).
///
/// ChaCha output is specified bit-for-bit, so a seed reproduces the same
/// stream on every platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.normal())
    }

    /// Access to the underlying generator for `rand` helpers (shuffle, sampling).
    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// Glorot/Xavier uniform initialisation in `±sqrt(6 / (rows + cols))`.
pub fn glorot_init(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let m = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 4.0, 7.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn small_product_by_hand() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[17.0], [39.0]]).unwrap());
    }

    #[test]
    fn product_matches_triple_loop() {
        let mut rng = SeededRng::new(1);
        let a = rng.normal_matrix(7, 5);
        let b = rng.normal_matrix(5, 3);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let ta = a.transpose();
        let via_t = ta.t_matmul(&b).unwrap();
        assert_eq!(via_t, fast);
        assert_eq!(a.matmul_t(&b.transpose()).unwrap(), fast);
    }

    #[test]
    fn shape_mismatch_reported() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(LinalgError::ShapeMismatch { op: "matmul", .. })
        ));
        assert!(a.add(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let (u, v) = ([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]);
        let d = 1.0 * 4.0 + 2.0 * 5.0 + 3.0 * 6.0;
        let nu = (1.0f64 + 4.0 + 9.0).sqrt();
        let nv = (16.0f64 + 25.0 + 36.0).sqrt();
        assert!((cosine(&u, &v).unwrap() - d / (nu * nv)).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(LinalgError::ZeroVector));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(LinalgError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let a = glorot_init(2, 2, &mut SeededRng::new(9));
        let b = glorot_init(2, 2, &mut SeededRng::new(9));
        assert_eq!(a, b);
        let m = glorot_init(30, 10, &mut SeededRng::new(4));
        let bound = (6.0f64 / 40.0).sqrt();
        assert!(m.as_slice().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn glorot_mean_near_zero() {
        let m = glorot_init(100, 100, &mut SeededRng::new(3));
        let n = m.as_slice().len() as f64;
        let bound = (6.0f64 / 200.0).sqrt();
        // Var of U(-b, b) is b²/3.
        let se = (bound * bound / 3.0 / n).sqrt();
        let mean = m.sum() / n;
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn elementwise_ops() {
        let m = Matrix::from_rows(&[[2.0, 2.0], [0.0, 0.0]]).unwrap();
        assert_eq!(
            m.row_normalize(),
            Matrix::from_rows(&[[0.5, 0.5], [0.0, 0.0]]).unwrap()
        );
        let r = SeededRng::new(2).normal_matrix(3, 4);
        assert_eq!(r.transpose().transpose(), r);
        assert_eq!(r.add(&r.negate()).unwrap(), Matrix::zeros(3, 4));
        let h = r.hadamard(&Matrix::from_fn(3, 4, |_, _| 2.0)).unwrap();
        assert_eq!(h, r.scale(2.0));
    }

    #[test]
    fn forked_streams_differ_but_repeat() {
        let base = SeededRng::new(5);
        let mut a = base.fork(1);
        let mut b = base.fork(2);
        let mut a2 = SeededRng::new(5).fork(1);
        let xa: Vec<f64> = (0..4).map(|_| a.unit()).collect();
        let xb: Vec<f64> = (0..4).map(|_| b.unit()).collect();
        let xa2: Vec<f64> = (0..4).map(|_| a2.unit()).collect();
        assert_eq!(xa, xa2);
        assert_ne!(xa, xb);
    }

    #[test]
    fn sigmoid_stays_open_interval() {
        assert!(sigmoid(1e6) < 1.0);
        assert!(sigmoid(-1e6) > 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    fn small_matrix(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-3.0f64..3.0, r * c)
            .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in small_matrix(3, 4), b in small_matrix(4, 2), c in small_matrix(2, 5)) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in proptest::collection::vec(-5.0f64..5.0, 6),
            v in proptest::collection::vec(-5.0f64..5.0, 6),
            a in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let c = cosine(&u, &v).unwrap();
            prop_assert_eq!(c, cosine(&v, &u).unwrap());
            prop_assert!((-1.0..=1.0).contains(&c));
            let scaled: Vec<f64> = u.iter().map(|x| a * x).collect();
            prop_assert!((cosine(&scaled, &v).unwrap() - c).abs() < 1e-12);
        }
    }
}
