//! Dense row-major matrices, stable softmax kernels, seeded RNG streams and a
//! central-difference gradient checker.
//!
//! Training math runs in `f64`. Embeddings are stored on disk as `f32` and
//! upcast on ingestion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic generator used everywhere in the crate.
///
/// ChaCha with 8 rounds. A `(seed, stream)` pair selects an independent
/// stream, so folds, heads and shuffles never share state.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn filled_with(rows: usize, cols: usize, mut f: impl FnMut() -> f64) -> Self {
        let data = (0..rows * cols).map(|_| f()).collect();
        Matrix { rows, cols, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Column-wise concatenation `[a; b; ...]` of blocks with equal row counts.
    pub fn hstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::shape("hstack", "row counts differ"));
        }
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Inverse of [`Matrix::hstack`]: splits columns into consecutive widths.
    pub fn hsplit(&self, widths: &[usize]) -> Result<Vec<Matrix>> {
        if widths.iter().sum::<usize>() != self.cols {
            return Err(Error::shape(
                "hsplit",
                format!("widths sum to {}, matrix has {} cols", widths.iter().sum::<usize>(), self.cols),
            ));
        }
        let mut out: Vec<Matrix> = widths.iter().map(|&w| Matrix::zeros(self.rows, w)).collect();
        for r in 0..self.rows {
            let mut offset = 0;
            for (m, &w) in out.iter_mut().zip(widths) {
                m.row_mut(r).copy_from_slice(&self.row(r)[offset..offset + w]);
                offset += w;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Adds `bias` (length = cols) to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(
                "add_row_vector",
                format!("bias len {} vs {} cols", bias.len(), self.cols),
            ));
        }
        for r in 0..self.rows {
            self.row_mut(r)
                .iter_mut()
                .zip(bias)
                .for_each(|(v, b)| *v += b);
        }
        Ok(())
    }

    /// Column sums as a vector of length `cols`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            out.iter_mut().zip(self.row(r)).for_each(|(o, v)| *o += v);
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Standard product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            out_row.iter_mut().zip(b_row).for_each(|(o, bv)| *o += aik * bv);
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_tn",
            format!("({}x{})ᵀ · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let a_row = a.row(r);
        let b_row = b.row(r);
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            out_row.iter_mut().zip(b_row).for_each(|(o, bv)| *o += av * bv);
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_nt",
            format!("{}x{} · ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(a_row, b.row(j));
        }
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `log Σ exp(xs)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v -= max);
        let log_z = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= log_z);
    }
    out
}

pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = log_softmax(logits);
    out.data.iter_mut().for_each(|v| *v = v.exp());
    out
}

/// Compares an analytic gradient with central differences of `f` at `x`.
///
/// Returns `max_i |a_i − n_i| / (|a_i| + |n_i| + 1e-12)` where `n_i` is
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)`. ReLU kinks are not handled
/// here; callers nudge probe points away from zero pre-activations.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} gradient entries for {} parameters", analytic.len(), x.len()),
        ));
    }
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteProbe(i));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
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
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_times_a_is_a() {
        let a = Matrix::from_rows(&[[1.5, -2.0, 3.0], [0.25, 4.0, -1.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn small_product_by_hand() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), Matrix::from_rows(&[[3.0], [7.0]]));
    }

    #[test]
    fn zero_row_product() {
        let a = Matrix::zeros(0, 3);
        let b = Matrix::zeros(3, 4);
        assert_eq!(matmul(&a, &b).unwrap().shape(), (0, 4));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape { .. })));
    }

    #[test]
    fn log_softmax_cases() {
        let out = log_softmax(&Matrix::from_rows(&[[0.0, 0.0], [1000.0, 1000.0]]));
        for v in out.data() {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-14);
        }
        let out = log_softmax(&Matrix::from_rows(&[[2.0, 0.0]]));
        let c = (1.0 + (-2.0f64).exp()).ln();
        assert!((out.get(0, 0) + c).abs() < 1e-14);
        assert!((out.get(0, 1) + 2.0 + c).abs() < 1e-14);
    }

    #[test]
    fn grad_check_quadratic() {
        let err = grad_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn grad_check_flags_wrong_gradient() {
        let err = grad_check(|x| x[0] * x[0], &[3.0], &[5.0], 1e-5).unwrap();
        assert!(err > 0.05);
    }

    #[test]
    fn grad_check_reports_non_finite_probe() {
        let r = grad_check(|x| (x[0]).ln(), &[0.0], &[1.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFiniteProbe(0))));
    }

    #[test]
    fn hstack_hsplit_inverse() {
        let a = Matrix::from_rows(&[[1.0], [2.0]]);
        let b = Matrix::from_rows(&[[3.0, 4.0], [5.0, 6.0]]);
        let s = Matrix::hstack(&[&a, &b]).unwrap();
        assert_eq!(s.row(1), &[2.0, 5.0, 6.0]);
        let parts = s.hsplit(&[1, 2]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        use rand::RngCore;
        let draw = |stream| {
            let mut r = rng(9, stream);
            (0..4).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        let (a, b, c) = (draw(1), draw(1), draw(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn arb_matrix(max: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
        (1..=max, 1..=max, 1..=max).prop_flat_map(|(n, k, m)| {
            (
                prop::collection::vec(-10.0f64..10.0, n * k),
                prop::collection::vec(-10.0f64..10.0, k * m),
            )
                .prop_map(move |(a, b)| {
                    (Matrix::new(n, k, a).unwrap(), Matrix::new(k, m, b).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn matmul_matches_triple_loop((a, b) in arb_matrix(16)) {
            let fast = matmul(&a, &b).unwrap();
            let slow = naive_matmul(&a, &b);
            for (x, y) in fast.data().iter().zip(slow.data()) {
                prop_assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
            }
            let tn = matmul_tn(&a.transpose(), &b).unwrap();
            let nt = matmul_nt(&a, &b.transpose()).unwrap();
            for ((x, y), z) in tn.data().iter().zip(nt.data()).zip(slow.data()) {
                prop_assert!((x - z).abs() < 1e-12 * (1.0 + z.abs()));
                prop_assert!((y - z).abs() < 1e-12 * (1.0 + z.abs()));
            }
        }

        #[test]
        fn exp_log_softmax_rows_sum_to_one(
            rows in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 2..6), 1..6)
        ) {
            let width = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(width, 0.0); r }).collect();
            let out = softmax(&Matrix::from_rows(&rows));
            for r in 0..out.rows() {
                let s: f64 = out.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
