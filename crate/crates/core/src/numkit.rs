//! Dense f64 matrices, keyed random streams, and the softmax/cross-entropy
//! pair used by the output layer.
//!
//! Everything here is deterministic: a [`RandomStream`] is fully determined by
//! its `(seed, stream_id)` key, and matrix products go through a single-threaded
//! GEMM so results never depend on scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
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

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec: vector length {} vs {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `y = Aᵀ x`
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::Shape(format!(
                "matvec_t: vector length {} vs {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut y = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                axpy(xr, self.row(r), &mut y);
            }
        }
        Ok(y)
    }

    /// Gather the given rows into a new `ids.len() x cols` matrix.
    pub fn gather_rows(&self, ids: impl ExactSizeIterator<Item = usize>) -> Matrix {
        let mut out = Matrix::zeros(ids.len(), self.cols);
        for (i, id) in ids.enumerate() {
            out.row_mut(i).copy_from_slice(self.row(id));
        }
        out
    }

    /// SHA-256 over shape and the exact bit patterns of every entry.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Whether an operand of [`gemm`] is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Borrowed row-major matrix, typically a block of rows of a [`Matrix`].
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
}

/// Mutable counterpart of [`MatRef`].
#[derive(Debug)]
pub struct MatMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "view extent mismatch");
        Self { data, rows, cols }
    }
}

impl<'a> MatMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "view extent mismatch");
        Self { data, rows, cols }
    }
}

impl Matrix {
    pub fn view(&self) -> MatRef<'_> {
        MatRef::new(&self.data, self.rows, self.cols)
    }

    pub fn view_mut(&mut self) -> MatMut<'_> {
        MatMut::new(&mut self.data, self.rows, self.cols)
    }

    /// Rows `start..start + count`.
    pub fn row_block(&self, start: usize, count: usize) -> MatRef<'_> {
        MatRef::new(&self.data[start * self.cols..(start + count) * self.cols], count, self.cols)
    }

    pub fn row_block_mut(&mut self, start: usize, count: usize) -> MatMut<'_> {
        let cols = self.cols;
        MatMut::new(&mut self.data[start * cols..(start + count) * cols], count, cols)
    }
}

/// `C = alpha * op(A) op(B) + beta * C`.
pub fn gemm(alpha: f64, a: &Matrix, op_a: Op, b: &Matrix, op_b: Op, beta: f64, c: &mut Matrix) {
    gemm_view(alpha, a.view(), op_a, b.view(), op_b, beta, c.view_mut());
}

/// [`gemm`] on borrowed views.
pub fn gemm_view(alpha: f64, a: MatRef<'_>, op_a: Op, b: MatRef<'_>, op_b: Op, beta: f64, c: MatMut<'_>) {
    let (m, k, rsa, csa) = match op_a {
        Op::N => (a.rows, a.cols, a.cols as isize, 1),
        Op::T => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match op_b {
        Op::N => (b.rows, b.cols, b.cols as isize, 1),
        Op::T => (b.cols, b.rows, 1, b.cols as isize),
    };
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides and extents describe exactly the buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
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
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// Slice kernels for exp, sigmoid and tanh. Written without libm calls or
// fused multiply-adds so the compiler can vectorize them and results are
// identical whichever code path runs.

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const INV_LN2: f64 = std::f64::consts::LOG2_E;
/// Adding 1.5·2^52 rounds to the nearest integer and leaves it in the low mantissa bits.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
const EXP_MAX: f64 = 709.782_712_893_384;
const EXP_MIN: f64 = -745.133_219_101_941_1;

/// `(a, b, q)` with `e^x = a · b · (1 + q)`; the power of two is split in
/// halves so both factors stay normal over the whole finite range.
#[inline(always)]
fn exp_parts(x: f64) -> (f64, f64, f64) {
    let t = x * INV_LN2 + ROUND_MAGIC;
    let k = t - ROUND_MAGIC;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series of e^r − 1 to degree 13; |r| ≤ ln2/2
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    let q = p * r;
    let ki = t.to_bits().wrapping_sub(ROUND_MAGIC.to_bits()) as i64;
    let k1 = ki >> 1;
    let k2 = ki - k1;
    let a = f64::from_bits(((k1 + 1023) as u64) << 52);
    let b = f64::from_bits(((k2 + 1023) as u64) << 52);
    (a, b, q)
}

#[inline(always)]
fn exp_kernel(x: f64) -> f64 {
    let (a, b, q) = exp_parts(x.clamp(EXP_MIN, EXP_MAX));
    let y = (a + a * q) * b;
    if x.is_nan() {
        x
    } else if x > EXP_MAX {
        f64::INFINITY
    } else if x < EXP_MIN {
        0.0
    } else {
        y
    }
}

#[inline(always)]
fn sigmoid_kernel(x: f64) -> f64 {
    1.0 / (1.0 + exp_kernel(-x))
}

#[inline(always)]
fn tanh_kernel(x: f64) -> f64 {
    // tanh x = m / (m + 2) with m = e^{2x} − 1; for small |x| the exponent
    // shift is zero and m comes straight from the polynomial, so there is
    // no cancellation near 0.
    let z = (2.0 * x).clamp(-40.0, 40.0);
    let (a, b, q) = exp_parts(z);
    let scale = a * b;
    let m = scale * q + (scale - 1.0);
    let y = m / (m + 2.0);
    if x.is_nan() {
        x
    } else {
        y
    }
}

macro_rules! slice_kernel {
    ($name:ident, $avx:ident, $kernel:ident, $doc:literal) => {
        #[doc = $doc]
        pub fn $name(xs: &mut [f64]) {
            #[cfg(target_arch = "x86_64")]
            {
                if std::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2, checked just above.
                    unsafe { $avx(xs) };
                    return;
                }
            }
            for v in xs.iter_mut() {
                *v = $kernel(*v);
            }
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $avx(xs: &mut [f64]) {
            for v in xs.iter_mut() {
                *v = $kernel(*v);
            }
        }
    };
}

slice_kernel!(exp_slice, exp_slice_avx2, exp_kernel, "`e^x` in place, within a couple of ulp of libm.");
slice_kernel!(sigmoid_slice, sigmoid_slice_avx2, sigmoid_kernel, "Logistic function in place.");
slice_kernel!(tanh_slice, tanh_slice_avx2, tanh_kernel, "Hyperbolic tangent in place.");

/// Shift `row` by its maximum, exponentiate in place, and return
/// `(max, Σ e^{x − max})`.
pub fn exp_shifted(row: &mut [f64]) -> (f64, f64) {
    let m = max_of(row);
    row.iter_mut().for_each(|v| *v -= m);
    exp_slice(row);
    (m, row.iter().sum())
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Numeric("empty logits".into()));
    }
    let m = max_of(logits);
    let mut out: Vec<f64> = logits.iter().map(|&x| x - m).collect();
    exp_slice(&mut out);
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}

/// `log Σ exp(x)`, stable for large entries.
pub fn log_sum_exp(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Numeric("empty logits".into()));
    }
    let m = max_of(logits);
    let mut shifted: Vec<f64> = logits.iter().map(|&x| x - m).collect();
    exp_slice(&mut shifted);
    Ok(m + shifted.iter().sum::<f64>().ln())
}

/// `−log probs[label]` for an already-normalized distribution.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::Numeric(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.ln())
}

/// Fused `cross_entropy(softmax(logits), label)` via log-sum-exp.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    let lse = log_sum_exp(logits)?;
    let z = logits.get(label).ok_or_else(|| {
        Error::Numeric(format!("label {label} out of range for {} classes", logits.len()))
    })?;
    Ok(lse - z)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Deterministic random source keyed by a global seed and a purpose label.
///
/// Two streams with the same key always produce the same sequence; streams
/// with different labels are independent ChaCha8 keys.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: String,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        let stream_id = stream_id.into();
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(stream_id.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        Self {
            seed,
            stream_id,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// A child stream whose label extends this one's.
    pub fn derive(&self, suffix: &str) -> Self {
        Self::new(self.seed, format!("{}/{suffix}", self.stream_id))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_position(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform on `[0, bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        self.rng.gen_range(0..bound)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        use rand::seq::SliceRandom;
        xs.shuffle(&mut self.rng);
    }

    /// Access to the underlying generator for `rand` distributions.
    pub fn rng(&mut self) -> &mut impl RngCore {
        &mut self.rng
    }
}

/// Matrix with entries i.i.d. uniform on `[-scale, scale]`.
pub fn init_uniform(rng: &mut RandomStream, rows: usize, cols: usize, scale: f64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("init_uniform: non-positive dimensions {rows}x{cols}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("init_uniform: scale must be positive, got {scale}")));
    }
    Ok(Matrix::from_fn(rows, cols, |_, _| (2.0 * rng.next_f64() - 1.0) * scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);

        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-300_f64.max(1e-15));
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn softmax_empty_is_error() {
        let err = softmax(&[]).unwrap_err();
        assert!(err.to_string().contains("empty logits"));
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = [0.0, 1.0, 0.0];
        assert_eq!(cross_entropy(&onehot, 1).unwrap(), 0.0);

        let v = 10_000;
        let uniform = vec![0.0; v];
        let loss = softmax_cross_entropy(&uniform, 1234).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
        assert!((loss - 9.2103).abs() < 1e-4);

        assert!(cross_entropy(&onehot, 3).is_err());
        assert!(softmax_cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn fused_matches_unfused_on_random_logits() {
        let mut rng = RandomStream::new(7, "test/ce");
        let logits: Vec<f64> = (0..10).map(|_| 10.0 * (rng.next_f64() - 0.5)).collect();
        // unfused: explicit exponentials and normalization, no max shift
        let exps: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
        let z: f64 = exps.iter().sum();
        let expected = -(exps[3] / z).ln();
        let fused = softmax_cross_entropy(&logits, 3).unwrap();
        assert!((fused - expected).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }

    #[test]
    fn init_uniform_is_deterministic_per_stream() {
        let a = init_uniform(&mut RandomStream::new(1, "embedding-init"), 4, 5, 0.1).unwrap();
        let b = init_uniform(&mut RandomStream::new(1, "embedding-init"), 4, 5, 0.1).unwrap();
        let c = init_uniform(&mut RandomStream::new(1, "lstm-init"), 4, 5, 0.1).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a, c);
        assert!(a.data().iter().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn init_uniform_moments() {
        // 10^5 draws on [-s, s]: mean 0, variance s^2/3
        let s = 0.1;
        let m = init_uniform(&mut RandomStream::new(3, "moments"), 1000, 100, s).unwrap();
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sigma_mean = (s * s / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
        assert!((var - s * s / 3.0).abs() < 0.05 * s * s / 3.0, "var {var}");
    }

    #[test]
    fn init_uniform_rejects_bad_args() {
        let mut rng = RandomStream::new(0, "x");
        assert!(init_uniform(&mut rng, 0, 3, 1.0).is_err());
        assert!(init_uniform(&mut rng, 3, 3, 0.0).is_err());
    }

    #[test]
    fn stream_position_restores_sequence() {
        let mut a = RandomStream::new(5, "shuffle");
        a.next_f64();
        let pos = a.position();
        let next = a.next_f64();
        let mut b = RandomStream::new(5, "shuffle");
        b.set_position(pos);
        assert_eq!(b.next_f64().to_bits(), next.to_bits());
    }

    #[test]
    fn gemm_matches_naive() {
        let mut rng = RandomStream::new(11, "gemm");
        let a = init_uniform(&mut rng, 3, 4, 1.0).unwrap();
        let b = init_uniform(&mut rng, 5, 4, 1.0).unwrap();
        let mut c = Matrix::zeros(3, 5);
        gemm(1.0, &a, Op::N, &b, Op::T, 0.0, &mut c);
        for i in 0..3 {
            for j in 0..5 {
                let expect: f64 = (0..4).map(|k| a.get(i, k) * b.get(j, k)).sum();
                assert!((c.get(i, j) - expect).abs() < 1e-12);
            }
        }
        let mut d = Matrix::zeros(4, 4);
        gemm(1.0, &a, Op::T, &a, Op::N, 0.0, &mut d);
        for i in 0..4 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|k| a.get(k, i) * a.get(k, j)).sum();
                assert!((d.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matvec_transpose_consistent() {
        let mut rng = RandomStream::new(2, "mv");
        let a = init_uniform(&mut rng, 3, 2, 1.0).unwrap();
        let y = a.matvec_t(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, a.row(0).to_vec());
        assert!(a.matvec(&[1.0]).is_err());
    }

    fn ulps(a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        (a - b).abs() / (f64::EPSILON * a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
    }

    #[test]
    fn slice_kernels_track_libm() {
        let mut rng = RandomStream::new(4, "kernels");
        let mut xs: Vec<f64> = (0..20_000).map(|_| (rng.next_f64() - 0.5) * 80.0).collect();
        xs.extend((0..5_000).map(|_| (rng.next_f64() - 0.5) * 1e-6));
        xs.extend((0..5_000).map(|_| (rng.next_f64() - 0.5) * 1400.0));
        xs.extend([0.0, -0.0, 1e-300, -1e-300, 708.5, -708.5, -720.0, -744.0, 709.7, 710.0, -746.0]);

        let mut e = xs.clone();
        exp_slice(&mut e);
        let mut sg = xs.clone();
        sigmoid_slice(&mut sg);
        let mut th = xs.clone();
        tanh_slice(&mut th);
        for (i, &x) in xs.iter().enumerate() {
            let want = x.exp();
            if want.is_finite() && want > 1e-300 {
                assert!(ulps(e[i], want) <= 4.0, "exp({x}) = {} vs {want}", e[i]);
            } else if want.is_finite() {
                assert!((e[i] - want).abs() < 1e-305, "exp({x}) = {} vs {want}", e[i]);
            } else {
                assert_eq!(e[i], f64::INFINITY);
            }
            let sw = sigmoid(x);
            assert!(ulps(sg[i], sw) <= 8.0 || (sg[i] - sw).abs() < 1e-300, "sigmoid({x})");
            let tw = x.tanh();
            assert!(ulps(th[i], tw) <= 8.0, "tanh({x}) = {} vs {tw}", th[i]);
        }
        let mut nan = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY];
        exp_slice(&mut nan);
        assert!(nan[0].is_nan());
        assert_eq!(&nan[1..], &[f64::INFINITY, 0.0]);
        let mut nan = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY];
        tanh_slice(&mut nan);
        assert!(nan[0].is_nan());
        assert_eq!(&nan[1..], &[1.0, -1.0]);
        let mut nan = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY];
        sigmoid_slice(&mut nan);
        assert!(nan[0].is_nan());
        assert_eq!(&nan[1..], &[1.0, 0.0]);
    }

    #[test]
    fn exp_shifted_matches_log_sum_exp() {
        let mut row = vec![1000.0, 999.0, -5.0, 3.0];
        let lse = log_sum_exp(&row).unwrap();
        let (m, z) = exp_shifted(&mut row);
        assert!((m + z.ln() - lse).abs() < 1e-12);
        assert_eq!(row[0], 1.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one(xs in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
                let p = softmax(&xs).unwrap();
                let s: f64 = p.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            }

            #[test]
            fn softmax_shift_invariant(xs in proptest::collection::vec(-50f64..50.0, 1..32), c in -100f64..100.0) {
                let p = softmax(&xs).unwrap();
                let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
                let q = softmax(&shifted).unwrap();
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn fused_equals_unfused(xs in proptest::collection::vec(-50f64..50.0, 2..32), pick in 0usize..1000) {
                let label = pick % xs.len();
                let fused = softmax_cross_entropy(&xs, label).unwrap();
                let unfused = cross_entropy(&softmax(&xs).unwrap(), label).unwrap();
                prop_assert!((fused - unfused).abs() < 1e-9);
            }
        }
    }
}
