//! Row-major 2-D tensor with the handful of dense ops the models need.
//!
//! Matrix products go through `matrixmultiply::dgemm`, which is blocked,
//! single-threaded, and deterministic for a given build, so training runs
//! reproduce bit-identically under a fixed seed.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        let t = Self { rows, cols, data };
        t.debug_check_finite("new");
        t
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<S: AsRef<[f64]>>(rows: &[S]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Extracts a single row as a 1 x cols tensor.
    pub fn row_tensor(&self, r: usize) -> Tensor2D {
        Tensor2D::new(1, self.cols, self.row(r).to_vec())
    }

    pub fn add_assign(&mut self, other: &Tensor2D) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `C = A * B` for row-major `A [m,k]` and `B [k,n]`.
    pub fn matmul(&self, b: &Tensor2D) -> Tensor2D {
        assert_eq!(self.cols, b.rows, "matmul inner dimension mismatch");
        let mut out = Tensor2D::zeros(self.rows, b.cols);
        gemm(
            self.rows,
            self.cols,
            b.cols,
            &self.data,
            self.cols as isize,
            1,
            &b.data,
            b.cols as isize,
            1,
            &mut out.data,
        );
        out.debug_check_finite("matmul");
        out
    }

    /// `C = Aᵀ * B` for `A [k,m]` and `B [k,n]`, without materializing Aᵀ.
    pub fn matmul_at_b(&self, b: &Tensor2D) -> Tensor2D {
        assert_eq!(self.rows, b.rows, "matmul_at_b row mismatch");
        let mut out = Tensor2D::zeros(self.cols, b.cols);
        gemm(
            self.cols,
            self.rows,
            b.cols,
            &self.data,
            1,
            self.cols as isize,
            &b.data,
            b.cols as isize,
            1,
            &mut out.data,
        );
        out.debug_check_finite("matmul_at_b");
        out
    }

    /// `C = A * Bᵀ` for `A [m,k]` and `B [n,k]`, without materializing Bᵀ.
    pub fn matmul_a_bt(&self, b: &Tensor2D) -> Tensor2D {
        assert_eq!(self.cols, b.cols, "matmul_a_bt col mismatch");
        let mut out = Tensor2D::zeros(self.rows, b.rows);
        gemm(
            self.rows,
            self.cols,
            b.rows,
            &self.data,
            self.cols as isize,
            1,
            &b.data,
            1,
            b.cols as isize,
            &mut out.data,
        );
        out.debug_check_finite("matmul_a_bt");
        out
    }

    /// Sums over rows, producing a length-`cols` vector.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    fn debug_check_finite(&self, op: &str) {
        debug_assert!(self.is_finite(), "non-finite value after {op}");
        let _ = op;
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    // Safety: strides describe in-bounds row-major (or transposed) layouts
    // validated by the callers' dimension asserts.
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
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
        let mut out = Tensor2D::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for l in 0..a.cols() {
                    acc += a.get(i, l) * b.get(l, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive() {
        let a = Tensor2D::from_fn(3, 5, |r, c| (r * 5 + c) as f64 * 0.3 - 2.0);
        let b = Tensor2D::from_fn(5, 4, |r, c| (r as f64 - c as f64) * 0.7);
        let fast = a.matmul(&b);
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = Tensor2D::from_fn(4, 3, |r, c| (r + 2 * c) as f64 * 0.1);
        let b = Tensor2D::from_fn(4, 5, |r, c| (r * c) as f64 * 0.2 - 1.0);
        let at_b = a.matmul_at_b(&b);
        let a_t = Tensor2D::from_fn(3, 4, |r, c| a.get(c, r));
        let expect = naive_matmul(&a_t, &b);
        for (x, y) in at_b.data().iter().zip(expect.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        let c = Tensor2D::from_fn(6, 3, |r, c| (r as f64 * 0.3) - (c as f64 * 0.4));
        let a_ct = a.matmul_a_bt(&c);
        let c_t = Tensor2D::from_fn(3, 6, |r, cc| c.get(cc, r));
        let expect2 = naive_matmul(&a, &c_t);
        for (x, y) in a_ct.data().iter().zip(expect2.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_rows_sums_batch() {
        let a = Tensor2D::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(a.sum_rows(), vec![9.0, 12.0]);
    }
}
