//! SwiGLU and RMSNorm primitives with analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor2D;

use super::RMSNORM_EPS;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Gated activation over split halves: `out = silu(a) * b` with `a` the
/// first half of each row and `b` the second.
pub fn swiglu_forward(u: &Tensor2D) -> Result<Tensor2D> {
    if u.cols() % 2 != 0 {
        return Err(CoreError::ShapeMismatch {
            context: "swiglu".into(),
            expected: "even width".into(),
            got: alloc::format!("{}", u.cols()),
        });
    }
    let h = u.cols() / 2;
    let mut out = Tensor2D::zeros(u.rows(), h);
    for (r, row) in u.iter_rows().enumerate() {
        let (a, b) = row.split_at(h);
        let orow = out.row_mut(r);
        for j in 0..h {
            orow[j] = silu(a[j]) * b[j];
        }
    }
    Ok(out)
}

/// Gradient of [`swiglu_forward`] with respect to its input.
pub fn swiglu_backward(u: &Tensor2D, grad_out: &Tensor2D) -> Tensor2D {
    let h = u.cols() / 2;
    debug_assert_eq!(grad_out.cols(), h);
    debug_assert_eq!(grad_out.rows(), u.rows());
    let mut grad_u = Tensor2D::zeros(u.rows(), u.cols());
    for r in 0..u.rows() {
        let row = u.row(r);
        let (a, b) = row.split_at(h);
        let g = grad_out.row(r);
        let grow = grad_u.row_mut(r);
        for j in 0..h {
            grow[j] = g[j] * b[j] * silu_prime(a[j]);
            grow[h + j] = g[j] * silu(a[j]);
        }
    }
    grad_u
}

/// RMS normalization with a learned per-feature gain.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsNorm {
    pub gain: Vec<f64>,
    pub eps: f64,
}

impl RmsNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gain: vec![1.0; width],
            eps: RMSNORM_EPS,
        }
    }

    pub fn width(&self) -> usize {
        self.gain.len()
    }

    /// Normalizes each row by its root mean square, then applies the gain.
    /// Returns the output and the per-row RMS values needed by backward.
    pub fn forward(&self, x: &Tensor2D) -> (Tensor2D, Vec<f64>) {
        rmsnorm_forward(x, &self.gain, self.eps)
    }

    pub fn backward(
        &self,
        x: &Tensor2D,
        rms: &[f64],
        grad_out: &Tensor2D,
    ) -> (Tensor2D, Vec<f64>) {
        rmsnorm_backward(x, &self.gain, rms, grad_out)
    }
}

/// `y_i = gain_i * x_i / sqrt(mean(x^2) + eps)`, rowwise.
pub fn rmsnorm_forward(x: &Tensor2D, gain: &[f64], eps: f64) -> (Tensor2D, Vec<f64>) {
    debug_assert_eq!(x.cols(), gain.len());
    let n = x.cols() as f64;
    let mut out = Tensor2D::zeros(x.rows(), x.cols());
    let mut rms = Vec::with_capacity(x.rows());
    for (r, row) in x.iter_rows().enumerate() {
        let mean_sq = row.iter().map(|v| v * v).sum::<f64>() / n;
        let denom = libm::sqrt(mean_sq + eps);
        rms.push(denom);
        let orow = out.row_mut(r);
        for (j, (&xv, &g)) in row.iter().zip(gain.iter()).enumerate() {
            orow[j] = g * xv / denom;
        }
    }
    (out, rms)
}

/// Gradients of [`rmsnorm_forward`] with respect to the input and the gain.
pub fn rmsnorm_backward(
    x: &Tensor2D,
    gain: &[f64],
    rms: &[f64],
    grad_out: &Tensor2D,
) -> (Tensor2D, Vec<f64>) {
    let n = x.cols() as f64;
    let mut grad_x = Tensor2D::zeros(x.rows(), x.cols());
    let mut grad_gain = vec![0.0; gain.len()];
    for r in 0..x.rows() {
        let row = x.row(r);
        let g = grad_out.row(r);
        let denom = rms[r];
        // sum_i g_i * gain_i * x_i, shared by every input gradient in the row
        let dot: f64 = (0..row.len()).map(|i| g[i] * gain[i] * row[i]).sum();
        let gxrow = grad_x.row_mut(r);
        let d3 = denom * denom * denom;
        for j in 0..row.len() {
            gxrow[j] = g[j] * gain[j] / denom - row[j] * dot / (n * d3);
            grad_gain[j] += g[j] * row[j] / denom;
        }
    }
    (grad_x, grad_gain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swiglu_zero_gate_gives_zero() {
        // a = 0 -> silu(a) = 0 regardless of b
        let u = Tensor2D::from_rows(&[&[0.0, 0.0, 3.0, -5.0]]);
        let out = swiglu_forward(&u).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn swiglu_rejects_odd_width() {
        let u = Tensor2D::zeros(1, 3);
        assert!(swiglu_forward(&u).is_err());
    }

    #[test]
    fn swiglu_matches_definition() {
        let u = Tensor2D::from_rows(&[&[1.0, -2.0, 0.5, 4.0]]);
        let out = swiglu_forward(&u).unwrap();
        let expect0 = silu(1.0) * 0.5;
        let expect1 = silu(-2.0) * 4.0;
        assert!((out.get(0, 0) - expect0).abs() < 1e-15);
        assert!((out.get(0, 1) - expect1).abs() < 1e-15);
    }

    #[test]
    fn rmsnorm_constant_vector_closed_form() {
        for c in [2.0, -0.5] {
            let n = 8;
            let x = Tensor2D::new(1, n, vec![c; n]);
            let norm = RmsNorm::new(n);
            let (y, _) = norm.forward(&x);
            let expect = c.signum() / libm::sqrt(1.0 + RMSNORM_EPS / (c * c));
            for &v in y.data() {
                assert!((v - expect).abs() < 1e-12, "c={c} v={v} expect={expect}");
            }
        }
    }

    #[test]
    fn swiglu_gradient_matches_finite_differences() {
        let h = 1e-6;
        let base = [0.7, -1.3, 0.2, 2.1, -0.4, 0.9];
        let gy = [0.5, -1.1, 0.8];
        for i in 0..base.len() {
            let mut plus = base;
            plus[i] += h;
            let mut minus = base;
            minus[i] -= h;
            let f = |v: &[f64; 6]| {
                let out = swiglu_forward(&Tensor2D::new(1, 6, v.to_vec())).unwrap();
                out.data()
                    .iter()
                    .zip(gy.iter())
                    .map(|(o, g)| o * g)
                    .sum::<f64>()
            };
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let grads = swiglu_backward(
                &Tensor2D::new(1, 6, base.to_vec()),
                &Tensor2D::new(1, 3, gy.to_vec()),
            );
            let analytic = grads.data()[i];
            assert!(
                (numeric - analytic).abs() / numeric.abs().max(1e-6) < 1e-4,
                "i={i} numeric={numeric} analytic={analytic}"
            );
        }
    }

    #[test]
    fn rmsnorm_gradient_matches_finite_differences() {
        let h = 1e-6;
        let base = [0.9, -0.3, 1.7, 0.05];
        let gain = [1.2, 0.8, -0.5, 1.0];
        let gy = [0.4, -0.9, 0.3, 1.5];
        let loss = |v: &[f64], g: &[f64]| {
            let (out, _) = rmsnorm_forward(&Tensor2D::new(1, 4, v.to_vec()), g, RMSNORM_EPS);
            out.data()
                .iter()
                .zip(gy.iter())
                .map(|(o, gyv)| o * gyv)
                .sum::<f64>()
        };
        let (x_t, rms) = rmsnorm_forward(&Tensor2D::new(1, 4, base.to_vec()), &gain, RMSNORM_EPS);
        let _ = x_t;
        let (gx, ggain) = rmsnorm_backward(
            &Tensor2D::new(1, 4, base.to_vec()),
            &gain,
            &rms,
            &Tensor2D::new(1, 4, gy.to_vec()),
        );
        for i in 0..4 {
            let mut plus = base;
            plus[i] += h;
            let mut minus = base;
            minus[i] -= h;
            let numeric = (loss(&plus, &gain) - loss(&minus, &gain)) / (2.0 * h);
            assert!(
                (numeric - gx.data()[i]).abs() / numeric.abs().max(1e-6) < 1e-4,
                "input grad i={i}"
            );

            let mut gplus = gain;
            gplus[i] += h;
            let mut gminus = gain;
            gminus[i] -= h;
            let numeric_g = (loss(&base, &gplus) - loss(&base, &gminus)) / (2.0 * h);
            assert!(
                (numeric_g - ggain[i]).abs() / numeric_g.abs().max(1e-6) < 1e-4,
                "gain grad i={i}"
            );
        }
    }
}
