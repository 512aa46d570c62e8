//! Affine layer `y = x W + b` with analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::tensor::Tensor2D;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Weights, `[input, output]` row-major.
    pub w: Tensor2D,
    /// Bias, length `output`.
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor2D::zeros(input, output),
            b: vec![0.0; output],
        }
    }

    /// Fan-in scaled uniform init: `W ~ U(-1/sqrt(in), 1/sqrt(in))`, `b = 0`.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(input as f64);
        let w = Tensor2D::new(
            input,
            output,
            (0..input * output)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect(),
        );
        Self {
            w,
            b: vec![0.0; output],
        }
    }

    pub fn input_width(&self) -> usize {
        self.w.rows()
    }

    pub fn output_width(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Tensor2D) -> Tensor2D {
        let mut y = x.matmul(&self.w);
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            for (v, &bias) in row.iter_mut().zip(self.b.iter()) {
                *v += bias;
            }
        }
        y
    }

    /// Returns `(grad_w, grad_b, grad_x)` for the cached input `x`.
    pub fn backward(&self, x: &Tensor2D, grad_out: &Tensor2D) -> (Tensor2D, Vec<f64>, Tensor2D) {
        let grad_w = x.matmul_at_b(grad_out);
        let grad_b = grad_out.sum_rows();
        let grad_x = grad_out.matmul_a_bt(&self.w);
        (grad_w, grad_b, grad_x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_applies_weights_and_bias() {
        let mut lin = Linear::zeros(2, 2);
        lin.w = Tensor2D::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        lin.b = vec![0.5, -0.5];
        let x = Tensor2D::from_rows(&[&[1.0, 1.0]]);
        let y = lin.forward(&x);
        assert_eq!(y.data(), &[4.5, 5.5]);
    }

    #[test]
    fn backward_shapes_and_values() {
        let mut lin = Linear::zeros(3, 2);
        lin.w = Tensor2D::from_fn(3, 2, |r, c| (r + c) as f64);
        let x = Tensor2D::from_rows(&[&[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0]]);
        let gy = Tensor2D::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (gw, gb, gx) = lin.backward(&x, &gy);
        assert_eq!((gw.rows(), gw.cols()), (3, 2));
        assert_eq!(gb, vec![1.0, 1.0]);
        assert_eq!((gx.rows(), gx.cols()), (2, 3));
        // grad_w = x^T gy: entry (0,0) = 1.0*1.0 + 0.5*0.0 = 1.0
        assert_eq!(gw.get(0, 0), 1.0);
        // grad_x row 0 = gy row 0 * W^T = W column picked by gy
        assert_eq!(gx.row(0), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::init(16, 8, &mut rng);
        let bound = 1.0 / 4.0;
        assert!(lin.w.data().iter().all(|v| v.abs() <= bound));
        assert!(lin.b.iter().all(|&v| v == 0.0));
    }
}
