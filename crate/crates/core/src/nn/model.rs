//! Residual MLP blocks and the encoder/decoder model built from them.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor2D;

use super::linear::Linear;
use super::ops::{swiglu_backward, swiglu_forward, RmsNorm};

/// Architecture description; widths are free so tests can use toy sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub blocks: usize,
}

impl MlpConfig {
    /// Patch encoder: 64 samples in, 128-d embedding out, 6 blocks of 512.
    pub fn encoder_default() -> Self {
        Self {
            input: crate::PATCH_LEN,
            hidden: 512,
            output: 128,
            blocks: 6,
        }
    }

    /// Patch decoder: mirror of the encoder.
    pub fn decoder_default() -> Self {
        Self {
            input: 128,
            hidden: 512,
            output: crate::PATCH_LEN,
            blocks: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.output == 0 || self.blocks == 0 {
            return Err(CoreError::invalid_config("MLP widths and blocks must be > 0"));
        }
        Ok(())
    }

    /// Input/output width of block `i`: the trunk runs at `hidden`, with the
    /// first and last block adapting to the model input/output widths.
    pub fn block_widths(&self, i: usize) -> (usize, usize) {
        let w_in = if i == 0 { self.input } else { self.hidden };
        let w_out = if i + 1 == self.blocks {
            self.output
        } else {
            self.hidden
        };
        (w_in, w_out)
    }
}

/// `y = shortcut(x) + down(swiglu(up(rmsnorm(x))))`
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm: RmsNorm,
    pub up: Linear,
    pub down: Linear,
    /// Affine projection when input and output widths differ, else identity.
    pub shortcut: Option<Linear>,
}

impl Block {
    pub fn init<R: Rng>(w_in: usize, w_out: usize, hidden: usize, rng: &mut R) -> Self {
        let shortcut = (w_in != w_out).then(|| Linear::init(w_in, w_out, rng));
        Self {
            norm: RmsNorm::new(w_in),
            up: Linear::init(w_in, 2 * hidden, rng),
            down: Linear::init(hidden, w_out, rng),
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor2D) -> Result<(Tensor2D, BlockCache)> {
        let (normed, rms) = self.norm.forward(x);
        let u = self.up.forward(&normed);
        let s = swiglu_forward(&u)?;
        let mut y = self.down.forward(&s);
        match &self.shortcut {
            Some(sc) => y.add_assign(&sc.forward(x)),
            None => y.add_assign(x),
        }
        let cache = BlockCache {
            x: x.clone(),
            rms,
            normed,
            u,
            s,
        };
        Ok((y, cache))
    }

    fn infer(&self, x: &Tensor2D) -> Result<Tensor2D> {
        let (normed, _) = self.norm.forward(x);
        let s = swiglu_forward(&self.up.forward(&normed))?;
        let mut y = self.down.forward(&s);
        match &self.shortcut {
            Some(sc) => y.add_assign(&sc.forward(x)),
            None => y.add_assign(x),
        }
        Ok(y)
    }

    fn backward(&self, cache: &BlockCache, grad_out: &Tensor2D) -> (BlockGrads, Tensor2D) {
        let (down_w, down_b, grad_s) = self.down.backward(&cache.s, grad_out);
        let grad_u = swiglu_backward(&cache.u, &grad_s);
        let (up_w, up_b, grad_normed) = self.up.backward(&cache.normed, &grad_u);
        let (mut grad_x, gain) = self.norm.backward(&cache.x, &cache.rms, &grad_normed);
        let shortcut = match &self.shortcut {
            Some(sc) => {
                let (sc_w, sc_b, grad_x_sc) = sc.backward(&cache.x, grad_out);
                grad_x.add_assign(&grad_x_sc);
                Some((sc_w, sc_b))
            }
            None => {
                grad_x.add_assign(grad_out);
                None
            }
        };
        (
            BlockGrads {
                gain,
                up_w,
                up_b,
                down_w,
                down_b,
                shortcut,
            },
            grad_x,
        )
    }
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Tensor2D,
    rms: Vec<f64>,
    normed: Tensor2D,
    u: Tensor2D,
    s: Tensor2D,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub gain: Vec<f64>,
    pub up_w: Tensor2D,
    pub up_b: Vec<f64>,
    pub down_w: Tensor2D,
    pub down_b: Vec<f64>,
    pub shortcut: Option<(Tensor2D, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub blocks: Vec<BlockGrads>,
}

impl MlpGrads {
    pub fn scale(&mut self, s: f64) {
        self.visit_mut(&mut |_, data| {
            for v in data {
                *v *= s;
            }
        });
    }

    /// Visits gradient arrays in the same order as [`Mlp::visit_params`].
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("block{i}.norm.gain"), &b.gain);
            f(&format!("block{i}.up.w"), b.up_w.data());
            f(&format!("block{i}.up.b"), &b.up_b);
            f(&format!("block{i}.down.w"), b.down_w.data());
            f(&format!("block{i}.down.b"), &b.down_b);
            if let Some((w, bias)) = &b.shortcut {
                f(&format!("block{i}.shortcut.w"), w.data());
                f(&format!("block{i}.shortcut.b"), bias);
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("block{i}.norm.gain"), &mut b.gain);
            f(&format!("block{i}.up.w"), b.up_w.data_mut());
            f(&format!("block{i}.up.b"), &mut b.up_b);
            f(&format!("block{i}.down.w"), b.down_w.data_mut());
            f(&format!("block{i}.down.b"), &mut b.down_b);
            if let Some((w, bias)) = &mut b.shortcut {
                f(&format!("block{i}.shortcut.w"), w.data_mut());
                f(&format!("block{i}.shortcut.b"), bias);
            }
        }
    }
}

/// Stack of residual blocks forming the encoder or decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub blocks: Vec<Block>,
}

impl Mlp {
    pub fn init<R: Rng>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let blocks = (0..config.blocks)
            .map(|i| {
                let (w_in, w_out) = config.block_widths(i);
                Block::init(w_in, w_out, config.hidden, rng)
            })
            .collect();
        Ok(Self { config, blocks })
    }

    fn check_input(&self, x: &Tensor2D) -> Result<()> {
        if x.cols() != self.config.input {
            return Err(CoreError::ShapeMismatch {
                context: "mlp forward".to_string(),
                expected: format!("{} cols", self.config.input),
                got: format!("{} cols", x.cols()),
            });
        }
        Ok(())
    }

    /// Forward pass keeping the activations needed for backward.
    pub fn forward(&self, x: &Tensor2D) -> Result<(Tensor2D, ForwardCache)> {
        self.check_input(x)?;
        let batch = x.rows();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for block in &self.blocks {
            let (y, cache) = block.forward(&cur)?;
            caches.push(cache);
            cur = y;
        }
        Ok((
            cur,
            ForwardCache {
                batch,
                blocks: caches,
            },
        ))
    }

    /// Forward pass without caching, for evaluation.
    pub fn infer(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = block.infer(&cur)?;
        }
        Ok(cur)
    }

    /// Backpropagates `grad_out` through the cached forward pass, returning
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor2D) -> Result<(MlpGrads, Tensor2D)> {
        if cache.blocks.len() != self.blocks.len() || grad_out.rows() != cache.batch {
            return Err(CoreError::ShapeMismatch {
                context: "mlp backward cache".to_string(),
                expected: format!("{} blocks, batch {}", self.blocks.len(), cache.batch),
                got: format!("{} blocks, batch {}", cache.blocks.len(), grad_out.rows()),
            });
        }
        if grad_out.cols() != self.config.output {
            return Err(CoreError::ShapeMismatch {
                context: "mlp backward".to_string(),
                expected: format!("{} cols", self.config.output),
                got: format!("{} cols", grad_out.cols()),
            });
        }
        let mut grads: Vec<BlockGrads> = Vec::with_capacity(self.blocks.len());
        let mut grad = grad_out.clone();
        for (block, cache) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            let (bg, gx) = block.backward(cache, &grad);
            grads.push(bg);
            grad = gx;
        }
        grads.reverse();
        Ok((MlpGrads { blocks: grads }, grad))
    }

    /// Visits every parameter array in a fixed, documented order:
    /// per block: norm gain, up w/b, down w/b, then shortcut w/b if present.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("block{i}.norm.gain"), 1, b.norm.gain.len(), &b.norm.gain);
            f(&format!("block{i}.up.w"), b.up.w.rows(), b.up.w.cols(), b.up.w.data());
            f(&format!("block{i}.up.b"), 1, b.up.b.len(), &b.up.b);
            f(&format!("block{i}.down.w"), b.down.w.rows(), b.down.w.cols(), b.down.w.data());
            f(&format!("block{i}.down.b"), 1, b.down.b.len(), &b.down.b);
            if let Some(sc) = &b.shortcut {
                f(&format!("block{i}.shortcut.w"), sc.w.rows(), sc.w.cols(), sc.w.data());
                f(&format!("block{i}.shortcut.b"), 1, sc.b.len(), &sc.b);
            }
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("block{i}.norm.gain"), &mut b.norm.gain);
            f(&format!("block{i}.up.w"), b.up.w.data_mut());
            f(&format!("block{i}.up.b"), &mut b.up.b);
            f(&format!("block{i}.down.w"), b.down.w.data_mut());
            f(&format!("block{i}.down.b"), &mut b.down.b);
            if let Some(sc) = &mut b.shortcut {
                f(&format!("block{i}.shortcut.w"), sc.w.data_mut());
                f(&format!("block{i}.shortcut.b"), &mut sc.b);
            }
        }
    }

    /// Gradient holder of the right shape, filled with zeros.
    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            blocks: (0..self.config.blocks)
                .map(|i| {
                    let (w_in, w_out) = self.config.block_widths(i);
                    let hidden = self.config.hidden;
                    BlockGrads {
                        gain: vec![0.0; w_in],
                        up_w: Tensor2D::zeros(w_in, 2 * hidden),
                        up_b: vec![0.0; 2 * hidden],
                        down_w: Tensor2D::zeros(hidden, w_out),
                        down_b: vec![0.0; w_out],
                        shortcut: (w_in != w_out)
                            .then(|| (Tensor2D::zeros(w_in, w_out), vec![0.0; w_out])),
                    }
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, _, data| n += data.len());
        n
    }

    /// Zeroes the feed-forward path of every block, leaving shortcuts alone.
    /// The model then computes the composition of its shortcut projections.
    pub fn zero_ff_path(&mut self) {
        for b in &mut self.blocks {
            b.up.w.scale_assign(0.0);
            b.up.b.iter_mut().for_each(|v| *v = 0.0);
            b.down.w.scale_assign(0.0);
            b.down.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> MlpConfig {
        MlpConfig {
            input: 8,
            hidden: 16,
            output: 8,
            blocks: 2,
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Mlp::init(tiny_config(), &mut rng).unwrap();
        let x = Tensor2D::from_fn(5, 8, |r, c| (r as f64 * 0.3) - (c as f64 * 0.1));
        let (y1, _) = model.forward(&x).unwrap();
        let y2 = model.infer(&x).unwrap();
        assert_eq!((y1.rows(), y1.cols()), (5, 8));
        assert_eq!(y1.data(), y2.data());

        // Same seed, same input: bit-identical output.
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let model2 = Mlp::init(tiny_config(), &mut rng2).unwrap();
        let y3 = model2.infer(&x).unwrap();
        assert_eq!(y1.data(), y3.data());
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Mlp::init(tiny_config(), &mut rng).unwrap();
        let x = Tensor2D::from_fn(4, 8, |r, c| ((r * 8 + c) as f64).sin());
        let full = model.infer(&x).unwrap();
        for r in 0..4 {
            let single = model.infer(&x.row_tensor(r)).unwrap();
            assert_eq!(single.row(0), full.row(r), "row {r}");
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Mlp::init(tiny_config(), &mut rng).unwrap();
        let x = Tensor2D::zeros(2, 7);
        assert!(model.forward(&x).is_err());
    }

    #[test]
    fn zeroed_final_projection_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Mlp::init(tiny_config(), &mut rng).unwrap();
        let last = model.blocks.last_mut().unwrap();
        last.down.w.scale_assign(0.0);
        last.down.b.iter_mut().for_each(|v| *v = 0.0);
        // The last block runs 16 -> 8, so its shortcut is a projection;
        // zero it too so every path through the block is cut.
        last.shortcut = Some(Linear::zeros(16, 8));
        let x = Tensor2D::zeros(3, 8);
        let y = model.infer(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_ff_path_reduces_to_shortcut_chain() {
        let config = MlpConfig {
            input: 4,
            hidden: 8,
            output: 6,
            blocks: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = Mlp::init(config, &mut rng).unwrap();
        model.zero_ff_path();
        let x = Tensor2D::from_fn(3, 4, |r, c| (r + c) as f64 * 0.5 - 1.0);
        let y = model.infer(&x).unwrap();
        // Expected: x through block0 shortcut (4 -> 8) then block1 shortcut (8 -> 6).
        let sc0 = model.blocks[0].shortcut.as_ref().unwrap();
        let sc1 = model.blocks[1].shortcut.as_ref().unwrap();
        let expect = sc1.forward(&sc0.forward(&x));
        for (a, b) in y.data().iter().zip(expect.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = Mlp::init(tiny_config(), &mut rng).unwrap();
        let x = Tensor2D::from_fn(2, 8, |r, c| (r as f64) - (c as f64) * 0.2);
        let (_, cache) = model.forward(&x).unwrap();
        let gy = Tensor2D::from_fn(2, 8, |r, c| (r + c) as f64 * 0.1 + 0.05);
        let mut gy2 = gy.clone();
        gy2.scale_assign(2.0);
        let (g1, gx1) = model.backward(&cache, &gy).unwrap();
        let (g2, gx2) = model.backward(&cache, &gy2).unwrap();
        let mut flat1 = Vec::new();
        g1.visit(&mut |_, d| flat1.extend_from_slice(d));
        let mut flat2 = Vec::new();
        g2.visit(&mut |_, d| flat2.extend_from_slice(d));
        for (a, b) in flat1.iter().zip(flat2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-9);
        }
        for (a, b) in gx1.data().iter().zip(gx2.data().iter()) {
            assert!((2.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_output_head_blocks_gradient_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut model = Mlp::init(tiny_config(), &mut rng).unwrap();
        // Cut every path through the last block: output is constant zero,
        // so no gradient reaches the input or the earlier blocks.
        let last = model.blocks.last_mut().unwrap();
        last.down.w.scale_assign(0.0);
        last.down.b.iter_mut().for_each(|v| *v = 0.0);
        last.shortcut = Some(Linear::zeros(16, 8));
        let x = Tensor2D::from_fn(2, 8, |r, c| (r + c) as f64 * 0.3);
        let (y, cache) = model.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let gy = Tensor2D::from_fn(2, 8, |_, _| 1.0);
        let (grads, gx) = model.backward(&cache, &gy).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        let mut first_block_grads = Vec::new();
        grads.blocks[0].up_w.data().iter().for_each(|&v| first_block_grads.push(v));
        assert!(first_block_grads.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_count_matches_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Mlp::init(MlpConfig::encoder_default(), &mut rng).unwrap();
        // Direct arithmetic from the block structure.
        let count_block = |w_in: usize, w_out: usize, h: usize| {
            let mut n = w_in; // gain
            n += w_in * 2 * h + 2 * h; // up
            n += h * w_out + w_out; // down
            if w_in != w_out {
                n += w_in * w_out + w_out; // shortcut
            }
            n
        };
        let expect = count_block(64, 512, 512)
            + 4 * count_block(512, 512, 512)
            + count_block(512, 128, 512);
        assert_eq!(enc.param_count(), expect);
        assert_eq!(enc.param_count(), 4_173_632);
    }
}
