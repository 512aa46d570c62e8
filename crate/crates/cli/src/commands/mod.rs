pub mod decode;
pub mod encode;
pub mod eval_recon;
pub mod rl_demo;
pub mod score;
pub mod synth;
pub mod train;
