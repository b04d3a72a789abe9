//! Differentiable dense-array substrate: tensors, an op tape with exact
//! reverse-mode gradients, Adam, seeded sampling and Gaussian KL.

mod adam;
mod gaussian;
mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gaussian::{gaussian_kl, gaussian_kl_1d, LatentGaussian};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use params::ParamStore;
pub use rng::{derive_seed, Rng};
pub use tape::{Grads, OpKind, Tape, Var};
pub use tensor::Tensor;

/// Weights uniform in `[-1/√fan_in, 1/√fan_in]`.
pub fn init_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_raw(shape.to_vec(), data)
}

/// Draws standard normal noise. The result is an ordinary constant, so no
/// gradient flows back through the sampling.
pub fn sample_standard_normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.standard_normal(shape)
}
