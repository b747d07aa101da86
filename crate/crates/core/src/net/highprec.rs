//! `f64` instantiation of the network kernels, used to verify the `f32`
//! production path numerically: central finite differences are meaningful at
//! double precision with ε around 1e−3, and cross-precision forward
//! agreement bounds the accumulated single-precision rounding.

use super::kernel;
use super::TrainConfig;
use crate::error::Result;

pub use super::kernel::ParamsG;

/// Double-precision parameter set.
pub type Params64 = ParamsG<f64>;

/// Kaiming-initialized `f64` network of the given shape.
pub fn init(channels: usize, blocks: usize, seed: u64) -> Params64 {
    ParamsG::init(channels, blocks, seed)
}

/// Full forward pass over one `h × w` single-channel slab.
pub fn forward(params: &Params64, x: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    Ok(kernel::forward_sample(params, x, h, w, false)?.0)
}

/// Forward pass that also returns every rectifier pre-activation slab.
///
/// The composite loss is piecewise linear in any single parameter, so
/// central differences are exact as long as a ±ε probe stays on one linear
/// piece; finite-difference validation uses these slabs to enforce a margin
/// from the rectifier switching points.
pub fn forward_with_rectifier_inputs(
    params: &Params64,
    x: &[f64],
    h: usize,
    w: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (y, cache) = kernel::forward_sample(params, x, h, w, true)?;
    Ok((y, cache.expect("cache requested").pre_relu))
}

/// Hook-free composite loss `λ₁·L1 + λ_f·FFT` of one sample, evaluated
/// end-to-end in `f64`.
pub fn loss(
    params: &Params64,
    x: &[f64],
    target: &[f64],
    h: usize,
    w: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    let y = forward(params, x, h, w)?;
    let l1 = kernel::l1_value(&y, target);
    let fft = kernel::fft_l1_sample(&y, target, h, w, None);
    Ok(cfg.lambda_l1 * l1 + cfg.lambda_fft * fft)
}

/// Loss value plus exact reverse-mode gradients for one sample, in `f64`.
pub fn gradients(
    params: &Params64,
    x: &[f64],
    target: &[f64],
    h: usize,
    w: usize,
    cfg: &TrainConfig,
) -> Result<(f64, Params64)> {
    let (y, cache) = kernel::forward_sample(params, x, h, w, true)?;
    let cache = cache.expect("cache requested");
    let n = h * w;
    let l1 = kernel::l1_value(&y, target);
    let mut d_out = vec![0f64; n];
    kernel::l1_grad_into(&y, target, cfg.lambda_l1, &mut d_out);
    let fft = kernel::fft_l1_sample(&y, target, h, w, Some((cfg.lambda_fft, &mut d_out[..])));
    let mut grads = Params64::zeros(params.channels, params.blocks.len());
    kernel::backward_sample(params, x, h, w, &cache, &d_out, &mut grads);
    Ok((cfg.lambda_l1 * l1 + cfg.lambda_fft * fft, grads))
}
