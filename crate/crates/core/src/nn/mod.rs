//! A small dense feed-forward engine with hand-written reverse mode.
//!
//! Parameters live in one flat vector (`ParamLayout` maps it onto layers), which
//! is what the quantization methods operate on.

mod gradcheck;
mod loss;
mod network;
mod tensor;

pub use gradcheck::{
    central_difference_error, finite_diff_check, loss_and_gradient, relative_error, GRADCHECK_FLOOR};
pub use loss::cross_entropy;
pub use network::{
    BatchNormStats, BatchStats, Cache, Layer, Mode, Network, NetworkSpec, ParamLayout, Segment,
    SegmentKind, BATCHNORM_EPS, BATCHNORM_MOMENTUM,
};
pub use tensor::Tensor;

use rand::Rng;

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every weight and bias.
pub fn fan_in_uniform_init<R: Rng + ?Sized>(net: &Network, rng: &mut R) -> Vec<f64> {
    let mut params = vec![0.0; net.param_count()];
    for seg in &net.layout().segments {
        let bound = 1.0 / (net.layout().fan_in(net.spec(), seg) as f64).sqrt();
        for p in &mut params[seg.offset..seg.offset + seg.len] {
            *p = rng.random_range(-bound..=bound);
        }
    }
    params
}
