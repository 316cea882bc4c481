//! Deterministic numeric substrate: dense networks with reverse-mode
//! gradients, softmax/entropy primitives, Adam, and gradient verification.

mod adam;
pub mod checkpoint;
mod dense;
pub mod gradcheck;
mod matrix;
mod ops;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub(crate) use dense::fnv_mix;
pub use dense::{Activation, DenseNet, Layer, LayerGrads, NetGrads, Tape};
pub use gradcheck::{finite_diff_check, GradCheckReport, LossEval};
pub use matrix::Matrix;
pub use ops::{
    argmax, cross_entropy_with_logits, entropy_normalized, sigmoid, softmax_temp,
    PredictiveDistribution, LOG_CLAMP,
};
pub(crate) use ops::{entropy_logit_grad, entropy_normalized_slice, softmax_in_place};
pub use params::ParamSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for one named purpose under a run seed. Distinct names give
/// independent streams, so adding a consumer never perturbs another.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = fnv_mix(0xcbf2_9ce4_8422_2325, seed);
    for chunk in name.as_bytes().chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        h = fnv_mix(h, u64::from_le_bytes(buf));
    }
    ChaCha8Rng::seed_from_u64(h)
}
