//! Graph-free versions of the losses and activations, used by evaluation
//! code and as reference points in tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{bce_mean, ce_single, clamp_prob, softmax_in_place, PROB_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `-[y ln p + (1-y) ln(1-p)]` with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(p: T, y: T) -> T {
    bce_mean(&[p], &[y])
}

/// Mean binary cross-entropy over a batch.
pub fn bce_loss_batch<T: Scalar>(p: &[T], y: &[T]) -> T {
    bce_mean(p, y)
}

/// `-ln probabilities[class]`, clamped like [`bce_loss`].
pub fn ce_loss<T: Scalar>(probabilities: &[T], class: usize) -> Result<T> {
    if class >= probabilities.len() {
        return Err(Error::protocol(format!(
            "class index {class} out of range for {} classes",
            probabilities.len()
        )));
    }
    Ok(ce_single(probabilities, class))
}

pub fn clamp_probability<T: Scalar>(p: T) -> T {
    clamp_prob(p, T::lit(PROB_EPS))
}

/// Inverted dropout outside of a graph. Identity when `training` is false.
pub fn dropout<T: Scalar>(x: &[T], rate: f64, training: bool, seed: u64) -> Vec<T> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if !training || rate == 0.0 {
        return x.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::lit(1.0 / (1.0 - rate));
    x.iter()
        .map(|v| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                *v * keep
            }
        })
        .collect()
}
