use rand::Rng;

use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// A straight-through Gumbel-Softmax draw.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSample<F> {
    /// `argmax(logits + g)`; distributed as `softmax(logits)`.
    pub index: usize,
    pub one_hot: Vec<F>,
    /// `softmax((logits + g) / temperature)`, the path gradients flow through.
    pub soft: Vec<F>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Vector-Jacobian product of softmax: `p * (d - <p, d>)`.
pub fn softmax_backward<F: Scalar>(probs: &[F], d_probs: &[F]) -> Vec<F> {
    let dot: F = probs.iter().zip(d_probs).map(|(&p, &d)| p * d).sum();
    probs.iter().zip(d_probs).map(|(&p, &d)| p * (d - dot)).collect()
}

pub fn gumbel_softmax_sample<F: Scalar, R: Rng + ?Sized>(
    logits: &[F],
    temperature: F,
    rng: &mut R,
) -> Result<GumbelSample<F>> {
    if temperature <= F::zero() || !temperature.is_finite() {
        return contract(format!(
            "Gumbel-Softmax temperature must be positive, got {temperature}"
        ));
    }
    if logits.is_empty() {
        return contract("Gumbel-Softmax needs at least one logit");
    }
    let perturbed: Vec<F> = logits
        .iter()
        .map(|&z| {
            // u in (0, 1): both logs stay finite.
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            z + F::lit(-(-u.ln()).ln())
        })
        .collect();
    let index = argmax(&perturbed);
    let scaled: Vec<F> = perturbed.iter().map(|&v| v / temperature).collect();
    let mut one_hot = vec![F::zero(); logits.len()];
    one_hot[index] = F::one();
    Ok(GumbelSample {
        index,
        one_hot,
        soft: softmax(&scaled),
    })
}

/// Straight-through adjoint: the gradient at the hard sample is routed through
/// the soft probabilities back to the logits.
pub fn gumbel_softmax_backward<F: Scalar>(sample: &GumbelSample<F>, d_out: &[F], temperature: F) -> Vec<F> {
    softmax_backward(&sample.soft, d_out)
        .into_iter()
        .map(|g| g / temperature)
        .collect()
}
