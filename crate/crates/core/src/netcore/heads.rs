//! Diagonal Gaussian and softmax-categorical distributions with their
//! analytic gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| {
            let z = (x - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LOG_2PI
        })
        .sum()
}

/// Gradients of [`gaussian_logprob`] with respect to the mean and log-std,
/// written into `d_mean` and `d_log_std` (overwritten, not accumulated).
pub fn gaussian_logprob_grad(mean: &[f64], log_std: &[f64], a: &[f64], d_mean: &mut [f64], d_log_std: &mut [f64]) {
    for i in 0..mean.len() {
        let inv_var = (-2.0 * log_std[i]).exp();
        let diff = a[i] - mean[i];
        d_mean[i] = diff * inv_var;
        d_log_std[i] = diff * diff * inv_var - 1.0;
    }
}

/// Differential entropy; its gradient is 1 per log-std entry.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LOG_2PI).sum()
}

pub fn gaussian_sample<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let e: f64 = StandardNormal.sample(rng);
            m + ls.exp() * e
        })
        .collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn categorical_logprob(logits: &[f64], k: usize) -> f64 {
    log_softmax(logits)[k]
}

/// d log p_k / d logits = onehot(k) - p.
pub fn categorical_logprob_grad(logits: &[f64], k: usize, d_logits: &mut [f64]) {
    for (i, p) in softmax(logits).into_iter().enumerate() {
        d_logits[i] = if i == k { 1.0 - p } else { -p };
    }
}

pub fn categorical_entropy(logits: &[f64]) -> f64 {
    log_softmax(logits).iter().map(|lp| -lp.exp() * lp).sum()
}

/// dH / d logit_i = -p_i (log p_i + H).
pub fn categorical_entropy_grad(logits: &[f64], d_logits: &mut [f64]) {
    let lp = log_softmax(logits);
    let h: f64 = lp.iter().map(|l| -l.exp() * l).sum();
    for i in 0..lp.len() {
        d_logits[i] = -lp[i].exp() * (lp[i] + h);
    }
}

pub fn categorical_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}
