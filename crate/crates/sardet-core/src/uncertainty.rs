//! Monte-Carlo predictive inference and epistemic-uncertainty scoring.
//!
//! `predict` runs T sampled forward passes and averages the per-sample
//! class probabilities into the predictive distribution. The epistemic
//! score is the mutual information between prediction and weights:
//! the entropy of the averaged distribution minus the average entropy of
//! the per-sample distributions, in nats. Entropies clamp probabilities
//! by `ln(p + 1e-12)` so one-hot rows stay finite, and all accumulation
//! is 64-bit.

use crate::bnn::BayesianModel;
use crate::error::{Error, Result};
use crate::ops::softmax_f64;
use crate::tensor::Tensor;

/// Clamp added inside entropy logarithms.
pub const ENTROPY_CLAMP: f64 = 1e-12;

/// Monte-Carlo prediction summary for one input.
#[derive(Clone, Debug)]
pub struct PredictiveSummary {
    /// T rows of per-sample class probabilities, each summing to 1.
    pub sample_probs: Vec<Vec<f64>>,
    /// Column mean of `sample_probs`: the predictive distribution.
    pub mean_probs: Vec<f64>,
    /// Mutual information between prediction and weights, in nats.
    pub mi: f64,
    /// Sample count T.
    pub t: usize,
    /// `argmax(mean_probs)`, ties broken by the lowest class index.
    pub predicted: usize,
}

/// Runs `t` sampled forward passes with per-pass seeds `seed + i`.
pub fn predict(model: &BayesianModel, x: &Tensor, t: usize, seed: u64) -> Result<PredictiveSummary> {
    if t < 1 {
        return Err(Error::InvalidParam {
            name: "samples",
            detail: "need at least one forward sample".into(),
        });
    }
    let mut sample_probs = Vec::with_capacity(t);
    for i in 0..t {
        let w = model.sample_weights(seed.wrapping_add(i as u64));
        let logits = model.forward_logits(x, &w)?;
        sample_probs.push(softmax_f64(&logits));
    }
    summarize(sample_probs)
}

/// Builds a summary from already-computed probability rows.
pub fn summarize(sample_probs: Vec<Vec<f64>>) -> Result<PredictiveSummary> {
    let mi = mutual_information(&sample_probs)?;
    let mean_probs = column_mean(&sample_probs);
    let predicted = argmax_f64(&mean_probs);
    Ok(PredictiveSummary {
        t: sample_probs.len(),
        sample_probs,
        mean_probs,
        mi,
        predicted,
    })
}

/// Entropy in nats with the `ln(p + 1e-12)` clamp.
pub fn entropy_nats(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| p * (p + ENTROPY_CLAMP).ln()).sum::<f64>()
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let t = rows.len() as f64;
    let c = rows[0].len();
    let mut mean = vec![0.0f64; c];
    for row in rows {
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= t;
    }
    mean
}

fn argmax_f64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// `H(mean of rows) - mean of H(row)`, clamped to zero from below.
///
/// Rows must be probability distributions over the same classes. The
/// result is analytically non-negative; tiny negative values from
/// floating-point cancellation return as exactly 0.
pub fn mutual_information(sample_probs: &[Vec<f64>]) -> Result<f64> {
    if sample_probs.is_empty() {
        return Err(Error::EmptyInput("sample probability matrix"));
    }
    let c = sample_probs[0].len();
    if c == 0 {
        return Err(Error::EmptyInput("class probabilities"));
    }
    for row in sample_probs {
        if row.len() != c {
            return Err(Error::ShapeMismatch {
                op: "mutual_information",
                expected: format!("rows of {c} classes"),
                got: format!("row of {} classes", row.len()),
            });
        }
    }
    let mean = column_mean(sample_probs);
    let mean_entropy: f64 =
        sample_probs.iter().map(|r| entropy_nats(r)).sum::<f64>() / sample_probs.len() as f64;
    let mi = entropy_nats(&mean) - mean_entropy;
    Ok(mi.max(0.0))
}
