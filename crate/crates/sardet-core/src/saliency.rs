//! Guided-backprop saliency for Bayesian models.
//!
//! One map per weight sample is produced by a guided-mode forward/backward
//! pass seeded with a one-hot vector at the predicted class on the
//! pre-softmax logits. The per-sample maps are aggregated into a mean and
//! a population standard deviation (divide by T), normalized as
//! `mean / (1 + std)` after clamping negative means to zero, and filtered
//! to the k highest pixels. Scatterer identification scores a ground-truth
//! center as found when any surviving pixel lies within a Chebyshev
//! radius of it.

use crate::bnn::{BayesianModel, WeightSample};
use crate::error::{Error, Result};
use crate::tape::{Mode, Tape};
use crate::tensor::Tensor;
use crate::uncertainty::{summarize, PredictiveSummary};
use crate::ops::softmax_f64;

/// Saliency maps and their aggregates for one input.
#[derive(Clone, Debug)]
pub struct SaliencyBundle {
    /// Raw guided-gradient map per weight sample.
    pub per_sample: Vec<Tensor>,
    /// Per-pixel mean over samples.
    pub mean: Tensor,
    /// Per-pixel population standard deviation (divide by T).
    pub std: Tensor,
    /// `max(mean, 0) / (1 + std)` per pixel.
    pub normalized: Tensor,
    /// `normalized` with only the k highest pixels kept.
    pub topk: Tensor,
    pub k: usize,
    /// Class the backward pass was seeded at.
    pub target_class: usize,
}

impl SaliencyBundle {
    /// Aggregates already-computed per-sample maps.
    pub fn from_samples(
        per_sample: Vec<Tensor>,
        k: usize,
        target_class: usize,
    ) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::EmptyInput("per-sample saliency maps"));
        }
        let shape = per_sample[0].shape().to_vec();
        for m in &per_sample {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "saliency aggregation",
                    expected: format!("{:?}", shape),
                    got: format!("{:?}", m.shape()),
                });
            }
        }
        let n = per_sample[0].len();
        let t = per_sample.len() as f64;
        let mut mean64 = vec![0.0f64; n];
        for m in &per_sample {
            for (acc, &v) in mean64.iter_mut().zip(m.data()) {
                *acc += v as f64;
            }
        }
        for acc in &mut mean64 {
            *acc /= t;
        }
        let mut var64 = vec![0.0f64; n];
        for m in &per_sample {
            for ((acc, &v), &mu) in var64.iter_mut().zip(m.data()).zip(&mean64) {
                let d = v as f64 - mu;
                *acc += d * d;
            }
        }
        let mut mean = Tensor::zeros(shape.clone());
        let mut std = Tensor::zeros(shape.clone());
        let mut normalized = Tensor::zeros(shape);
        for i in 0..n {
            let m = mean64[i];
            let s = (var64[i] / t).sqrt();
            mean.data_mut()[i] = m as f32;
            std.data_mut()[i] = s as f32;
            normalized.data_mut()[i] = (m.max(0.0) / (1.0 + s)) as f32;
        }
        let topk = top_k(&normalized, k);
        Ok(SaliencyBundle {
            per_sample,
            mean,
            std,
            normalized,
            topk,
            k,
            target_class,
        })
    }
}

/// Ground-truth scatterer locations for identification scoring.
#[derive(Clone, Debug)]
pub struct ScattererGroundTruth {
    /// `(row, col)` centers.
    pub centers: Vec<(usize, usize)>,
    /// Chebyshev matching radius in pixels.
    pub footprint_radius: usize,
}

/// Settings for [`gbp_bnn`].
#[derive(Clone, Copy, Debug)]
pub struct GbpConfig {
    /// Monte-Carlo sample count T.
    pub samples: usize,
    /// Base seed; sample i uses `seed + i`, matching the prediction path.
    pub seed: u64,
    /// Pixels kept by the top-k filter.
    pub k: usize,
    /// When set, saliency maps draw fresh weight samples from this seed
    /// while the class prediction keeps using `seed`. By default maps and
    /// prediction share the same samples.
    pub resample_seed: Option<u64>,
}

/// Guided-backprop map for one fixed weight sample.
///
/// Runs a guided forward pass to the pre-softmax logits, seeds backward
/// with one-hot at `target_class`, and returns the input-layer gradient.
pub fn gbp_single(
    model: &BayesianModel,
    x: &Tensor,
    w: &WeightSample,
    target_class: usize,
) -> Result<Tensor> {
    if target_class >= model.num_classes() {
        return Err(Error::OutOfBounds {
            what: "saliency target class",
            detail: format!(
                "class {target_class} with {} classes",
                model.num_classes()
            ),
        });
    }
    let mut tape = Tape::new(Mode::Guided);
    let fwd = model.forward_on_tape(&mut tape, x, w)?;
    let mut seed = Tensor::zeros(vec![model.num_classes()]);
    seed.data_mut()[target_class] = 1.0;
    let mut grads = tape.backward(fwd.logits, &seed)?;
    Ok(grads.take(fwd.input))
}

/// GBP-BNN: guided saliency aggregated over T weight samples, plus the
/// predictive summary the target class was taken from.
pub fn gbp_bnn_with_summary(
    model: &BayesianModel,
    x: &Tensor,
    cfg: &GbpConfig,
) -> Result<(SaliencyBundle, PredictiveSummary)> {
    if cfg.samples < 1 {
        return Err(Error::InvalidParam {
            name: "samples",
            detail: "need at least one saliency sample".into(),
        });
    }
    // Record the guided forward passes once; their logits double as the
    // prediction samples when no resample seed is given.
    let map_seed = cfg.resample_seed.unwrap_or(cfg.seed);
    let mut tapes = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let w = model.sample_weights(map_seed.wrapping_add(i as u64));
        let mut tape = Tape::new(Mode::Guided);
        let fwd = model.forward_on_tape(&mut tape, x, &w)?;
        tapes.push((tape, fwd));
    }
    let rows: Vec<Vec<f64>> = if cfg.resample_seed.is_none() {
        tapes
            .iter()
            .map(|(tape, fwd)| softmax_f64(tape.value(fwd.logits)))
            .collect()
    } else {
        (0..cfg.samples)
            .map(|i| {
                let w = model.sample_weights(cfg.seed.wrapping_add(i as u64));
                Ok(softmax_f64(&model.forward_logits(x, &w)?))
            })
            .collect::<Result<_>>()?
    };
    let summary = summarize(rows)?;

    let mut seed = Tensor::zeros(vec![model.num_classes()]);
    seed.data_mut()[summary.predicted] = 1.0;
    let mut per_sample = Vec::with_capacity(cfg.samples);
    for (tape, fwd) in &tapes {
        let mut grads = tape.backward(fwd.logits, &seed)?;
        per_sample.push(grads.take(fwd.input));
    }
    let bundle = SaliencyBundle::from_samples(per_sample, cfg.k, summary.predicted)?;
    Ok((bundle, summary))
}

/// GBP-BNN without the predictive summary.
pub fn gbp_bnn(model: &BayesianModel, x: &Tensor, cfg: &GbpConfig) -> Result<SaliencyBundle> {
    gbp_bnn_with_summary(model, x, cfg).map(|(bundle, _)| bundle)
}

/// Keeps the k highest values, zeroing the rest. Ties at the cut resolve
/// in row-major order: the lower index wins. `k >= len` is the identity;
/// `k = 0` zeroes everything.
pub fn top_k(map: &Tensor, k: usize) -> Tensor {
    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by(|&a, &b| {
        map.data()[b]
            .total_cmp(&map.data()[a])
            .then(a.cmp(&b))
    });
    let mut out = Tensor::zeros(map.shape().to_vec());
    for &idx in order.iter().take(k) {
        out.data_mut()[idx] = map.data()[idx];
    }
    out
}

/// Fraction of ground-truth scatterers with at least one nonzero top-k
/// pixel within the Chebyshev footprint radius.
pub fn sir(bundle: &SaliencyBundle, truth: &ScattererGroundTruth) -> Result<f64> {
    sir_of_map(&bundle.topk, truth)
}

/// SIR over an explicit top-k map (spatial dims are the trailing two).
pub fn sir_of_map(topk: &Tensor, truth: &ScattererGroundTruth) -> Result<f64> {
    if truth.centers.is_empty() {
        return Err(Error::EmptyInput("scatterer ground truth"));
    }
    let dims = topk.shape();
    if dims.len() < 2 {
        return Err(Error::ShapeMismatch {
            op: "scatterer identification",
            expected: "map with two spatial dims".into(),
            got: format!("{:?}", dims),
        });
    }
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    for &(r, c) in &truth.centers {
        if r >= h || c >= w {
            return Err(Error::OutOfBounds {
                what: "scatterer center",
                detail: format!("({r}, {c}) outside {h}x{w} map"),
            });
        }
    }
    let plane = &topk.data()[..h * w];
    let radius = truth.footprint_radius as i64;
    let mut identified = 0usize;
    for &(cr, cc) in &truth.centers {
        let (cr, cc) = (cr as i64, cc as i64);
        let mut hit = false;
        'scan: for r in (cr - radius).max(0)..=(cr + radius).min(h as i64 - 1) {
            for c in (cc - radius).max(0)..=(cc + radius).min(w as i64 - 1) {
                if plane[(r * w as i64 + c) as usize] != 0.0 {
                    hit = true;
                    break 'scan;
                }
            }
        }
        if hit {
            identified += 1;
        }
    }
    Ok(identified as f64 / truth.centers.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchitectureSpec, LayerSpec};
    use crate::bnn::PriorSpec;
    use proptest::prelude::*;

    fn map(values: Vec<f32>) -> Tensor {
        let n = values.len();
        Tensor::new(vec![1, 1, n], values).unwrap()
    }

    fn square_map(side: usize, values: Vec<f32>) -> Tensor {
        Tensor::new(vec![side, side], values).unwrap()
    }

    fn toy_model() -> BayesianModel {
        let arch = ArchitectureSpec::new(
            (1, 5, 5),
            2,
            vec![
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::Fc { units: 2 },
            ],
        );
        BayesianModel::build(arch, PriorSpec::default(), 15).unwrap()
    }

    #[test]
    fn top_k_keeps_first_of_tied_values() {
        let m = map(vec![5.0, 1.0, 3.0, 3.0]);
        assert_eq!(top_k(&m, 2).data(), &[5.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn top_k_full_is_identity_and_one_is_argmax() {
        let m = map(vec![0.5, 2.0, 1.0]);
        assert_eq!(top_k(&m, 3).data(), m.data());
        assert_eq!(top_k(&m, 8).data(), m.data());
        assert_eq!(top_k(&m, 1).data(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn aggregation_matches_direct_arithmetic() {
        // Per-sample values {1, 2, 3}: mean 2, population std sqrt(2/3),
        // normalized 2 / (1 + sqrt(2/3)).
        let samples = vec![map(vec![1.0]), map(vec![2.0]), map(vec![3.0])];
        let b = SaliencyBundle::from_samples(samples, 1, 0).unwrap();
        assert!((b.mean.data()[0] - 2.0).abs() < 1e-6);
        let expected_std = (2.0f64 / 3.0).sqrt();
        assert!((b.std.data()[0] as f64 - expected_std).abs() < 1e-6);
        let expected_norm = 2.0 / (1.0 + expected_std);
        assert!((b.normalized.data()[0] as f64 - expected_norm).abs() < 1e-6);
        assert!((expected_norm - 1.1010).abs() < 1e-4);
    }

    #[test]
    fn mean_two_std_one_normalizes_to_one() {
        // Samples 1 and 3: mean 2, population std 1.
        let samples = vec![map(vec![1.0]), map(vec![3.0])];
        let b = SaliencyBundle::from_samples(samples, 1, 0).unwrap();
        assert!((b.std.data()[0] - 1.0).abs() < 1e-6);
        assert!((b.normalized.data()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_sample_bundle_degenerates() {
        let samples = vec![map(vec![0.7, -0.2])];
        let b = SaliencyBundle::from_samples(samples, 2, 1).unwrap();
        assert_eq!(b.std.data(), &[0.0, 0.0]);
        // Negative mean clamps to zero before normalization.
        assert_eq!(b.normalized.data(), &[0.7, 0.0]);
        assert_eq!(b.topk.data(), &[0.7, 0.0]);
    }

    #[test]
    fn topk_nonzero_count_is_min_of_k_and_positives() {
        let samples = vec![map(vec![0.4, 0.0, -0.3, 0.9])];
        let b = SaliencyBundle::from_samples(samples, 3, 0).unwrap();
        let nonzero = b.topk.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 2); // only two strictly positive pixels
    }

    #[test]
    fn gbp_single_is_deterministic() {
        let model = toy_model();
        let x = Tensor::filled(vec![1, 5, 5], 0.6);
        let w = model.sample_weights(3);
        let a = gbp_single(&model, &x, &w, 0).unwrap();
        let b = gbp_single(&model, &x, &w, 0).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[1, 5, 5]);
    }

    #[test]
    fn relu_first_network_blocks_zero_input() {
        let arch = ArchitectureSpec::new(
            (1, 3, 3),
            2,
            vec![LayerSpec::Relu, LayerSpec::Fc { units: 2 }],
        );
        let model = BayesianModel::build(arch, PriorSpec::default(), 8).unwrap();
        let x = Tensor::zeros(vec![1, 3, 3]);
        let m = gbp_single(&model, &x, &model.sample_weights(1), 1).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gbp_bnn_is_bit_reproducible_and_shares_prediction_samples() {
        let model = toy_model();
        let x = Tensor::filled(vec![1, 5, 5], 0.4);
        let cfg = GbpConfig {
            samples: 4,
            seed: 9,
            k: 5,
            resample_seed: None,
        };
        let (b1, s1) = gbp_bnn_with_summary(&model, &x, &cfg).unwrap();
        let (b2, s2) = gbp_bnn_with_summary(&model, &x, &cfg).unwrap();
        for (m1, m2) in b1.per_sample.iter().zip(&b2.per_sample) {
            assert_eq!(m1.data(), m2.data());
        }
        assert_eq!(b1.topk.data(), b2.topk.data());
        assert_eq!(s1.mi.to_bits(), s2.mi.to_bits());

        // Shared discipline: the summary matches a standalone predict call.
        let p = crate::uncertainty::predict(&model, &x, 4, 9).unwrap();
        assert_eq!(p.sample_probs, s1.sample_probs);
        assert_eq!(p.predicted, b1.target_class);
    }

    #[test]
    fn gbp_bnn_single_sample_has_zero_std() {
        let model = toy_model();
        let x = Tensor::filled(vec![1, 5, 5], 0.4);
        let cfg = GbpConfig {
            samples: 1,
            seed: 2,
            k: 25,
            resample_seed: None,
        };
        let b = gbp_bnn(&model, &x, &cfg).unwrap();
        assert!(b.std.data().iter().all(|&v| v == 0.0));
        for (n, m) in b.normalized.data().iter().zip(b.mean.data()) {
            assert_eq!(*n, m.max(0.0));
        }
    }

    #[test]
    fn sir_counts_covered_centers() {
        let mut m = square_map(5, vec![0.0; 25]);
        m.data_mut()[1 * 5 + 1] = 0.9; // pixel exactly on center (1,1)
        let truth = ScattererGroundTruth {
            centers: vec![(1, 1), (4, 4)],
            footprint_radius: 0,
        };
        let dummy = SaliencyBundle::from_samples(vec![m], 25, 0).unwrap();
        assert_eq!(sir(&dummy, &truth).unwrap(), 0.5);

        let full = ScattererGroundTruth {
            centers: vec![(1, 1)],
            footprint_radius: 1,
        };
        assert_eq!(sir(&dummy, &full).unwrap(), 1.0);
    }

    #[test]
    fn sir_rejects_empty_or_out_of_bounds_truth() {
        let m = square_map(3, vec![1.0; 9]);
        let b = SaliencyBundle::from_samples(vec![m], 9, 0).unwrap();
        assert!(matches!(
            sir(
                &b,
                &ScattererGroundTruth {
                    centers: vec![],
                    footprint_radius: 1
                }
            )
            .unwrap_err(),
            Error::EmptyInput(_)
        ));
        assert!(sir(
            &b,
            &ScattererGroundTruth {
                centers: vec![(3, 0)],
                footprint_radius: 1
            }
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn sir_is_non_decreasing_in_k(
            values in prop::collection::vec(-1.0f32..1.0, 36..=36),
            centers in prop::collection::vec((0usize..6, 0usize..6), 1..5),
            radius in 0usize..3,
        ) {
            let base = square_map(6, values);
            let truth = ScattererGroundTruth { centers, footprint_radius: radius };
            let mut last = 0.0f64;
            for k in [1usize, 5, 10, 20, 36] {
                let s = sir_of_map(&top_k(&base, k), &truth).unwrap();
                prop_assert!(s + 1e-12 >= last, "k={k}: {s} < {last}");
                last = s;
            }
        }

        #[test]
        fn sir_matches_exhaustive_scan(
            values in prop::collection::vec(0.0f32..1.0, 25..=25),
            centers in prop::collection::vec((0usize..5, 0usize..5), 1..4),
            radius in 0usize..3,
            k in 1usize..25,
        ) {
            let topk = top_k(&square_map(5, values), k);
            let truth = ScattererGroundTruth { centers: centers.clone(), footprint_radius: radius };
            let got = sir_of_map(&topk, &truth).unwrap();
            // Independent scan: for every (center, pixel) pair, check the
            // Chebyshev distance directly.
            let mut found = 0usize;
            for &(cr, cc) in &centers {
                let mut hit = false;
                for r in 0..5usize {
                    for c in 0..5usize {
                        let d = r.abs_diff(cr).max(c.abs_diff(cc));
                        if d <= radius && topk.data()[r * 5 + c] != 0.0 {
                            hit = true;
                        }
                    }
                }
                if hit { found += 1; }
            }
            prop_assert!((got - found as f64 / centers.len() as f64).abs() < 1e-12);
        }

        #[test]
        fn normalized_never_exceeds_nonnegative_mean(
            rows in prop::collection::vec(
                prop::collection::vec(-2.0f32..2.0, 9..=9), 1..6),
        ) {
            let samples: Vec<Tensor> = rows.into_iter().map(|r| square_map(3, r)).collect();
            let b = SaliencyBundle::from_samples(samples, 4, 0).unwrap();
            for (n, m) in b.normalized.data().iter().zip(b.mean.data()) {
                if *m >= 0.0 {
                    prop_assert!(*n <= *m + 1e-6);
                }
                prop_assert!(*n >= 0.0);
            }
            for s in b.std.data() {
                prop_assert!(*s >= 0.0);
            }
        }
    }
}
