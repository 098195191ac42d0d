//! Adversarial-input detection: threshold calibration, ROC and AUC.
//!
//! The decision rule is strict: an input whose uncertainty exceeds the
//! threshold is declared adversarial; ties at the threshold stay benign.
//! Threshold search enumerates every observed uncertainty as a candidate
//! and keeps the one with the best TPR subject to `FPR <= alpha`.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// One validation item: uncertainty score plus ground-truth class.
#[derive(Clone, Copy, Debug)]
pub struct LabeledScore {
    pub uncertainty: f64,
    /// True for adversarial (label 1), false for benign (label 0).
    pub adversarial: bool,
}

/// Scored validation set with at least the labels needed for rates.
#[derive(Clone, Debug, Default)]
pub struct ValidationSet {
    items: Vec<LabeledScore>,
}

impl ValidationSet {
    pub fn new(items: Vec<LabeledScore>) -> Result<Self> {
        if items.iter().any(|i| !i.uncertainty.is_finite()) {
            return Err(Error::NonFinite {
                op: "validation uncertainty".into(),
            });
        }
        Ok(ValidationSet { items })
    }

    pub fn from_scores(benign: &[f64], adversarial: &[f64]) -> Result<Self> {
        let items = benign
            .iter()
            .map(|&u| LabeledScore {
                uncertainty: u,
                adversarial: false,
            })
            .chain(adversarial.iter().map(|&u| LabeledScore {
                uncertainty: u,
                adversarial: true,
            }))
            .collect();
        ValidationSet::new(items)
    }

    pub fn items(&self) -> &[LabeledScore] {
        &self.items
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let adv = self.items.iter().filter(|i| i.adversarial).count();
        let ben = self.items.len() - adv;
        if adv == 0 {
            return Err(Error::EmptyInput("adversarial class"));
        }
        if ben == 0 {
            return Err(Error::EmptyInput("benign class"));
        }
        Ok((ben, adv))
    }
}

/// Calibrated decision rule: adversarial iff `u > threshold`.
#[derive(Clone, Copy, Debug)]
pub struct DetectionPolicy {
    pub threshold: f64,
    pub alpha: f64,
}

impl DetectionPolicy {
    pub fn is_adversarial(&self, uncertainty: f64) -> bool {
        uncertainty > self.threshold
    }
}

/// `(tpr, fpr)` of the rule `u > theta` over the set.
pub fn tpr_fpr(set: &ValidationSet, theta: f64) -> Result<(f64, f64)> {
    let (ben, adv) = set.class_counts()?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for item in set.items() {
        if item.uncertainty > theta {
            if item.adversarial {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok((tp as f64 / adv as f64, fp as f64 / ben as f64))
}

/// Result of the threshold search.
#[derive(Clone, Copy, Debug)]
pub struct ThresholdSearch {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// False when no candidate under the FPR budget improved on the
    /// initialized `(tpr, theta) = (0, 0)`: the returned threshold is then
    /// the initialization rather than a measured candidate, and callers
    /// should surface it as a warning.
    pub feasible: bool,
}

/// Best-TPR threshold subject to `FPR <= alpha`.
///
/// Candidates are exactly the observed uncertainty values. The search
/// starts from `(tpr, theta) = (0, 0)`; a candidate only displaces the
/// incumbent with a strictly better TPR, and equal-TPR candidates resolve
/// to the largest threshold (never a higher FPR).
pub fn find_threshold(set: &ValidationSet, alpha: f64) -> Result<ThresholdSearch> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParam {
            name: "alpha",
            detail: format!("FPR tolerance must lie in [0,1], got {alpha}"),
        });
    }
    set.class_counts()?;
    let mut best: Option<(f64, f64, f64)> = None; // (tpr, theta, fpr)
    for item in set.items() {
        let theta = item.uncertainty;
        let (tpr, fpr) = tpr_fpr(set, theta)?;
        if fpr > alpha || tpr == 0.0 {
            continue; // over budget, or cannot beat the initialized (0, 0)
        }
        let better = match best {
            None => true,
            Some((bt, bth, _)) => tpr > bt || (tpr == bt && theta > bth),
        };
        if better {
            best = Some((tpr, theta, fpr));
        }
    }
    Ok(match best {
        Some((tpr, threshold, fpr)) => ThresholdSearch {
            threshold,
            tpr,
            fpr,
            feasible: true,
        },
        None => ThresholdSearch {
            threshold: 0.0,
            tpr: 0.0,
            fpr: 0.0,
            feasible: false,
        },
    })
}

/// One ROC sweep position.
#[derive(Clone, Copy, Debug)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve with trapezoidal AUC.
#[derive(Clone, Debug)]
pub struct RocCurve {
    /// Points ordered by descending threshold: (0,0) under the +inf
    /// sentinel through (1,1) under the -inf sentinel.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// CSV rows `threshold,fpr,tpr` with a trailing `auc` footer row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        let _ = writeln!(out, "auc,{},", self.auc);
        out
    }
}

/// Sweeps every distinct uncertainty (plus infinite sentinels) as a
/// threshold and integrates TPR over FPR with the trapezoid rule. Equals
/// the pairwise Mann-Whitney statistic with ties counted one half.
pub fn roc_auc(set: &ValidationSet) -> Result<RocCurve> {
    let (ben, adv) = set.class_counts()?;
    let mut sorted: Vec<&LabeledScore> = set.items().iter().collect();
    sorted.sort_by(|a, b| b.uncertainty.total_cmp(&a.uncertainty));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut cum_adv = 0usize;
    let mut cum_ben = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].uncertainty;
        // The point for threshold `value` counts strictly greater items,
        // i.e. everything accumulated before this tie group.
        points.push(RocPoint {
            threshold: value,
            fpr: cum_ben as f64 / ben as f64,
            tpr: cum_adv as f64 / adv as f64,
        });
        while i < sorted.len() && sorted[i].uncertainty == value {
            if sorted[i].adversarial {
                cum_adv += 1;
            } else {
                cum_ben += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });

    let mut auc = 0.0f64;
    for pair in points.windows(2) {
        auc += (pair[1].fpr - pair[0].fpr) * (pair[1].tpr + pair[0].tpr) * 0.5;
    }
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(benign: &[f64], adv: &[f64]) -> ValidationSet {
        ValidationSet::from_scores(benign, adv).unwrap()
    }

    /// O(n^2) pairwise AUC with ties counted one half.
    fn mann_whitney_auc(s: &ValidationSet) -> f64 {
        let adv: Vec<f64> = s
            .items()
            .iter()
            .filter(|i| i.adversarial)
            .map(|i| i.uncertainty)
            .collect();
        let ben: Vec<f64> = s
            .items()
            .iter()
            .filter(|i| !i.adversarial)
            .map(|i| i.uncertainty)
            .collect();
        let mut score = 0.0f64;
        for &a in &adv {
            for &b in &ben {
                score += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        score / (adv.len() * ben.len()) as f64
    }

    #[test]
    fn separated_classes_at_midpoint() {
        let s = set(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(tpr_fpr(&s, 0.5).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn extreme_thresholds() {
        let s = set(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(tpr_fpr(&s, f64::INFINITY).unwrap(), (0.0, 0.0));
        assert_eq!(tpr_fpr(&s, f64::NEG_INFINITY).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn interleaved_counts_by_hand() {
        let s = set(&[0.1, 0.2, 0.3], &[0.25, 0.4, 0.5]);
        let (tpr, fpr) = tpr_fpr(&s, 0.2).unwrap();
        assert_eq!(tpr, 1.0);
        assert!((fpr - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_class_is_an_error() {
        let s = set(&[0.1], &[]);
        assert!(tpr_fpr(&s, 0.0).is_err());
        assert!(roc_auc(&s).is_err());
        assert!(find_threshold(&s, 0.5).is_err());
    }

    #[test]
    fn find_threshold_interleaved_example() {
        let s = set(&[0.1, 0.2, 0.3], &[0.25, 0.4, 0.5]);
        let r = find_threshold(&s, 0.34).unwrap();
        assert!(r.feasible);
        assert_eq!(r.threshold, 0.2);
        assert_eq!(r.tpr, 1.0);
        assert!((r.fpr - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn find_threshold_separated_at_alpha_zero() {
        let s = set(&[0.1, 0.2], &[0.8, 0.9]);
        let r = find_threshold(&s, 0.0).unwrap();
        assert_eq!(r.threshold, 0.2); // max benign uncertainty
        assert_eq!(r.tpr, 1.0);
        assert_eq!(r.fpr, 0.0);
    }

    #[test]
    fn find_threshold_unconstrained_alpha_takes_most_inclusive_candidate() {
        // With alpha = 1 the FPR budget never binds; the smallest observed
        // uncertainty is the unique TPR maximizer here.
        let s = set(&[0.5], &[0.2, 0.3]);
        let r = find_threshold(&s, 1.0).unwrap();
        assert_eq!(r.threshold, 0.2);
        assert_eq!(r.tpr, 0.5);
        assert_eq!(r.fpr, 1.0);
    }

    #[test]
    fn find_threshold_ties_resolve_to_largest_theta() {
        // Thresholds 0.1 and 0.2 both reach TPR 1; the larger one carries
        // the lower FPR and must win.
        let s = set(&[0.1, 0.2], &[0.8, 0.9]);
        let r = find_threshold(&s, 1.0).unwrap();
        assert_eq!(r.threshold, 0.2);
        assert_eq!(r.tpr, 1.0);
        assert_eq!(r.fpr, 0.0);
    }

    #[test]
    fn hopeless_search_returns_initialized_threshold_with_warning() {
        // Benign scores sit above adversarial ones: every candidate under
        // the budget has TPR 0, so the initialization survives.
        let s = set(&[0.8, 0.9], &[0.1, 0.2]);
        let r = find_threshold(&s, 0.4).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.threshold, 0.0);
        assert_eq!(r.tpr, 0.0);
    }

    #[test]
    fn roc_perfect_separation_has_unit_auc() {
        let c = roc_auc(&set(&[0.1, 0.2], &[0.8, 0.9])).unwrap();
        assert!((c.auc - 1.0).abs() < 1e-12);
        assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn roc_identical_distributions_sit_on_the_diagonal() {
        let u = [0.1, 0.4, 0.4, 0.7];
        let c = roc_auc(&set(&u, &u)).unwrap();
        assert!((c.auc - 0.5).abs() < 1e-9);
    }

    #[test]
    fn roc_csv_has_footer() {
        let c = roc_auc(&set(&[0.1], &[0.9])).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("threshold,fpr,tpr\n"));
        assert!(csv.contains("inf,"));
        assert!(csv.trim_end().ends_with(&format!("auc,{},", c.auc)));
    }

    proptest! {
        #[test]
        fn auc_matches_mann_whitney(
            ben in prop::collection::vec(0..40u32, 1..60),
            adv in prop::collection::vec(0..40u32, 1..60),
        ) {
            // Integer grid scores force plenty of ties.
            let ben: Vec<f64> = ben.into_iter().map(|v| v as f64 / 8.0).collect();
            let adv: Vec<f64> = adv.into_iter().map(|v| v as f64 / 8.0).collect();
            let s = set(&ben, &adv);
            let curve = roc_auc(&s).unwrap();
            let mw = mann_whitney_auc(&s);
            prop_assert!((curve.auc - mw).abs() < 1e-9, "trapezoid {} vs mw {}", curve.auc, mw);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&curve.auc));
        }

        #[test]
        fn auc_is_invariant_under_increasing_transforms(
            ben in prop::collection::vec(-4.0f64..4.0, 1..40),
            adv in prop::collection::vec(-4.0f64..4.0, 1..40),
        ) {
            let f = |v: f64| v.powi(3) + v; // strictly increasing
            let a = roc_auc(&set(&ben, &adv)).unwrap().auc;
            let tb: Vec<f64> = ben.iter().map(|&v| f(v)).collect();
            let ta: Vec<f64> = adv.iter().map(|&v| f(v)).collect();
            let b = roc_auc(&set(&tb, &ta)).unwrap().auc;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn rates_are_monotone_in_threshold(
            ben in prop::collection::vec(0.0f64..1.0, 1..30),
            adv in prop::collection::vec(0.0f64..1.0, 1..30),
            t1 in -0.5f64..1.5,
            t2 in -0.5f64..1.5,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let s = set(&ben, &adv);
            let (tpr_lo, fpr_lo) = tpr_fpr(&s, lo).unwrap();
            let (tpr_hi, fpr_hi) = tpr_fpr(&s, hi).unwrap();
            prop_assert!(tpr_lo >= tpr_hi);
            prop_assert!(fpr_lo >= fpr_hi);
        }

        #[test]
        fn threshold_search_matches_exhaustive_oracle(
            ben in prop::collection::vec(0..24u32, 1..50),
            adv in prop::collection::vec(0..24u32, 1..50),
            alpha_pct in 0..=100u32,
        ) {
            let alpha = alpha_pct as f64 / 100.0;
            let ben: Vec<f64> = ben.into_iter().map(|v| v as f64 / 6.0).collect();
            let adv: Vec<f64> = adv.into_iter().map(|v| v as f64 / 6.0).collect();
            let s = set(&ben, &adv);
            let r = find_threshold(&s, alpha).unwrap();

            // Oracle: brute-force best TPR over all candidates under alpha.
            let mut oracle_best = 0.0f64;
            for item in s.items() {
                let (tpr, fpr) = tpr_fpr(&s, item.uncertainty).unwrap();
                if fpr <= alpha && tpr > oracle_best {
                    oracle_best = tpr;
                }
            }
            prop_assert_eq!(r.tpr, oracle_best);
            if oracle_best > 0.0 {
                prop_assert!(r.feasible);
                let (tpr_at, fpr_at) = tpr_fpr(&s, r.threshold).unwrap();
                prop_assert_eq!(tpr_at, r.tpr);
                prop_assert_eq!(fpr_at, r.fpr);
                prop_assert!(r.fpr <= alpha);
            } else {
                prop_assert!(!r.feasible);
                prop_assert_eq!(r.threshold, 0.0);
            }
        }
    }
}
