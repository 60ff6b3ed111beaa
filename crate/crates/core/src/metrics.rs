//! Ranking metrics for anomaly scores (higher score = more anomalous,
//! `true` label = anomaly).
//!
//! Thresholds sit at distinct score values only, so tied scores always enter
//! the flagged set together.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::numerics::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn check<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

fn desc<T: Scalar>(a: &T, b: &T) -> Ordering {
    b.partial_cmp(a).expect("NaN scores rejected")
}

/// Groups of equal scores in descending order, each as `(score, positives, negatives)`.
fn tie_groups<T: Scalar>(scores: &[T], labels: &[bool]) -> Vec<(T, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| desc(&scores[a], &scores[b]));
    let mut groups: Vec<(T, usize, usize)> = Vec::new();
    for i in order {
        let s = scores[i];
        match groups.last_mut() {
            Some(g) if g.0 == s => {}
            _ => groups.push((s, 0, 0)),
        }
        let g = groups.last_mut().unwrap();
        if labels[i] {
            g.1 += 1;
        } else {
            g.2 += 1;
        }
    }
    groups
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(s+ > s-) + P(s+ = s-) / 2`, computed exactly from tie groups.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC-AUC needs both classes".into()));
    }
    // twice the count of correctly ordered pairs plus ties, in integers
    let mut twice: u128 = 0;
    let mut neg_below = neg as u128;
    for (_, p, q) in tie_groups(scores, labels) {
        neg_below -= q as u128;
        twice += 2 * p as u128 * neg_below + p as u128 * q as u128;
    }
    Ok(twice as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// One point per distinct score, thresholds descending; a point counts the
/// rows scoring at or above its threshold as flagged.
pub fn pr_curve<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Vec<CurvePoint>> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::Data(
            "precision-recall needs at least one positive".into(),
        ));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    Ok(tie_groups(scores, labels)
        .into_iter()
        .map(|(s, p, q)| {
            tp += p;
            fp += q;
            let recall = tp as f64 / pos as f64;
            CurvePoint {
                threshold: s.as_f64(),
                precision: tp as f64 / (tp + fp) as f64,
                recall,
                fpr: if neg == 0 {
                    0.0
                } else {
                    fp as f64 / neg as f64
                },
                tpr: recall,
            }
        })
        .collect())
}

/// Step-rule area `Σ (R_n - R_{n-1}) P_n` over a curve from [`pr_curve`].
pub fn prc_auc(curve: &[CurvePoint]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in curve {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

/// Average precision `Σ (R_n - R_{n-1}) P_n` over descending thresholds,
/// `R_0 = 0`.
pub fn average_precision<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    Ok(prc_auc(&pr_curve(scores, labels)?))
}

/// Fraction of anomalies among the `k` highest scores; ties at the cut are
/// resolved by ascending row index.
pub fn top_k_precision<T: Scalar>(scores: &[T], labels: &[bool], k: usize) -> Result<f64> {
    check(scores, labels)?;
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidConfig(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| desc(&scores[a], &scores[b]));
    let hits = order[..k].iter().filter(|&&i| labels[i]).count();
    Ok(hits as f64 / k as f64)
}

/// The four reported metrics for one score vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub prc_auc: f64,
    pub aps: f64,
    pub roc_auc: f64,
    /// Precision among the top `min(100, N)` scores.
    pub top100_precision: f64,
}

impl MetricSummary {
    pub fn evaluate<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Self> {
        let curve = pr_curve(scores, labels)?;
        Ok(Self {
            prc_auc: prc_auc(&curve),
            aps: average_precision(scores, labels)?,
            roc_auc: roc_auc(scores, labels)?,
            top100_precision: top_k_precision(scores, labels, 100.min(scores.len()))?,
        })
    }

    /// Column-wise arithmetic mean.
    pub fn mean(rows: &[Self]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&Self) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(Self {
            prc_auc: avg(|r| r.prc_auc),
            aps: avg(|r| r.aps),
            roc_auc: avg(|r| r.roc_auc),
            top100_precision: avg(|r| r.top100_precision),
        })
    }
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("threshold,precision,recall,fpr,tpr\n");
    for p in curve {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.threshold, p.precision, p.recall, p.fpr, p.tpr
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        assert_eq!(
            roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert_eq!(roc_auc(&[0.0, 1.0], &[false, true]).unwrap(), 1.0);
        assert_eq!(
            roc_auc(&[2.0; 6], &[true, false, true, false, false, false]).unwrap(),
            0.5
        );

        let s = [0.9, 0.8, 0.7, 0.6];
        let l = [true, false, true, false];
        let pts: Vec<(f64, f64)> = pr_curve(&s, &l)
            .unwrap()
            .iter()
            .map(|p| (p.recall, p.precision))
            .collect();
        assert_eq!(
            pts,
            vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0), (1.0, 0.5)]
        );
        assert_eq!(average_precision(&s, &l).unwrap(), 0.5 + 0.5 * (2.0 / 3.0));
        assert_eq!(
            average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision(&[3.0, 1.0, 2.0], &[true; 3]).unwrap(),
            1.0
        );

        let t = [5.0, 4.0, 3.0, 2.0];
        assert_eq!(
            top_k_precision(&t, &[true, false, true, true], 2).unwrap(),
            0.5
        );
        assert_eq!(
            top_k_precision(&t, &[true, true, false, false], 2).unwrap(),
            1.0
        );
        assert!(top_k_precision(&t, &[true; 4], 5).is_err());
    }

    #[test]
    fn tie_at_cut_uses_index_order() {
        let s = [1.0, 1.0, 1.0];
        assert_eq!(top_k_precision(&s, &[false, true, true], 1).unwrap(), 0.0);
        assert_eq!(top_k_precision(&s, &[true, false, false], 1).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(pr_curve(&[1.0, 2.0], &[false, false]).is_err());
        assert!(roc_auc(&[f64::NAN, 2.0], &[true, false]).is_err());
        assert!(roc_auc(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn random_scores_give_prevalence_area() {
        use crate::rng::Rng;
        let mut rng = Rng::new(8);
        let n = 20_000;
        let labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.1).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let rho = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
        let area = average_precision(&scores, &labels).unwrap();
        // AP of a random ranking has spread well under 0.01 at this size
        assert!((area - rho).abs() < 0.015, "{area} vs {rho}");
    }

    #[test]
    fn summary_and_mean() {
        let s = [0.9, 0.8, 0.7, 0.6];
        let l = [true, false, true, false];
        let m = MetricSummary::evaluate(&s, &l).unwrap();
        assert_eq!(m.prc_auc, m.aps);
        assert_eq!(m.top100_precision, 0.5);
        let mean = MetricSummary::mean(&[m, m]).unwrap();
        assert_eq!(mean, m);
        assert_eq!(curve_to_csv(&pr_curve(&s, &l).unwrap()).lines().count(), 5);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..64).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..8).prop_map(f64::from), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn invariant_under_increasing_transform((s, l) in instance()) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let t: Vec<f64> = s.iter().map(|v| (v * 0.5).exp() + 3.0).collect();
            prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&t, &l).unwrap());
            prop_assert_eq!(average_precision(&s, &l).unwrap(), average_precision(&t, &l).unwrap());
            let k = 1 + s.len() / 3;
            prop_assert_eq!(top_k_precision(&s, &l, k).unwrap(), top_k_precision(&t, &l, k).unwrap());
        }

        #[test]
        fn roc_of_negated_scores_is_complement(n in 2usize..64, seed in 0u64..10_000) {
            let mut rng = crate::rng::Rng::new(seed);
            let s: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
            l[0] = true;
            l[1] = false;
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let sum = roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn curve_points_lie_in_unit_box((s, l) in instance()) {
            prop_assume!(l.iter().any(|&x| x));
            for p in pr_curve(&s, &l).unwrap() {
                for v in [p.precision, p.recall, p.fpr, p.tpr] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
