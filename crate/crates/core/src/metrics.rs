//! ROC AUC with average ranks for ties.

use std::collections::BTreeMap;

use crate::error::{AheadError, Result};
use crate::hetgraph::{AnomalyKind, NodeLabel};

/// Probability that a random (anomaly, normal) pair is ordered correctly by
/// score, ties counting one half. Computed from the Mann–Whitney statistic.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(AheadError::Config(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(AheadError::Numerical(format!("score {i} is NaN")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(AheadError::Config(format!(
            "AUC needs both classes, got {n_pos} anomalies and {n_neg} normal nodes"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC of each anomaly kind against all normal nodes. Kinds with no
/// anomalies are omitted.
pub fn auc_by_kind(scores: &[f64], labels: &[NodeLabel]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for kind in [AnomalyKind::Attribute, AnomalyKind::Structural] {
        let (s, l): (Vec<f64>, Vec<bool>) = scores
            .iter()
            .zip(labels)
            .filter(|(_, lab)| !lab.is_anomaly || lab.kind == kind)
            .map(|(&s, lab)| (s, lab.is_anomaly))
            .unzip();
        if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
            out.insert(kind.as_str().to_string(), auc(&s, &l)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn reference_cases() {
        assert_eq!(auc(&[3.0, 1.0, 2.0], &[true, false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert!(auc(&[1.0, 2.0], &[false, false]).is_err());
        assert!(auc(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn by_kind_splits_positives() {
        let n = NodeLabel::NORMAL;
        let a = NodeLabel::anomaly(AnomalyKind::Attribute);
        let s = NodeLabel::anomaly(AnomalyKind::Structural);
        let scores = [5.0, 1.0, 0.5, 2.0, 0.1];
        let labels = [a, s, n, n, n];
        let m = auc_by_kind(&scores, &labels).unwrap();
        assert_eq!(m["attr"], 1.0);
        assert!((m["struct"] - 2.0 / 3.0).abs() < 1e-15);
        let m = auc_by_kind(&scores, &[a, n, n, n, n]).unwrap();
        assert!(!m.contains_key("struct"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
            (2usize..40).prop_flat_map(|n| {
                (
                    proptest::collection::vec((0i32..12).prop_map(|x| x as f64 / 4.0), n),
                    proptest::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
        }

        proptest! {
            #[test]
            fn matches_pair_enumeration((s, l) in case()) {
                prop_assert!((auc(&s, &l).unwrap() - brute(&s, &l)).abs() < 1e-12);
            }

            #[test]
            fn invariant_under_increasing_transform((s, l) in case()) {
                let t: Vec<f64> = s.iter().map(|x| (x * 3.0).exp() + 7.0).collect();
                prop_assert!((auc(&s, &l).unwrap() - auc(&t, &l).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn negation_complements_without_ties(
                n in 2usize..40,
                seed in any::<u64>(),
            ) {
                use rand::Rng;
                let mut rng = crate::rng::seeded(seed, 0);
                let s: Vec<f64> = (0..n).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
                let mut l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
                l[0] = true;
                l[1] = false;
                let neg: Vec<f64> = s.iter().map(|x| -x).collect();
                prop_assert!((auc(&s, &l).unwrap() + auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
