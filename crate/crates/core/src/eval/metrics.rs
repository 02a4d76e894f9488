use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<usize, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Metric("NaN score".into()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    Ok(positives)
}

/// Indices sorted by descending score, ties kept in input order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    order
}

/// One point per distinct score, sweeping from the highest threshold down.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>, EvalError> {
    let positives = check(scores, labels)? as f64;
    let order = ranking(scores);
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            tp += labels[order[k]] as usize;
            seen += 1;
            k += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / positives,
        });
    }
    Ok(points)
}

/// Step-wise area `Σ (R_i − R_{i−1}) · P_i` under the PR curve.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for p in pr_curve(scores, labels)? {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(area)
}

/// Area under the ROC curve with ties counted as half. Debug output only.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let positives = check(scores, labels)?;
    let negatives = labels.len() - positives;
    if negatives == 0 {
        return Err(EvalError::Metric("ROC needs at least one negative".into()));
    }
    let mut wins = 0.0;
    for (i, li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if *lj {
                continue;
            }
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (positives * negatives) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_inverted() {
        assert_eq!(pr_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(pr_auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn constant_scores_give_base_rate() {
        let n = 1000;
        let labels: Vec<bool> = (0..n).map(|i| i < 248).collect();
        let scores = vec![0.3; n];
        assert!((pr_auc(&scores, &labels).unwrap() - 0.248).abs() < 1e-12);
        assert_eq!(pr_curve(&scores, &labels).unwrap().len(), 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            pr_auc(&[0.2], &[false]),
            Err(EvalError::NoPositives)
        ));
        assert!(pr_auc(&[0.2, 0.1], &[true]).is_err());
    }

    /// Step-wise AUC of one strict ordering, labels listed best-first.
    fn auc_of_order(labels: &[bool]) -> f64 {
        let pos = labels.iter().filter(|l| **l).count() as f64;
        let mut tp = 0.0;
        let mut area = 0.0;
        for (k, l) in labels.iter().enumerate() {
            if *l {
                tp += 1.0;
                area += (1.0 / pos) * (tp / (k + 1) as f64);
            }
        }
        area
    }

    fn permutations(items: &[bool]) -> Vec<Vec<bool>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let first = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, first);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn reversed_ranking_is_the_minimum() {
        for n in 1..=7usize {
            for mask in 1..(1u32 << n) {
                let labels: Vec<bool> = (0..n).map(|i| (mask >> i) & 1 == 1).collect();
                let min = permutations(&labels)
                    .iter()
                    .map(|p| auc_of_order(p))
                    .fold(f64::INFINITY, f64::min);
                // negatives score highest
                let scores: Vec<f64> = labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| if *l { i as f64 } else { 100.0 + i as f64 })
                    .collect();
                let auc = pr_auc(&scores, &labels).unwrap();
                assert!(
                    (auc - min).abs() < 1e-12,
                    "labels {labels:?}: {auc} vs {min}"
                );
            }
        }
    }

    #[test]
    fn roc_basics() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(
            data in prop::collection::vec((0.0..1.0f64, prop::bool::ANY), 1..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let mut labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            labels[0] = true;
            let a = pr_auc(&scores, &labels).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let b = pr_auc(&t, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
