use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastMetrics {
    pub mse: f64,
    pub mae: f64,
    pub count: usize,
}

pub fn forecast_metrics(pred: &[f64], truth: &[f64]) -> Result<ForecastMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("forecast_metrics", "prediction and target lengths differ"));
    }
    if pred.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let n = pred.len() as f64;
    let mse = pred.iter().zip(truth).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n;
    let mae = pred.iter().zip(truth).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    Ok(ForecastMetrics {
        mse,
        mae,
        count: pred.len(),
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    // average ranks handle ties
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let p = pos as f64;
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision: precision at each distinct threshold weighted by the
/// recall gained there.
pub fn auprc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut new_tp = 0;
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                new_tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += new_tp;
        ap += (new_tp as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        i = j;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `probs` is `[samples × classes]`, row-major. Binary tasks score class 1;
/// with more classes AUROC/AUPRC are one-vs-rest macro averages.
/// Precision, recall and F1 are macro averages at the argmax.
pub fn classification_metrics(labels: &[usize], probs: &[f64], classes: usize) -> Result<ClassMetrics> {
    if classes < 2 || probs.len() != labels.len() * classes {
        return Err(Error::invalid(
            "classification_metrics",
            "probability matrix does not match labels",
        ));
    }
    if labels.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let column = |c: usize| -> Vec<f64> { probs.chunks(classes).map(|r| r[c]).collect() };
    let one_vs_rest = |c: usize| -> Vec<bool> { labels.iter().map(|&y| y == c).collect() };
    let (auroc_v, auprc_v) = if classes == 2 {
        (auroc(&one_vs_rest(1), &column(1))?, auprc(&one_vs_rest(1), &column(1))?)
    } else {
        let mut a = 0.0;
        let mut p = 0.0;
        for c in 0..classes {
            a += auroc(&one_vs_rest(c), &column(c))?;
            p += auprc(&one_vs_rest(c), &column(c))?;
        }
        (a / classes as f64, p / classes as f64)
    };
    let predicted: Vec<usize> = probs
        .chunks(classes)
        .map(|r| (0..classes).fold(0, |best, c| if r[c] > r[best] { c } else { best }))
        .collect();
    let correct = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let tp = predicted.iter().zip(labels).filter(|(&p, &y)| p == c && y == c).count() as f64;
        let pp = predicted.iter().filter(|&&p| p == c).count() as f64;
        let ap = labels.iter().filter(|&&y| y == c).count() as f64;
        let pr = if pp > 0.0 { tp / pp } else { 0.0 };
        let rc = if ap > 0.0 { tp / ap } else { 0.0 };
        precision += pr;
        recall += rc;
        f1 += if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 };
    }
    let k = classes as f64;
    Ok(ClassMetrics {
        auroc: auroc_v,
        auprc: auprc_v,
        accuracy: correct as f64 / labels.len() as f64,
        precision: precision / k,
        recall: recall / k,
        f1: f1 / k,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Median (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Exhaustive pairwise AUROC, for checking the rank formula.
pub fn auroc_brute_force(labels: &[bool], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += match scores[i].total_cmp(&scores[j]) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

/// Average precision from the full precision-recall curve, one threshold at
/// every distinct score.
pub fn auprc_brute_force(labels: &[bool], scores: &[f64]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for th in thresholds {
        let selected: Vec<bool> = scores.iter().map(|&s| s >= th).collect();
        let tp = selected.iter().zip(labels).filter(|(&s, &l)| s && l).count() as f64;
        let k = selected.iter().filter(|&&s| s).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / k);
        prev_recall = recall;
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forecast_examples() {
        let m = forecast_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mse, m.mae), (0.0, 0.0));
        let m = forecast_metrics(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mse, m.mae), (1.0, 1.0));
        let m = forecast_metrics(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_eq!((m.mse, m.mae), (5.0, 2.0));
        assert!(matches!(forecast_metrics(&[], &[]), Err(Error::EmptyTargets)));
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(auroc(&[true, false], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(auprc(&[true, false], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(auroc(&[true, false], &[0.1, 0.9]).unwrap(), 0.0);
        let labels = [true, false, true];
        let scores = [0.8, 0.6, 0.4];
        assert_eq!(auroc(&labels, &scores).unwrap(), 0.5);
        assert!((auprc(&labels, &scores).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((auprc_brute_force(&labels, &scores) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(auroc(&[true, true], &[0.1, 0.2]), Err(Error::SingleClass)));
        assert!(matches!(auprc(&[false, false], &[0.1, 0.2]), Err(Error::SingleClass)));
    }

    #[test]
    fn confusion_metrics_are_macro_averaged() {
        // predictions: 0, 1, 1, 0; labels: 0, 1, 0, 0
        let probs = [0.9, 0.1, 0.2, 0.8, 0.4, 0.6, 0.7, 0.3];
        let m = classification_metrics(&[0, 1, 0, 0], &probs, 2).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.precision - (1.0 + 0.5) / 2.0).abs() < 1e-15);
        assert!((m.recall - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        let f0 = 2.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0);
        let f1 = 2.0 * 0.5 / 1.5;
        assert!((m.f1 - (f0 + f1) / 2.0).abs() < 1e-15);
        assert_eq!(m.auroc, 1.0);
    }

    #[test]
    fn population_std_and_median() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn rank_formulas_match_brute_force(
            cases in prop::collection::vec((any::<bool>(), 0u8..6), 2..=12)
        ) {
            let labels: Vec<bool> = cases.iter().map(|c| c.0).collect();
            let scores: Vec<f64> = cases.iter().map(|c| c.1 as f64 / 5.0).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert!((auroc(&labels, &scores).unwrap() - auroc_brute_force(&labels, &scores)).abs() <= 1e-12);
            prop_assert!((auprc(&labels, &scores).unwrap() - auprc_brute_force(&labels, &scores)).abs() <= 1e-12);
        }
    }
}
