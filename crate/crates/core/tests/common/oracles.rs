//! Metric references computed straight from their definitions.

/// Kappa straight from the record pairs: `Σ w·O` is the mean disagreement
/// weight of matched pairs, `Σ w·E` the mean over all cross pairs.
pub fn kappa_pairs(truth: &[u8], pred: &[u8]) -> f64 {
    let w = |a: u8, b: u8| ((a as f64 - b as f64) / 3.0).powi(2);
    let n = truth.len() as f64;
    let matched: f64 = truth.iter().zip(pred).map(|(&a, &b)| w(a, b)).sum();
    let mut cross = 0.0;
    for &a in truth {
        for &b in pred {
            cross += w(a, b);
        }
    }
    1.0 - n * matched / cross
}

/// Kappa is undefined only when every rating, on both sides, is one class.
pub fn non_degenerate(truth: &[u8], pred: &[u8]) -> bool {
    truth.iter().chain(pred).any(|&c| c != truth[0])
}

/// Per-class counts of the label-mix fixture: 882 fluent, 85 slow, 28
/// congested and 5 extreme out of 1000 released labels, plus 40 unreleased.
pub fn label_mix() -> Vec<u8> {
    let mut labels = vec![1u8; 882];
    labels.extend([2u8; 85]);
    labels.extend([3u8; 28]);
    labels.extend([4u8; 5]);
    labels.extend([0u8; 40]);
    labels
}
