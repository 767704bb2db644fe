//! Evaluation metrics for the probe harness.

use crate::rate::Rate;

/// Macro mAP over classes with per-class breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// `None` marks a class skipped for having no positives.
    pub per_class: Vec<Option<f64>>,
    pub skipped_classes: usize,
}

/// Macro-averaged mean average precision.
///
/// Per class, items are ranked by score descending with ties broken by the
/// original (stable) item order; AP averages precision-at-rank over the
/// positive ranks. Classes with no positives are skipped and reported.
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    truths: &[Vec<bool>],
) -> Option<MapResult> {
    if scores.is_empty() || scores.len() != truths.len() {
        return None;
    }
    let classes = scores[0].len();
    if classes == 0 {
        return None;
    }
    let items = scores.len();
    let mut per_class = Vec::with_capacity(classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..classes {
        let positives = truths.iter().filter(|row| row[c]).count();
        if positives == 0 {
            per_class.push(None);
            continue;
        }
        let mut order: Vec<usize> = (0..items).collect();
        // Stable sort keeps original item order among equal scores.
        order.sort_by(|&a, &b| scores[b][c].partial_cmp(&scores[a][c]).unwrap());
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank, &item) in order.iter().enumerate() {
            if truths[item][c] {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        let ap = ap / positives as f64;
        per_class.push(Some(ap));
        sum += ap;
        counted += 1;
    }
    if counted == 0 {
        return None;
    }
    Some(MapResult {
        map: sum / counted as f64,
        skipped_classes: classes - counted,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FMeasure {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Event F-measure with greedy one-to-one matching in time order.
///
/// Both lists must be sorted ascending. A prediction matches the earliest
/// unmatched reference within `tolerance` seconds. Both lists empty gives
/// 1.0; exactly one empty gives 0.0.
pub fn event_f_measure(
    predicted_times: &[f64],
    reference_times: &[f64],
    tolerance: f64,
) -> FMeasure {
    if predicted_times.is_empty() && reference_times.is_empty() {
        return FMeasure { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    if predicted_times.is_empty() || reference_times.is_empty() {
        return FMeasure { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let mut tp = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < predicted_times.len() && j < reference_times.len() {
        let p = predicted_times[i];
        let r = reference_times[j];
        if (p - r).abs() <= tolerance {
            tp += 1;
            i += 1;
            j += 1;
        } else if p < r {
            i += 1;
        } else {
            j += 1;
        }
    }
    let precision = tp as f64 / predicted_times.len() as f64;
    let recall = tp as f64 / reference_times.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    FMeasure { precision, recall, f1 }
}

/// Peak-pick frame probabilities into event times (`frame / frame_rate`).
///
/// A peak is a local maximum above `threshold` (strictly above its left
/// neighbor, at least its right neighbor). Peaks closer than `min_gap`
/// seconds are suppressed, keeping the higher one.
pub fn frame_events_to_times(
    probabilities: &[f64],
    frame_rate: Rate,
    threshold: f64,
    min_gap: f64,
) -> Vec<f64> {
    let n = probabilities.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&t| {
            let p = probabilities[t];
            if p < threshold {
                return false;
            }
            let left_ok = t == 0 || probabilities[t - 1] < p;
            let right_ok = t + 1 == n || probabilities[t + 1] <= p;
            left_ok && right_ok
        })
        .collect();
    // Greedy suppression: strongest peaks claim their neighborhood first.
    candidates.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let rate = frame_rate.to_f64();
    let mut accepted: Vec<usize> = Vec::new();
    for t in candidates {
        let time = t as f64 / rate;
        if accepted.iter().all(|&o| (time - o as f64 / rate).abs() >= min_gap) {
            accepted.push(t);
        }
    }
    accepted.sort_unstable();
    accepted.into_iter().map(|t| t as f64 / rate).collect()
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[u32], reference: &[u32]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(reference).filter(|(a, b)| a == b).count();
    hits as f64 / predicted.len() as f64
}

/// Mean squared error.
pub fn mse(predicted: &[f64], reference: &[f64]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / predicted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_ranking_scores_one() {
        let scores = vec![vec![0.9], vec![0.8], vec![0.2], vec![0.1]];
        let truths = vec![vec![true], vec![true], vec![false], vec![false]];
        let r = mean_average_precision(&scores, &truths).unwrap();
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn hand_computed_ap_case() {
        // scores [0.9, 0.8, 0.7, 0.6], truth [1, 0, 1, 0]:
        // AP = (1/1 + 2/3) / 2 = 0.8333...
        let scores = vec![vec![0.9], vec![0.8], vec![0.7], vec![0.6]];
        let truths = vec![vec![true], vec![false], vec![true], vec![false]];
        let r = mean_average_precision(&scores, &truths).unwrap();
        assert!((r.map - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_positive_at_last_rank_scores_one_over_n() {
        let n = 8;
        let scores: Vec<Vec<f64>> = (0..n).map(|i| vec![(n - i) as f64]).collect();
        let mut truths = vec![vec![false]; n];
        truths[n - 1] = vec![true];
        let r = mean_average_precision(&scores, &truths).unwrap();
        assert!((r.map - 1.0 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn classes_without_positives_are_skipped_and_reported() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let truths = vec![vec![true, false], vec![false, false]];
        let r = mean_average_precision(&scores, &truths).unwrap();
        assert_eq!(r.skipped_classes, 1);
        assert_eq!(r.per_class[1], None);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn identical_event_lists_score_one() {
        let times = vec![0.5, 1.0, 2.0];
        assert_eq!(event_f_measure(&times, &times, 0.07).f1, 1.0);
    }

    #[test]
    fn empty_predictions_score_zero() {
        assert_eq!(event_f_measure(&[], &[1.0], 0.07).f1, 0.0);
        assert_eq!(event_f_measure(&[1.0], &[], 0.07).f1, 0.0);
        assert_eq!(event_f_measure(&[], &[], 0.07).f1, 1.0);
    }

    #[test]
    fn hand_computed_half_case() {
        // refs [1.0, 2.0], preds [1.05, 3.0] at 70 ms: one match.
        let m = event_f_measure(&[1.05, 3.0], &[1.0, 2.0], 0.07);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.f1, 0.5);
    }

    #[test]
    fn zero_probabilities_give_no_events() {
        let times = frame_events_to_times(&[0.0; 50], Rate::from_hz(10), 0.5, 0.3);
        assert!(times.is_empty());
    }

    #[test]
    fn single_spike_maps_to_its_time() {
        let mut probs = vec![0.0; 20];
        probs[10] = 0.9;
        let times = frame_events_to_times(&probs, Rate::from_hz(10), 0.5, 0.3);
        assert_eq!(times, vec![1.0]);
    }

    #[test]
    fn close_peaks_keep_the_higher() {
        let mut probs = vec![0.0; 20];
        probs[10] = 0.7;
        probs[11] = 0.0; // separate the local maxima
        probs[12] = 0.9;
        let times = frame_events_to_times(&probs, Rate::from_hz(10), 0.5, 0.3);
        assert_eq!(times, vec![1.2]);
    }

    proptest! {
        #[test]
        fn map_is_rank_invariant_under_monotone_transforms(
            raw in proptest::collection::vec((0.0f64..1.0, proptest::bool::ANY), 2..40)
        ) {
            let scores: Vec<Vec<f64>> = raw.iter().map(|(s, _)| vec![*s]).collect();
            let truths: Vec<Vec<bool>> = raw.iter().map(|(_, t)| vec![*t]).collect();
            prop_assume!(truths.iter().any(|r| r[0]));
            let transformed: Vec<Vec<f64>> =
                scores.iter().map(|r| vec![(r[0] * 3.0).exp()]).collect();
            let a = mean_average_precision(&scores, &truths).unwrap();
            let b = mean_average_precision(&transformed, &truths).unwrap();
            prop_assert!((a.map - b.map).abs() < 1e-12);
            prop_assert!(a.map >= 0.0 && a.map <= 1.0);
        }

        #[test]
        fn f_measure_is_symmetric_in_its_arguments(
            a in proptest::collection::vec(0.0f64..10.0, 0..20),
            b in proptest::collection::vec(0.0f64..10.0, 0..20),
        ) {
            let mut a = a; a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut b = b; b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let ab = event_f_measure(&a, &b, 0.07);
            let ba = event_f_measure(&b, &a, 0.07);
            // Swapping arguments swaps P and R; F1 is unchanged.
            prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
            prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
            prop_assert!(ab.f1 >= 0.0 && ab.f1 <= 1.0);
        }
    }
}
