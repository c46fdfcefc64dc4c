//! Easy-to-hard pseudo-label selection.
//!
//! A target sample earns a pseudo label when its top predicted probability
//! strictly exceeds the round's threshold. Thresholds decrease over the
//! refinement rounds, admitting easy samples first and harder ones later.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// The descending threshold grid the default schedules are drawn from.
const BASE_GRID: [f64; 9] = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];

/// Strictly decreasing confidence thresholds, one per refinement round.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSchedule {
    thresholds: Vec<f64>,
}

impl ThresholdSchedule {
    /// Validates that every threshold lies in (0, 1) and the sequence is
    /// strictly decreasing. An empty schedule is allowed (zero rounds).
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        for &t in &thresholds {
            if !(0.0 < t && t < 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "threshold {t} outside (0, 1)"
                )));
            }
        }
        for pair in thresholds.windows(2) {
            if pair[1] >= pair[0] {
                return Err(Error::InvalidSpec(format!(
                    "thresholds must strictly decrease: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self { thresholds })
    }

    pub fn empty() -> Self {
        Self { thresholds: vec![] }
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn get(&self, round: usize) -> Option<f64> {
        self.thresholds.get(round).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.thresholds
    }
}

/// The length-`t` prefix of the 0.9-down-to-0.1 grid, except `t = 1`,
/// which uses the single low threshold 0.1 so the one available round
/// admits nearly everything.
pub fn default_schedule(t: usize) -> Result<ThresholdSchedule> {
    if !(1..=BASE_GRID.len()).contains(&t) {
        return Err(Error::TOutOfRange(t));
    }
    if t == 1 {
        return ThresholdSchedule::new(vec![0.1]);
    }
    ThresholdSchedule::new(BASE_GRID[..t].to_vec())
}

/// Target samples whose confidence cleared a threshold.
#[derive(Debug, Clone, Default)]
pub struct PseudoLabelSet {
    /// Row indices into the target dataset.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Selects every row whose maximum probability strictly exceeds `threshold`.
///
/// The label is the row argmax with lowest-index tie-breaking; the stored
/// confidence is the row maximum. An empty result is valid.
pub fn select_pseudo_labels(probs: ArrayView2<'_, f64>, threshold: f64) -> PseudoLabelSet {
    let mut set = PseudoLabelSet::default();
    for (i, row) in probs.rows().into_iter().enumerate() {
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for (j, &p) in row.iter().enumerate() {
            if p > best_p {
                best_p = p;
                best = j;
            }
        }
        if best_p > threshold {
            set.indices.push(i);
            set.labels.push(best);
            set.confidences.push(best_p);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_schedule_matches_grid() {
        assert_eq!(
            default_schedule(5).unwrap().values(),
            &[0.9, 0.8, 0.7, 0.6, 0.5]
        );
        assert_eq!(default_schedule(1).unwrap().values(), &[0.1]);
        assert_eq!(
            default_schedule(9).unwrap().values(),
            &[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]
        );
        assert!(matches!(default_schedule(10), Err(Error::TOutOfRange(10))));
        assert!(matches!(default_schedule(0), Err(Error::TOutOfRange(0))));
    }

    #[test]
    fn schedule_must_strictly_decrease() {
        assert!(ThresholdSchedule::new(vec![0.9, 0.9]).is_err());
        assert!(ThresholdSchedule::new(vec![0.5, 0.7]).is_err());
        assert!(ThresholdSchedule::new(vec![0.9, 0.5, 0.1]).is_ok());
        assert!(ThresholdSchedule::new(vec![1.0]).is_err());
        assert!(ThresholdSchedule::new(vec![]).is_ok());
    }

    #[test]
    fn selection_uses_strict_inequality() {
        let probs = arr2(&[[0.95, 0.05], [0.5, 0.5], [0.9, 0.1]]);
        let set = select_pseudo_labels(probs.view(), 0.9);
        assert_eq!(set.indices, vec![0]);
        assert_eq!(set.labels, vec![0]);
        assert_eq!(set.confidences, vec![0.95]);
        // A row maximum exactly at the threshold is excluded.
        let at = select_pseudo_labels(probs.view(), 0.95);
        assert!(at.is_empty());
    }

    #[test]
    fn zero_threshold_admits_everything() {
        let probs = arr2(&[[0.6, 0.4], [0.2, 0.8]]);
        let set = select_pseudo_labels(probs.view(), 0.0);
        assert_eq!(set.len(), 2);
        assert_eq!(set.labels, vec![0, 1]);
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        let probs = arr2(&[[0.5, 0.5]]);
        let set = select_pseudo_labels(probs.view(), 0.1);
        assert_eq!(set.labels, vec![0]);
    }

    #[test]
    fn higher_threshold_selects_a_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mut probs = Array2::from_shape_fn((20, 4), |_| rng.random::<f64>());
            for mut row in probs.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let hi = select_pseudo_labels(probs.view(), 0.7);
            let lo = select_pseudo_labels(probs.view(), 0.3);
            for idx in &hi.indices {
                assert!(lo.indices.contains(idx));
            }
            // Determinism.
            let again = select_pseudo_labels(probs.view(), 0.7);
            assert_eq!(again.indices, hi.indices);
            assert_eq!(again.labels, hi.labels);
        }
    }
}
