use serde::{Deserialize, Serialize};

use super::{Trial, TrialStatus};

/// Stops a trial whose validation loss is strictly worse than the median of
/// completed trials at the same epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedianPruner {
    /// Completed trials with a value at the step needed before pruning.
    pub min_trials: usize,
}

impl Default for MedianPruner {
    fn default() -> Self {
        Self { min_trials: 5 }
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

impl MedianPruner {
    pub fn should_prune(&self, step: usize, value: f64, history: &[Trial]) -> bool {
        if step == 0 {
            return false;
        }
        let mut at_step: Vec<f64> = history
            .iter()
            .filter(|t| t.status == TrialStatus::Complete)
            .filter_map(|t| t.value_at(step))
            .collect();
        if at_step.len() < self.min_trials.max(1) {
            return false;
        }
        let m = median(&mut at_step).expect("non-empty");
        value > m
    }
}
