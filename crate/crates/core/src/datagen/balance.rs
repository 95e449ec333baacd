use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub label: String,
    pub value: bool,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub entries: Vec<PlanEntry>,
    /// Positive rate of every label after augmentation, assuming synthetic
    /// rows follow the real conditional label rates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected_rates: Vec<f64>,
}

impl BalancePlan {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn count_for(&self, label: &str, value: bool) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == label && e.value == value)
            .map(|e| e.count)
            .sum()
    }
}

/// Greedy allocation of `budget` synthetic rows over `(label, value)`
/// conditions. Each row goes to the condition furthest below half the
/// current total; granting it also moves the expected counts of the other
/// labels by their rates among real rows with that condition.
///
/// `labels` holds one `[bool]` row per real record, columns in `names` order.
pub fn make_balance_plan(labels: &[Vec<bool>], names: &[String], budget: usize) -> BalancePlan {
    let m = names.len();
    let n = labels.len();
    if budget == 0 || m == 0 {
        return BalancePlan::default();
    }
    let marginal = expected_rates(labels, m);
    // rate[j][v][k] = P(label k = 1 | label j = v)
    let rate: Vec<[Vec<f64>; 2]> = (0..m)
        .map(|j| {
            [false, true].map(|v| {
                let rows: Vec<&Vec<bool>> = labels.iter().filter(|r| r[j] == v).collect();
                (0..m)
                    .map(|k| {
                        if k == j {
                            f64::from(u8::from(v))
                        } else if rows.is_empty() {
                            marginal[k]
                        } else {
                            rows.iter().filter(|r| r[k]).count() as f64 / rows.len() as f64
                        }
                    })
                    .collect()
            })
        })
        .collect();

    let mut positives: Vec<f64> = (0..m).map(|k| marginal[k] * n as f64).collect();
    let mut total = n as f64;
    let mut grants = vec![[0usize; 2]; m];
    for _ in 0..budget {
        let half = total / 2.0;
        let mut best: Option<(usize, usize, f64)> = None;
        for j in 0..m {
            for v in [1, 0] {
                let count = if v == 1 { positives[j] } else { total - positives[j] };
                let deficit = half - count;
                let better = match best {
                    None => true,
                    Some((bj, bv, bd)) => {
                        deficit > bd + 1e-9 || ((deficit - bd).abs() <= 1e-9 && grants[j][v] < grants[bj][bv])
                    }
                };
                if better {
                    best = Some((j, v, deficit));
                }
            }
        }
        let (j, v, _) = best.expect("at least one option");
        grants[j][v] += 1;
        for (k, p) in positives.iter_mut().enumerate() {
            *p += rate[j][v][k];
        }
        total += 1.0;
    }

    let mut entries = Vec::new();
    for (j, name) in names.iter().enumerate() {
        for v in [1, 0] {
            if grants[j][v] > 0 {
                entries.push(PlanEntry {
                    label: name.clone(),
                    value: v == 1,
                    count: grants[j][v],
                });
            }
        }
    }
    BalancePlan {
        entries,
        expected_rates: positives.iter().map(|p| p / total).collect(),
    }
}

/// Smallest budget, in steps of `step`, whose plan brings every expected
/// positive rate within `tolerance` of one half. `None` when `max_budget`
/// does not suffice.
pub fn equalizing_budget(
    labels: &[Vec<bool>],
    names: &[String],
    tolerance: f64,
    step: usize,
    max_budget: usize,
) -> Option<usize> {
    let step = step.max(1);
    (0..=max_budget).step_by(step).find(|&b| {
        let plan = make_balance_plan(labels, names, b);
        let rates = if b == 0 { expected_rates(labels, names.len()) } else { plan.expected_rates };
        rates.iter().all(|r| (r - 0.5).abs() <= tolerance)
    })
}

fn expected_rates(labels: &[Vec<bool>], m: usize) -> Vec<f64> {
    (0..m)
        .map(|k| labels.iter().filter(|r| r[k]).count() as f64 / labels.len().max(1) as f64)
        .collect()
}
