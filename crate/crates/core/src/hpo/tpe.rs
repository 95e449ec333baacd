use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::space::{ChoiceIndices, Param, SearchSpace};
use super::{Trial, TrialStatus};

/// Univariate TPE over categorical choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeSampler {
    /// Finished trials sampled uniformly before the density model kicks in.
    pub n_startup: usize,
    /// Fraction of completed trials forming the good set.
    pub gamma: f64,
    /// Candidates drawn from the good density per parameter.
    pub n_candidates: usize,
}

impl Default for TpeSampler {
    fn default() -> Self {
        Self {
            n_startup: 10,
            gamma: 0.25,
            n_candidates: 24,
        }
    }
}

impl TpeSampler {
    pub fn suggest<R: Rng>(&self, space: &SearchSpace, history: &[Trial], rng: &mut R) -> ChoiceIndices {
        let finished = history
            .iter()
            .filter(|t| matches!(t.status, TrialStatus::Complete | TrialStatus::Pruned))
            .count();
        if finished < self.n_startup {
            return uniform(space, rng);
        }

        let mut complete: Vec<&Trial> = history
            .iter()
            .filter(|t| t.status == TrialStatus::Complete && t.value.is_some())
            .collect();
        complete.sort_by(|a, b| a.value.unwrap().total_cmp(&b.value.unwrap()).then(a.id.cmp(&b.id)));
        let n_good = ((self.gamma * complete.len() as f64).ceil() as usize).min(complete.len());
        let good: Vec<&ChoiceIndices> = complete[..n_good].iter().map(|t| &t.choices).collect();
        // pruned trials never finished, so they count against their choices
        let bad: Vec<&ChoiceIndices> = complete[n_good..]
            .iter()
            .copied()
            .chain(history.iter().filter(|t| t.status == TrialStatus::Pruned))
            .map(|t| &t.choices)
            .collect();

        let pick = |p: Param, rng: &mut R| self.sample_param(space, p, &good, &bad, rng);
        let n_layers = pick(Param::NLayers, rng);
        let layers = space.n_layers[n_layers];
        let layer_sizes = (0..layers).map(|i| pick(Param::LayerSize(i), rng)).collect();
        let learning_rate = pick(Param::LearningRate, rng);
        let batch_size = pick(Param::BatchSize, rng);
        ChoiceIndices {
            n_layers,
            layer_sizes,
            learning_rate,
            batch_size,
        }
    }

    fn sample_param<R: Rng>(
        &self,
        space: &SearchSpace,
        p: Param,
        good: &[&ChoiceIndices],
        bad: &[&ChoiceIndices],
        rng: &mut R,
    ) -> usize {
        let k = space.cardinality(p);
        let l = density(p, k, good);
        let g = density(p, k, bad);
        let dist = WeightedIndex::new(&l).expect("smoothed weights are positive");
        let mut best = None;
        let mut best_ratio = f64::NEG_INFINITY;
        for _ in 0..self.n_candidates.max(1) {
            let c = dist.sample(rng);
            let ratio = l[c].ln() - g[c].ln();
            if ratio > best_ratio {
                best_ratio = ratio;
                best = Some(c);
            }
        }
        best.expect("at least one candidate")
    }
}

/// Add-one smoothed categorical density of `p` over the observations that
/// define it.
fn density(p: Param, k: usize, obs: &[&ChoiceIndices]) -> Vec<f64> {
    let mut counts = vec![1.0; k];
    let mut n = k as f64;
    for c in obs.iter().filter_map(|o| o.get(p)) {
        counts[c] += 1.0;
        n += 1.0;
    }
    counts.iter().map(|c| c / n).collect()
}

pub(crate) fn uniform<R: Rng>(space: &SearchSpace, rng: &mut R) -> ChoiceIndices {
    let n_layers = rng.random_range(0..space.n_layers.len());
    let layer_sizes = (0..space.n_layers[n_layers])
        .map(|_| rng.random_range(0..space.layer_sizes.len()))
        .collect();
    ChoiceIndices {
        n_layers,
        layer_sizes,
        learning_rate: rng.random_range(0..space.learning_rates.len()),
        batch_size: rng.random_range(0..space.batch_sizes.len()),
    }
}
