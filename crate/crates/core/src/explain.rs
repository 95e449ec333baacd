//! Shapley attributions with an interventional value function.
//!
//! `f_S(x)` is the mean model output over a background set after every
//! feature outside `S` is replaced by the background row's value. Exact mode
//! enumerates all `2^|F|` subsets; sampled mode averages marginal
//! contributions over random feature orderings.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::MlpModel;

/// Largest feature count handled by subset enumeration.
pub const MAX_EXACT_FEATURES: usize = 16;
pub const MIN_PERMUTATIONS: usize = 50;
pub const DEFAULT_BACKGROUND: usize = 100;

// composed rows evaluated per forward pass
const ROWS_PER_BATCH: usize = 16_384;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("background set is empty")]
    EmptyBackground,
    #[error("{n} features exceed the exact limit of {MAX_EXACT_FEATURES}; use sampled mode")]
    TooManyFeatures { n: usize },
    #[error("{0} permutations requested; at least {MIN_PERMUTATIONS} needed")]
    TooFewPermutations(usize),
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("label {label} out of range for {outputs} outputs")]
    Label { label: usize, outputs: usize },
    #[error("attributions disagree on {0}")]
    Inconsistent(String),
    #[error("no attributions to summarize")]
    Empty,
}

/// Anything mapping a batch of input rows to a batch of outputs.
pub trait Predictor {
    fn n_features(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn predict(&self, x: ArrayView2<f64>) -> Array2<f64>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    #[default]
    Probability,
    /// Pre-sigmoid scores.
    Logit,
}

/// An MLP read on the chosen output scale.
#[derive(Debug, Clone, Copy)]
pub struct ScaledModel<'a> {
    pub model: &'a MlpModel,
    pub scale: OutputScale,
}

impl<'a> ScaledModel<'a> {
    pub fn new(model: &'a MlpModel, scale: OutputScale) -> Self {
        Self { model, scale }
    }
}

impl Predictor for ScaledModel<'_> {
    fn n_features(&self) -> usize {
        self.model.input_dim()
    }

    fn n_outputs(&self) -> usize {
        self.model.output_dim()
    }

    fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self.scale {
            OutputScale::Probability => self.model.forward_batch(x),
            OutputScale::Logit => self.model.logits_batch(x),
        }
    }
}

impl Predictor for MlpModel {
    fn n_features(&self) -> usize {
        self.input_dim()
    }

    fn n_outputs(&self) -> usize {
        self.output_dim()
    }

    fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_batch(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub label: usize,
    pub method: Method,
    pub scale: OutputScale,
    pub base_value: f64,
    pub fx: f64,
    pub phi: Vec<f64>,
    /// Per-feature standard errors (sampled mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    pub feature_names: Vec<String>,
    /// Model-input values of the explained sample.
    pub feature_values: Vec<f64>,
}

impl Attribution {
    /// `fx − (base + Σφ)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.fx - (self.base_value + self.phi.iter().sum::<f64>())
    }
}

/// Sample description shared by the exact and sampled engines.
#[derive(Debug, Clone, Copy)]
pub struct ExplainInput<'a> {
    pub x: &'a [f64],
    pub background: ArrayView2<'a, f64>,
    pub feature_names: &'a [String],
    pub scale: OutputScale,
}

fn check<P: Predictor + ?Sized>(model: &P, input: &ExplainInput<'_>) -> Result<(), ExplainError> {
    let d = model.n_features();
    if input.background.nrows() == 0 {
        return Err(ExplainError::EmptyBackground);
    }
    for got in [input.x.len(), input.background.ncols(), input.feature_names.len()] {
        if got != d {
            return Err(ExplainError::Dimension { expected: d, got });
        }
    }
    Ok(())
}

fn compose(x: &[f64], background: ArrayView2<f64>, in_s: impl Fn(usize) -> bool, out: &mut [f64]) {
    let d = x.len();
    for (r, b) in background.rows().into_iter().enumerate() {
        let row = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            row[j] = if in_s(j) { x[j] } else { b[j] };
        }
    }
}

/// Means over the background of each subset's composed predictions, one
/// output vector per subset.
fn subset_values<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    background: ArrayView2<f64>,
    subsets: &[Vec<bool>],
) -> Vec<Vec<f64>> {
    let d = x.len();
    let nb = background.nrows();
    let per_batch = (ROWS_PER_BATCH / nb).max(1);
    let mut out = Vec::with_capacity(subsets.len());
    let mut buf = Vec::new();
    for chunk in subsets.chunks(per_batch) {
        buf.resize(chunk.len() * nb * d, 0.0);
        for (k, s) in chunk.iter().enumerate() {
            compose(x, background, |j| s[j], &mut buf[k * nb * d..(k + 1) * nb * d]);
        }
        let m = ArrayView2::from_shape((chunk.len() * nb, d), &buf[..]).expect("composed batch");
        let p = model.predict(m);
        for k in 0..chunk.len() {
            let block = p.slice(ndarray::s![k * nb..(k + 1) * nb, ..]);
            out.push(block.mean_axis(Axis(0)).expect("non-empty background").to_vec());
        }
    }
    out
}

/// `f_S(x)` for all outputs, `S` given as a membership mask.
pub fn value_function<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    subset: &[bool],
    background: ArrayView2<f64>,
) -> Result<Vec<f64>, ExplainError> {
    if background.nrows() == 0 {
        return Err(ExplainError::EmptyBackground);
    }
    let d = model.n_features();
    for got in [x.len(), subset.len(), background.ncols()] {
        if got != d {
            return Err(ExplainError::Dimension { expected: d, got });
        }
    }
    Ok(subset_values(model, x, background, &[subset.to_vec()]).remove(0))
}

/// `|S|! (n − |S| − 1)! / n!` for every `|S|` in `0..n`.
pub fn shapley_weights(n: usize) -> Vec<f64> {
    let ln_fact: Vec<f64> = (0..=n)
        .scan(0.0, |acc, k| {
            if k > 0 {
                *acc += (k as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    (0..n)
        .map(|s| (ln_fact[s] + ln_fact[n - s - 1] - ln_fact[n]).exp())
        .collect()
}

/// Exact attributions for every output label.
pub fn shapley_exact_all<P: Predictor + ?Sized>(
    model: &P,
    input: &ExplainInput<'_>,
) -> Result<Vec<Attribution>, ExplainError> {
    check(model, input)?;
    let n = model.n_features();
    if n > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures { n });
    }
    let k = model.n_outputs();
    let masks: Vec<Vec<bool>> = (0..1usize << n)
        .map(|m| (0..n).map(|j| m >> j & 1 == 1).collect())
        .collect();
    let v = subset_values(model, input.x, input.background, &masks);
    let w = shapley_weights(n);

    let mut phi = vec![vec![0.0; n]; k];
    for m in 0..1usize << n {
        let size = m.count_ones() as usize;
        for i in 0..n {
            if m >> i & 1 == 1 {
                continue;
            }
            let with = m | 1 << i;
            for l in 0..k {
                phi[l][i] += w[size] * (v[with][l] - v[m][l]);
            }
        }
    }
    let full = (1usize << n) - 1;
    Ok((0..k)
        .map(|l| Attribution {
            label: l,
            method: Method::Exact,
            scale: input.scale,
            base_value: v[0][l],
            fx: v[full][l],
            phi: std::mem::take(&mut phi[l]),
            std_errors: None,
            feature_names: input.feature_names.to_vec(),
            feature_values: input.x.to_vec(),
        })
        .collect())
}

pub fn shapley_exact<P: Predictor + ?Sized>(
    model: &P,
    input: &ExplainInput<'_>,
    label: usize,
) -> Result<Attribution, ExplainError> {
    check_label(model, label)?;
    Ok(shapley_exact_all(model, input)?.swap_remove(label))
}

fn check_label<P: Predictor + ?Sized>(model: &P, label: usize) -> Result<(), ExplainError> {
    if label >= model.n_outputs() {
        return Err(ExplainError::Label {
            label,
            outputs: model.n_outputs(),
        });
    }
    Ok(())
}

/// Permutation-sampled attributions for every output label. Any residual
/// left by floating-point error is spread over the features in proportion to
/// `|φ_i|` so that `base + Σφ = f(x)`.
pub fn shapley_sampled_all<P: Predictor + ?Sized>(
    model: &P,
    input: &ExplainInput<'_>,
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<Attribution>, ExplainError> {
    check(model, input)?;
    if n_permutations < MIN_PERMUTATIONS {
        return Err(ExplainError::TooFewPermutations(n_permutations));
    }
    let n = model.n_features();
    let k = model.n_outputs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ends = subset_values(model, input.x, input.background, &[vec![false; n], vec![true; n]]);
    let (base, fx) = (&ends[0], &ends[1]);

    let mut sum = vec![vec![0.0; n]; k];
    let mut sum_sq = vec![vec![0.0; n]; k];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        // prefixes of length 1..n-1; the empty and full prefixes are known
        let mut mask = vec![false; n];
        let prefixes: Vec<Vec<bool>> = order[..n.saturating_sub(1)]
            .iter()
            .map(|&j| {
                mask[j] = true;
                mask.clone()
            })
            .collect();
        let inner = subset_values(model, input.x, input.background, &prefixes);
        let mut prev = base;
        for (pos, &j) in order.iter().enumerate() {
            let cur = if pos + 1 == n { fx } else { &inner[pos] };
            for l in 0..k {
                let c = cur[l] - prev[l];
                sum[l][j] += c;
                sum_sq[l][j] += c * c;
            }
            prev = cur;
        }
    }

    let np = n_permutations as f64;
    Ok((0..k)
        .map(|l| {
            let mut phi: Vec<f64> = sum[l].iter().map(|s| s / np).collect();
            let se: Vec<f64> = (0..n)
                .map(|j| {
                    let var = (sum_sq[l][j] / np - phi[j] * phi[j]).max(0.0) * np / (np - 1.0);
                    (var / np).sqrt()
                })
                .collect();
            let residual = fx[l] - base[l] - phi.iter().sum::<f64>();
            let total: f64 = phi.iter().map(|p| p.abs()).sum();
            if residual != 0.0 {
                if total > 0.0 {
                    phi.iter_mut().for_each(|p| *p += residual * p.abs() / total);
                } else {
                    phi.iter_mut().for_each(|p| *p += residual / n as f64);
                }
            }
            Attribution {
                label: l,
                method: Method::Sampled,
                scale: input.scale,
                base_value: base[l],
                fx: fx[l],
                phi,
                std_errors: Some(se),
                feature_names: input.feature_names.to_vec(),
                feature_values: input.x.to_vec(),
            }
        })
        .collect())
}

pub fn shapley_sampled<P: Predictor + ?Sized>(
    model: &P,
    input: &ExplainInput<'_>,
    label: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    check_label(model, label)?;
    Ok(shapley_sampled_all(model, input, n_permutations, seed)?.swap_remove(label))
}

/// Exact when the feature count allows it, sampled otherwise.
pub fn shapley_auto<P: Predictor + ?Sized>(
    model: &P,
    input: &ExplainInput<'_>,
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<Attribution>, ExplainError> {
    if model.n_features() <= MAX_EXACT_FEATURES {
        shapley_exact_all(model, input)
    } else {
        shapley_sampled_all(model, input, n_permutations, seed)
    }
}

/// Up to `n` distinct rows of `x`, chosen with `seed`, in ascending row order.
pub fn sample_background(x: ArrayView2<f64>, n: usize, seed: u64) -> Array2<f64> {
    if x.nrows() <= n {
        return x.to_owned();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, x.nrows(), n).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub feature: String,
    pub phi: f64,
    /// Feature value min-max scaled across the summarised samples.
    pub normalized_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub label: usize,
    /// Sorted by mean |φ| descending, then name.
    pub ranking: Vec<FeatureImportance>,
    pub scatter: Vec<ScatterPoint>,
}

/// Per-label mean-|φ| rankings and scatter data.
pub fn summarize(attributions: &[Attribution]) -> Result<Vec<SummaryStats>, ExplainError> {
    let first = attributions.first().ok_or(ExplainError::Empty)?;
    let names = &first.feature_names;
    for a in attributions {
        if &a.feature_names != names || a.phi.len() != names.len() || a.feature_values.len() != names.len() {
            return Err(ExplainError::Inconsistent("feature sets".into()));
        }
    }
    let mut by_label: BTreeMap<usize, Vec<&Attribution>> = BTreeMap::new();
    for a in attributions {
        by_label.entry(a.label).or_default().push(a);
    }
    let d = names.len();
    let mut out = Vec::new();
    for (label, group) in by_label {
        let n = group.len() as f64;
        let mut ranking: Vec<FeatureImportance> = (0..d)
            .map(|j| FeatureImportance {
                feature: names[j].clone(),
                mean_abs_phi: group.iter().map(|a| a.phi[j].abs()).sum::<f64>() / n,
            })
            .collect();
        ranking.sort_by(|a, b| {
            b.mean_abs_phi
                .total_cmp(&a.mean_abs_phi)
                .then_with(|| a.feature.cmp(&b.feature))
        });
        let mut scatter = Vec::with_capacity(group.len() * d);
        for j in 0..d {
            let vals = group.iter().map(|a| a.feature_values[j]);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            for a in &group {
                let v = a.feature_values[j];
                scatter.push(ScatterPoint {
                    feature: names[j].clone(),
                    phi: a.phi[j],
                    normalized_value: if hi > lo { (v - lo) / (hi - lo) } else { 0.5 },
                });
            }
        }
        out.push(SummaryStats {
            label,
            ranking,
            scatter,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallStep {
    pub feature: String,
    pub value: f64,
    pub phi: f64,
    pub sign: Sign,
    /// Running total after this step.
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub label: usize,
    pub base_value: f64,
    /// Smallest |φ| first; features with φ = 0 are omitted.
    pub steps: Vec<WaterfallStep>,
    pub final_value: f64,
}

pub fn waterfall(a: &Attribution) -> Waterfall {
    let mut idx: Vec<usize> = (0..a.phi.len()).filter(|&j| a.phi[j] != 0.0).collect();
    idx.sort_by(|&i, &j| {
        a.phi[i]
            .abs()
            .total_cmp(&a.phi[j].abs())
            .then_with(|| a.feature_names[i].cmp(&a.feature_names[j]))
    });
    let mut cum = a.base_value;
    let steps = idx
        .into_iter()
        .map(|j| {
            cum += a.phi[j];
            WaterfallStep {
                feature: a.feature_names[j].clone(),
                value: a.feature_values[j],
                phi: a.phi[j],
                sign: if a.phi[j] > 0.0 { Sign::Positive } else { Sign::Negative },
                cumulative: cum,
            }
        })
        .collect();
    Waterfall {
        label: a.label,
        base_value: a.base_value,
        steps,
        final_value: cum,
    }
}
