use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::DatagenError;

pub const DEFAULT_MAX_MODES: usize = 10;
pub const DEFAULT_WEIGHT_THRESHOLD: f64 = 0.005;
pub const MIN_FIT_VALUES: usize = 10;

// EM runs on at most this many values; larger columns are subsampled
const MAX_FIT_VALUES: usize = 20_000;
const EM_ITERATIONS: usize = 300;
const EM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

/// Gaussian mixture encoding of one continuous column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeNormalizer {
    pub column: String,
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone)]
struct Mixture {
    modes: Vec<Mode>,
    log_likelihood: f64,
}

fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// EM for a `k`-component mixture, initialised at evenly spaced quantiles.
fn em(values: &[f64], sorted: &[f64], k: usize, std_floor: f64, overall_std: f64) -> Mixture {
    let n = values.len() as f64;
    let mut modes: Vec<Mode> = (0..k)
        .map(|i| Mode {
            mean: quantile(sorted, (i as f64 + 0.5) / k as f64),
            std: (overall_std / k as f64).max(std_floor),
            weight: 1.0 / k as f64,
        })
        .collect();
    let mut resp = vec![0.0; values.len() * k];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    let mut logp = vec![0.0; k];
    for _ in 0..EM_ITERATIONS {
        ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            for (j, m) in modes.iter().enumerate() {
                logp[j] = m.weight.max(f64::MIN_POSITIVE).ln() + log_normal(x, m.mean, m.std);
            }
            let lse = log_sum_exp(&logp);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (logp[j] - lse).exp();
            }
        }
        for (j, m) in modes.iter_mut().enumerate() {
            let nk: f64 = (0..values.len()).map(|i| resp[i * k + j]).sum();
            if nk < 1e-12 {
                m.weight = 0.0;
                continue;
            }
            let mean = values
                .iter()
                .enumerate()
                .map(|(i, &x)| resp[i * k + j] * x)
                .sum::<f64>()
                / nk;
            let var = values
                .iter()
                .enumerate()
                .map(|(i, &x)| resp[i * k + j] * (x - mean) * (x - mean))
                .sum::<f64>()
                / nk;
            *m = Mode {
                mean,
                std: var.sqrt().max(std_floor),
                weight: nk / n,
            };
        }
        if (ll - prev).abs() <= EM_TOLERANCE * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    Mixture {
        modes,
        log_likelihood: ll,
    }
}

impl ModeNormalizer {
    /// Fits mixtures with 1..=`max_modes` components, keeps the one with the
    /// lowest BIC and drops modes lighter than `weight_threshold`.
    pub fn fit(
        column: &str,
        values: &[f64],
        max_modes: usize,
        weight_threshold: f64,
        seed: u64,
    ) -> Result<Self, DatagenError> {
        if values.len() < MIN_FIT_VALUES {
            return Err(DatagenError::TooFewValues {
                column: column.to_string(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DatagenError::NonFinite(column.to_string()));
        }
        let fit_values: Vec<f64> = if values.len() > MAX_FIT_VALUES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, values.len(), MAX_FIT_VALUES)
                .into_iter()
                .map(|i| values[i])
                .collect()
        } else {
            values.to_vec()
        };
        let n = fit_values.len() as f64;
        let mean = fit_values.iter().sum::<f64>() / n;
        let var = fit_values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            return Ok(Self {
                column: column.to_string(),
                modes: vec![Mode {
                    mean,
                    std: constant_std(mean),
                    weight: 1.0,
                }],
            });
        }
        let mut sorted = fit_values.clone();
        sorted.sort_by(f64::total_cmp);
        let std_floor = 1e-3 * std;

        let mut best: Option<(f64, Mixture)> = None;
        for k in 1..=max_modes.max(1) {
            let mix = em(&fit_values, &sorted, k, std_floor, std);
            let bic = -2.0 * mix.log_likelihood + (3 * k - 1) as f64 * n.ln();
            if best.as_ref().is_none_or(|(b, _)| bic < *b) {
                best = Some((bic, mix));
            }
        }
        let mut modes: Vec<Mode> = best
            .expect("at least one mixture")
            .1
            .modes
            .into_iter()
            .filter(|m| m.weight >= weight_threshold)
            .collect();
        if modes.is_empty() {
            modes.push(Mode {
                mean,
                std,
                weight: 1.0,
            });
        }
        let total: f64 = modes.iter().map(|m| m.weight).sum();
        modes.iter_mut().for_each(|m| m.weight /= total);
        modes.sort_by(|a, b| a.mean.total_cmp(&b.mean));
        Ok(Self {
            column: column.to_string(),
            modes,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Posterior mode probabilities of `x`.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let logp: Vec<f64> = self
            .modes
            .iter()
            .map(|m| m.weight.ln() + log_normal(x, m.mean, m.std))
            .collect();
        let lse = log_sum_exp(&logp);
        if !lse.is_finite() {
            // far outside every mode: fall back to the nearest one
            let mut r = vec![0.0; self.modes.len()];
            r[self.nearest(x)] = 1.0;
            return r;
        }
        logp.iter().map(|l| (l - lse).exp()).collect()
    }

    fn nearest(&self, x: f64) -> usize {
        (0..self.modes.len())
            .min_by(|&a, &b| {
                let za = ((x - self.modes[a].mean) / self.modes[a].std).abs();
                let zb = ((x - self.modes[b].mean) / self.modes[b].std).abs();
                za.total_cmp(&zb)
            })
            .expect("at least one mode")
    }

    /// `(α, mode)` with the mode drawn in proportion to its responsibility.
    pub fn encode<R: Rng>(&self, x: f64, rng: &mut R) -> (f64, usize) {
        let r = self.responsibilities(x);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = r.len() - 1;
        for (j, p) in r.iter().enumerate() {
            acc += p;
            if u < acc {
                k = j;
                break;
            }
        }
        (self.alpha(x, k), k)
    }

    /// `(x − μ_k) / (4σ_k)` clipped to `[-1, 1]`.
    pub fn alpha(&self, x: f64, k: usize) -> f64 {
        let m = &self.modes[k];
        ((x - m.mean) / (4.0 * m.std)).clamp(-1.0, 1.0)
    }

    pub fn decode(&self, alpha: f64, k: usize) -> f64 {
        let m = &self.modes[k];
        alpha.clamp(-1.0, 1.0) * 4.0 * m.std + m.mean
    }
}

fn constant_std(mean: f64) -> f64 {
    (mean.abs() * 1e-6).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn normal_sample(n: usize, mean: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn unimodal_sample_keeps_one_mode() {
        let v = normal_sample(1000, 0.0, 1);
        let m = ModeNormalizer::fit("x", &v, 10, 0.005, 0).unwrap();
        assert_eq!(m.n_modes(), 1, "{:?}", m.modes);
        assert!(m.modes[0].mean.abs() < 0.1);
    }

    #[test]
    fn bimodal_sample_keeps_two_modes() {
        let mut v = normal_sample(500, -5.0, 2);
        v.extend(normal_sample(500, 5.0, 3));
        let m = ModeNormalizer::fit("x", &v, 10, 0.005, 0).unwrap();
        assert_eq!(m.n_modes(), 2, "{:?}", m.modes);
        assert!((m.modes[0].mean + 5.0).abs() < 0.3);
        assert!((m.modes[1].mean - 5.0).abs() < 0.3);
        let w: f64 = m.modes.iter().map(|m| m.weight).sum();
        assert!((w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_column() {
        let v = vec![3.5; 20];
        let m = ModeNormalizer::fit("c", &v, 10, 0.005, 0).unwrap();
        assert_eq!(m.n_modes(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.encode(3.5, &mut rng), (0.0, 0));
        assert_eq!(m.decode(0.0, 0), 3.5);
    }

    #[test]
    fn alpha_clips_far_values() {
        let v = normal_sample(400, 0.0, 4);
        let m = ModeNormalizer::fit("x", &v, 10, 0.005, 0).unwrap();
        let s = m.modes[0].std;
        assert_eq!(m.alpha(m.modes[0].mean + 10.0 * s, 0), 1.0);
        assert_eq!(m.alpha(m.modes[0].mean - 10.0 * s, 0), -1.0);
    }

    #[test]
    fn too_few_values() {
        assert!(ModeNormalizer::fit("x", &[1.0, 2.0], 10, 0.005, 0).is_err());
    }

    #[test]
    fn mixture_validity_on_integer_column() {
        let v: Vec<f64> = (0..300).map(|i| f64::from(i % 7 + 1)).collect();
        let m = ModeNormalizer::fit("floors", &v, 10, 0.005, 0).unwrap();
        let w: f64 = m.modes.iter().map(|m| m.weight).sum();
        assert!((w - 1.0).abs() < 1e-9);
        assert!(m.modes.iter().all(|m| m.std > 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &x in &v[..20] {
            let (a, k) = m.encode(x, &mut rng);
            assert!((m.decode(a, k) - x).abs() < 1e-6);
        }
    }
}
