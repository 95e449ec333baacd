use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::cond::{CondSampler, CondVector};
use super::nets::{pack, unpack, DiscGrads, Discriminator, Generator};
use super::transformer::{Activation, DataTransformer};
use super::DatagenError;
use crate::nn::{Adam, Moments};
use crate::schema::{BuildingRecord, DatasetSchema};

pub const MIN_TRAINING_ROWS: usize = 100;
pub const MIN_STEPS_PER_EPOCH: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub epochs: usize,
    pub generator_dims: Vec<usize>,
    pub discriminator_dims: Vec<usize>,
    pub noise_dim: usize,
    pub pac: usize,
    pub gp_weight: f64,
    /// Upper bound; the effective batch is clamped to the data size and
    /// rounded down to a multiple of `pac`.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub leaky_slope: f64,
    pub gumbel_tau: f64,
    pub max_modes: usize,
    pub weight_threshold: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            epochs: 800,
            generator_dims: vec![256, 256],
            discriminator_dims: vec![256, 256],
            noise_dim: 128,
            pac: 10,
            gp_weight: 10.0,
            batch_size: 60,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            leaky_slope: 0.2,
            gumbel_tau: 0.2,
            max_modes: super::DEFAULT_MAX_MODES,
            weight_threshold: super::DEFAULT_WEIGHT_THRESHOLD,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.pac == 0 || self.batch_size == 0 || self.batch_size % self.pac != 0 {
            return bad("pac must divide a positive batch size");
        }
        if self.discriminator_dims.is_empty() || self.generator_dims.iter().chain(&self.discriminator_dims).any(|&d| d == 0) {
            return bad("layer widths must be positive and the discriminator needs a hidden layer");
        }
        if self.noise_dim == 0 {
            return bad("noise_dim must be positive");
        }
        if !(self.learning_rate > 0.0 && self.gp_weight >= 0.0 && self.gumbel_tau > 0.0) {
            return bad("learning rate and temperature must be positive, gradient-penalty weight non-negative");
        }
        if self.max_modes == 0 {
            return bad("max_modes must be positive");
        }
        Ok(())
    }

    /// Small tables get a smaller batch so every epoch still takes a few
    /// optimizer steps.
    fn effective_batch(&self, n: usize) -> usize {
        let b = self.batch_size.min(n / MIN_STEPS_PER_EPOCH);
        (b - b % self.pac).max(self.pac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub discriminator: f64,
    pub generator: f64,
}

/// Fitted encoder, condition sampler and generator weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedGan {
    pub config: GanConfig,
    pub transformer: DataTransformer,
    pub sampler: CondSampler,
    pub generator: Generator,
    pub history: Vec<EpochLoss>,
}

fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(1e-20, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

/// tanh on scalar spans, Gumbel-softmax on one-hot spans.
fn activate<R: Rng>(logits: &Array2<f64>, t: &DataTransformer, tau: f64, rng: &mut R) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        for span in &t.spans {
            let mut block = row.slice_mut(s![span.range()]);
            match span.activation {
                Activation::Tanh => block.mapv_inplace(f64::tanh),
                Activation::Softmax => {
                    block.mapv_inplace(|l| (l + gumbel(rng)) / tau);
                    let m = block.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    block.mapv_inplace(|v| (v - m).exp());
                    let z = block.sum();
                    block /= z;
                }
            }
        }
    }
    out
}

fn activate_backward(act: &Array2<f64>, dact: ArrayView2<f64>, t: &DataTransformer, tau: f64) -> Array2<f64> {
    let mut d = dact.to_owned();
    for (mut drow, yrow) in d.rows_mut().into_iter().zip(act.rows()) {
        for span in &t.spans {
            let y = yrow.slice(s![span.range()]);
            let mut g = drow.slice_mut(s![span.range()]);
            match span.activation {
                Activation::Tanh => g.zip_mut_with(&y, |g, &y| *g *= 1.0 - y * y),
                Activation::Softmax => {
                    let dot = g.dot(&y);
                    g.zip_mut_with(&y, |g, &y| *g = y * (*g - dot) / tau);
                }
            }
        }
    }
    d
}

/// Cross-entropy between the raw logits of each row's conditioned column and
/// the requested category, summed and divided by the batch size.
fn cond_loss(logits: &Array2<f64>, conds: &[CondVector], t: &DataTransformer) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (r, c) in conds.iter().enumerate() {
        let d = &t.discrete[c.column];
        let range = d.data_offset..d.data_offset + d.categories.len();
        let l = logits.slice(s![r, range.clone()]);
        let m = l.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + l.mapv(|v| (v - m).exp()).sum().ln();
        loss += lse - l[c.category];
        let mut g = grad.slice_mut(s![r, range]);
        g.assign(&l.mapv(|v| (v - lse).exp() / n));
        g[c.category] -= 1.0 / n;
    }
    (loss / n, grad)
}

fn noise<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal))
}

fn adam_step(adam: &mut Adam, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, moments: &mut [Moments]) {
    adam.tick();
    for ((p, g), m) in params.into_iter().zip(grads).zip(moments.iter_mut()) {
        adam.update(p, g, m);
    }
}

fn moments_for(params: Vec<&mut [f64]>) -> Vec<Moments> {
    params.iter().map(|p| Moments::zeros(p.len())).collect()
}

/// Fits the encoder on `records` and trains the generator against a packed
/// critic with gradient penalty.
pub fn train_gan(
    records: &[BuildingRecord],
    schema: &DatasetSchema,
    config: &GanConfig,
) -> Result<TrainedGan, DatagenError> {
    config.validate()?;
    if records.len() < MIN_TRAINING_ROWS {
        return Err(DatagenError::TooFewRows {
            got: records.len(),
            need: MIN_TRAINING_ROWS,
        });
    }
    let transformer = DataTransformer::fit(records, schema, config.max_modes, config.weight_threshold, config.seed)?;
    let data = transformer.encode(records, config.seed)?;
    let sampler = CondSampler::fit(data.view(), &transformer);
    let n = data.nrows();
    let data_dim = transformer.output_dim;
    let cond_dim = transformer.cond_dim;
    let batch = config.effective_batch(n);
    let pac = config.pac;
    let packs = (batch / pac) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut generator = Generator::init(config.noise_dim + cond_dim, &config.generator_dims, data_dim, &mut rng);
    let mut critic = Discriminator::init(
        (data_dim + cond_dim) * pac,
        &config.discriminator_dims,
        config.leaky_slope,
        &mut rng,
    );
    let mut opt_g = Adam::with_betas(config.learning_rate, config.beta1, config.beta2);
    let mut opt_d = opt_g.clone();
    let mut mom_g = moments_for(generator.params_mut());
    let mut mom_d = moments_for(critic.params_mut());

    let steps = (n / batch).max(1);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (mut sum_d, mut sum_g) = (0.0, 0.0);
        for _ in 0..steps {
            // critic step
            let z = noise(&mut rng, batch, config.noise_dim);
            let conds: Vec<CondVector> = (0..batch).filter_map(|_| sampler.sample_cond_vector(&mut rng)).collect();
            let c1 = sampler.matrix(&conds);
            let mut perm: Vec<usize> = (0..batch).collect();
            perm.shuffle(&mut rng);
            let mut real = Array2::zeros((batch, data_dim));
            for (i, &p) in perm.iter().enumerate() {
                let row = match conds.get(p) {
                    Some(c) => sampler.sample_row(c.column, c.category, &mut rng),
                    None => None,
                }
                .unwrap_or_else(|| rng.random_range(0..n));
                real.row_mut(i).assign(&data.row(row));
            }
            let c2 = c1.select(Axis(0), &perm);

            let (logits, cache) = generator.forward(concatenate![Axis(1), z, c1].view());
            generator.track_statistics(&cache);
            let fake = activate(&logits, &transformer, config.gumbel_tau, &mut rng);
            let fake_cat = pack(&concatenate![Axis(1), fake, c1], pac);
            let real_cat = pack(&concatenate![Axis(1), real, c2], pac);

            // the critic has no batch statistics, so real and fake packs can
            // share one pass
            let m = real_cat.nrows();
            let (y, cache) = critic.forward(concatenate![Axis(0), real_cat, fake_cat].view());
            let w = y.slice(s![..m, ..]).mean().unwrap_or(0.0) - y.slice(s![m.., ..]).mean().unwrap_or(0.0);
            let dout = Array2::from_shape_fn(y.raw_dim(), |(i, _)| if i < m { -1.0 / packs } else { 1.0 / packs });
            let (mut grads, _) = critic.backward(dout.view(), &cache);

            let alpha: Vec<f64> = (0..real_cat.nrows()).map(|_| rng.random()).collect();
            let mut interp = real_cat.clone();
            for (mut row, (f, a)) in interp.rows_mut().into_iter().zip(fake_cat.rows().into_iter().zip(&alpha)) {
                row.zip_mut_with(&f, |r, &f| *r = a * *r + (1.0 - a) * f);
            }
            let (penalty, g_pen): (f64, DiscGrads) = critic.gradient_penalty(interp.view(), config.gp_weight);
            grads.add(&g_pen);
            let loss_d = -w + penalty;
            adam_step(&mut opt_d, critic.params_mut(), grads.slices(), &mut mom_d);

            // generator step
            let z = noise(&mut rng, batch, config.noise_dim);
            let conds: Vec<CondVector> = (0..batch).filter_map(|_| sampler.sample_cond_vector(&mut rng)).collect();
            let c1 = sampler.matrix(&conds);
            let (logits, cache) = generator.forward(concatenate![Axis(1), z, c1].view());
            let fake = activate(&logits, &transformer, config.gumbel_tau, &mut rng);
            let fake_cat = pack(&concatenate![Axis(1), fake, c1], pac);
            let (y_fake, cache_fake) = critic.forward(fake_cat.view());
            let dx = critic.backward_input(Array2::from_elem(y_fake.raw_dim(), -1.0 / packs).view(), &cache_fake);
            let dx = unpack(dx, data_dim + cond_dim);
            let mut dlogits = activate_backward(&fake, dx.slice(s![.., ..data_dim]), &transformer, config.gumbel_tau);
            let (ce, dce) = if conds.is_empty() {
                (0.0, Array2::zeros(logits.raw_dim()))
            } else {
                cond_loss(&logits, &conds, &transformer)
            };
            dlogits += &dce;
            let loss_g = -y_fake.mean().unwrap_or(0.0) + ce;
            let grads = generator.backward(dlogits.view(), &cache);
            generator.track_statistics(&cache);
            adam_step(&mut opt_g, generator.params_mut(), grads.slices(), &mut mom_g);

            if !loss_d.is_finite() || !loss_g.is_finite() || !generator.is_finite() {
                return Err(DatagenError::Diverged {
                    epoch,
                    detail: format!(
                        "critic loss {loss_d}, generator loss {loss_g}, wasserstein estimate {w}, penalty {penalty}"
                    ),
                });
            }
            sum_d += loss_d;
            sum_g += loss_g;
        }
        let e = EpochLoss {
            epoch,
            discriminator: sum_d / steps as f64,
            generator: sum_g / steps as f64,
        };
        log::debug!("gan epoch {epoch}: critic {:.4} generator {:.4}", e.discriminator, e.generator);
        history.push(e);
    }
    Ok(TrainedGan {
        config: config.clone(),
        transformer,
        sampler,
        generator,
        history,
    })
}

impl TrainedGan {
    /// Resolves `(column, category)` to a condition vector.
    pub fn condition(&self, column: &str, category: &str) -> Result<CondVector, DatagenError> {
        let c = self
            .transformer
            .discrete_index(column)
            .ok_or_else(|| DatagenError::UnknownColumn(column.to_string()))?;
        let k = self.transformer.discrete[c]
            .categories
            .iter()
            .position(|x| x == category)
            .ok_or_else(|| DatagenError::UnseenCategory {
                column: column.to_string(),
                value: category.to_string(),
            })?;
        Ok(self.sampler.vector(c, k))
    }

    /// Raw generator output for `n` rows. With a condition every row carries
    /// it; without one conditions follow the training frequencies.
    pub fn sample_encoded<R: Rng>(&self, n: usize, condition: Option<&CondVector>, rng: &mut R) -> Array2<f64> {
        let chunk = self.config.batch_size.max(1);
        let mut out = Array2::zeros((0, self.transformer.output_dim));
        let mut left = n;
        while left > 0 {
            let b = chunk.min(left);
            let z = noise(rng, b, self.config.noise_dim);
            let conds: Vec<CondVector> = match condition {
                Some(c) => vec![c.clone(); b],
                None => (0..b).filter_map(|_| self.sampler.sample_original(rng)).collect(),
            };
            let c = self.sampler.matrix(&conds);
            let logits = self.generator.infer(concatenate![Axis(1), z, c].view());
            let act = activate(&logits, &self.transformer, self.config.gumbel_tau, rng);
            out.append(Axis(0), act.view()).expect("matching widths");
            left -= b;
        }
        out
    }

    pub fn sample<R: Rng>(&self, n: usize, condition: Option<&CondVector>, rng: &mut R) -> Vec<BuildingRecord> {
        self.sample_encoded(n, condition, rng)
            .rows()
            .into_iter()
            .map(|r| self.transformer.decode_row(&r.to_vec()))
            .collect()
    }
}
