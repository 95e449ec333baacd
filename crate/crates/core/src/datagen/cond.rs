use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transformer::{argmax, DataTransformer};

/// One-hot condition over the concatenated categories of every discrete
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondVector {
    pub column: usize,
    pub category: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CondColumn {
    offset: usize,
    /// Cumulative log-frequency distribution used while training.
    train_cdf: Vec<f64>,
    /// Cumulative empirical distribution used for unconditional sampling.
    empirical_cdf: Vec<f64>,
    rows: Vec<Vec<usize>>,
}

/// Training-by-sampling state: category frequencies and the rows holding
/// each category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondSampler {
    columns: Vec<CondColumn>,
    pub cond_dim: usize,
}

fn cdf(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn draw<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or_else(|| {
        // rounding left the total a hair below 1: take the last category
        // with mass
        (0..cdf.len())
            .rev()
            .find(|&i| cdf[i] > if i == 0 { 0.0 } else { cdf[i - 1] })
            .unwrap_or(0)
    })
}

impl CondSampler {
    /// Counts categories of the encoded rows `data`.
    pub fn fit(data: ArrayView2<f64>, transformer: &DataTransformer) -> Self {
        let columns = transformer
            .discrete
            .iter()
            .map(|d| {
                let k = d.categories.len();
                let mut rows = vec![Vec::new(); k];
                for (i, row) in data.rows().into_iter().enumerate() {
                    let block = row.slice(ndarray::s![d.data_offset..d.data_offset + k]);
                    rows[argmax(block.as_slice().expect("row-major data"))].push(i);
                }
                let counts: Vec<f64> = rows.iter().map(|r| r.len() as f64).collect();
                CondColumn {
                    offset: d.cond_offset,
                    train_cdf: cdf(&counts.iter().map(|c| (c + 1.0).ln()).collect::<Vec<_>>()),
                    empirical_cdf: cdf(&counts),
                    rows,
                }
            })
            .collect();
        Self {
            columns,
            cond_dim: transformer.cond_dim,
        }
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn vector(&self, column: usize, category: usize) -> CondVector {
        let mut vector = vec![0.0; self.cond_dim];
        vector[self.columns[column].offset + category] = 1.0;
        CondVector {
            column,
            category,
            vector,
        }
    }

    /// Column uniformly, category by log-frequency. `None` when the table has
    /// no discrete columns.
    pub fn sample_cond_vector<R: Rng>(&self, rng: &mut R) -> Option<CondVector> {
        if self.columns.is_empty() {
            return None;
        }
        let column = rng.random_range(0..self.columns.len());
        let category = draw(&self.columns[column].train_cdf, rng);
        Some(self.vector(column, category))
    }

    /// Column uniformly, category by its observed frequency.
    pub fn sample_original<R: Rng>(&self, rng: &mut R) -> Option<CondVector> {
        if self.columns.is_empty() {
            return None;
        }
        let column = rng.random_range(0..self.columns.len());
        let category = draw(&self.columns[column].empirical_cdf, rng);
        Some(self.vector(column, category))
    }

    /// A training row carrying `category` in `column`, uniformly at random.
    pub fn sample_row<R: Rng>(&self, column: usize, category: usize, rng: &mut R) -> Option<usize> {
        let rows = &self.columns[column].rows[category];
        (!rows.is_empty()).then(|| rows[rng.random_range(0..rows.len())])
    }

    /// Stacks condition vectors into a matrix.
    pub fn matrix(&self, conds: &[CondVector]) -> Array2<f64> {
        let mut m = Array2::zeros((conds.len(), self.cond_dim));
        for (i, c) in conds.iter().enumerate() {
            m[[i, self.columns[c.column].offset + c.category]] = 1.0;
        }
        m
    }
}
