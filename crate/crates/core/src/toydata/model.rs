//! Three-class multinomial logistic regression over hashed features, trained
//! with label-smoothed cross-entropy by deterministic mini-batch gradient
//! descent.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize, SparseVector, DEFAULT_DIM};
use super::generate::DatasetExample;
use crate::decision::{validate_distribution, DecisionDistribution, DecisionLabel, PredictionRecord};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub feature_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            feature_dim: DEFAULT_DIM,
            epochs: 10,
            learning_rate: 1.0,
            batch_size: 32,
            smoothing: 0.05,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub format_version: u32,
    pub feature_dim: usize,
    pub smoothing: f64,
    pub seed: u64,
    pub bias: [f64; 3],
    /// Row-major `3 x feature_dim`, rows in YES, NO, TBD order.
    pub weights: Vec<f64>,
    /// Mean smoothed cross-entropy on the training set after each epoch.
    pub loss_history: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(feature_dim: usize) -> Self {
        ToyModel {
            format_version: MODEL_FORMAT_VERSION,
            feature_dim,
            smoothing: 0.0,
            seed: 0,
            bias: [0.0; 3],
            weights: vec![0.0; 3 * feature_dim],
            loss_history: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model format {}",
                self.format_version
            )));
        }
        if self.weights.len() != 3 * self.feature_dim {
            return Err(Error::DimMismatch {
                expected: 3 * self.feature_dim,
                found: self.weights.len(),
            });
        }
        if !(0.0..0.5).contains(&self.smoothing) {
            return Err(Error::Range(format!("smoothing {} outside [0, 0.5)", self.smoothing)));
        }
        if !self.weights.iter().chain(&self.bias).all(|w| w.is_finite()) {
            return Err(Error::Range("model has non-finite weights".into()));
        }
        Ok(())
    }

    fn logits(&self, x: &SparseVector) -> [f64; 3] {
        let d = self.feature_dim;
        [0, 1, 2].map(|c| self.bias[c] + x.dot(&self.weights[c * d..(c + 1) * d]))
    }

    pub fn probabilities(&self, x: &SparseVector) -> Result<[f64; 3]> {
        if x.dim != self.feature_dim {
            return Err(Error::DimMismatch {
                expected: self.feature_dim,
                found: x.dim,
            });
        }
        Ok(softmax(self.logits(x)))
    }

    pub fn distribution(&self, x: &SparseVector) -> Result<DecisionDistribution> {
        let [y, n, t] = self.probabilities(x)?;
        validate_distribution(y, n, t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Schema(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ToyModel = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

fn softmax(logits: [f64; 3]) -> [f64; 3] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

fn smoothed_target(gold: DecisionLabel, smoothing: f64) -> [f64; 3] {
    let mut q = [smoothing / 3.0; 3];
    q[gold.index()] += 1.0 - smoothing;
    q
}

fn smoothed_loss(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    -p.iter().zip(q).map(|(&pi, &qi)| qi * pi.max(1e-300).ln()).sum::<f64>()
}

pub fn train_toy(data: &[DatasetExample], config: &TrainConfig) -> Result<ToyModel> {
    for label in DecisionLabel::ALL {
        if !data.iter().any(|e| e.gold == label) {
            return Err(Error::DegenerateData(label));
        }
    }
    if config.epochs == 0 || config.batch_size == 0 || !config.learning_rate.is_finite() || config.learning_rate <= 0.0 {
        return Err(Error::Range("epochs, batch_size and learning_rate must be positive".into()));
    }
    let mut model = ToyModel::zeros(config.feature_dim);
    model.smoothing = config.smoothing;
    model.seed = config.seed;
    model.validate()?;

    let features = data
        .iter()
        .map(|e| featurize(&e.premise, &e.hypothesis, config.feature_dim))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<[f64; 3]> = data.iter().map(|e| smoothed_target(e.gold, config.smoothing)).collect();

    let d = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads: Vec<[f64; 3]> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            // gradients against the weights as they stood at batch start
            grads.clear();
            for &i in batch {
                let p = softmax(model.logits(&features[i]));
                grads.push([0, 1, 2].map(|c| p[c] - targets[i][c]));
            }
            let step = config.learning_rate / batch.len() as f64;
            for (&i, g) in batch.iter().zip(&grads) {
                for (c, &gc) in g.iter().enumerate() {
                    model.bias[c] -= step * gc;
                    let row = &mut model.weights[c * d..(c + 1) * d];
                    for &(j, v) in &features[i].entries {
                        row[j as usize] -= step * gc * v;
                    }
                }
            }
        }
        let loss = features
            .iter()
            .zip(&targets)
            .map(|(x, q)| smoothed_loss(&softmax(model.logits(x)), q))
            .sum::<f64>()
            / data.len() as f64;
        model.loss_history.push(loss);
    }
    model.validate()?;
    Ok(model)
}

/// One prediction per example, gold copied from the example.
pub fn predict_toy(model: &ToyModel, examples: &[DatasetExample]) -> Result<Vec<PredictionRecord>> {
    model.validate()?;
    examples
        .iter()
        .map(|e| {
            let x = featurize(&e.premise, &e.hypothesis, model.feature_dim)?;
            PredictionRecord::new(e.id.clone(), model.distribution(&x)?, Some(e.gold), None)
        })
        .collect()
}
