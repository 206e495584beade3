//! One-vs-rest logistic regression trained by batch gradient descent on the
//! z-scored, one-hot encoded features.

use serde::{Deserialize, Serialize};

use crate::data::{Instance, InstanceTable};
use crate::error::{Error, Result};
use crate::preprocess::{fit, PreprocessorModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            iterations: 1000,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub encoder: PreprocessorModel,
    /// One weight vector per class; the last entry is the intercept.
    pub weights: Vec<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()]
}

impl LogisticModel {
    pub fn train(train: &InstanceTable, params: &LogisticParams) -> Result<Self> {
        let encoder = fit(train)?;
        let schema = &train.schema;
        let mut xs = Vec::with_capacity(train.len());
        let mut ys = Vec::with_capacity(train.len());
        for row in &train.rows {
            if let Some(y) = row.target(schema) {
                xs.push(encoder.encode(row)?.0);
                ys.push(y);
            }
        }
        if ys.iter().all(|&y| Some(&y) == ys.first()) {
            return Err(Error::SingleClassTraining);
        }
        let d = encoder.encoded_len;
        let n = xs.len() as f64;
        let weights = (0..schema.class_labels().len())
            .map(|class| {
                let mut w = vec![0.0; d + 1];
                let mut grad = vec![0.0; d + 1];
                for _ in 0..params.iterations {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for (x, &y) in xs.iter().zip(&ys) {
                        let err = sigmoid(dot(&w, x)) - if y == class { 1.0 } else { 0.0 };
                        for (g, xi) in grad.iter_mut().zip(x) {
                            *g += err * xi;
                        }
                        grad[d] += err;
                    }
                    for j in 0..=d {
                        let reg = if j < d { params.l2 * w[j] } else { 0.0 };
                        w[j] -= params.learning_rate * (grad[j] / n + reg);
                    }
                }
                w
            })
            .collect();
        Ok(LogisticModel { encoder, weights })
    }

    /// Highest one-vs-rest score wins; ties go to the lowest class index.
    pub fn predict(&self, instance: &Instance) -> Result<usize> {
        let x = self.encoder.encode(instance)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (class, w) in self.weights.iter().enumerate() {
            let s = dot(w, &x.0);
            if s > best.1 {
                best = (class, s);
            }
        }
        Ok(best.0)
    }
}
