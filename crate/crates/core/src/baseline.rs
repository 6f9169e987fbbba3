//! Logistic regression on concatenated concept-pair embeddings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Domain, EmbeddingKey, EmbeddingTable};
use crate::linalg::{sigmoid, softplus, SeededRng};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no embedding for {0}")]
    MissingEmbedding(EmbeddingKey),
    #[error("positive and negative pair sets must be nonempty and equal in size ({pos} vs {neg})")]
    Unbalanced { pos: usize, neg: usize },
    #[error("model has not been trained")]
    Untrained,
    #[error("feature dimension {got} does not match model dimension {want}")]
    Dimension { got: usize, want: usize },
    #[error("training diverged at step {0}")]
    Diverged(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClsConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// `weights = [w_p (d), w_q (d), bias]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub trained: bool,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; 2 * dim + 1],
            trained: true,
        }
    }

    pub fn input_dim(&self) -> usize {
        (self.weights.len() - 1) / 2
    }

    fn logit(&self, x: &[f64]) -> f64 {
        let (w, b) = self.weights.split_at(x.len());
        crate::linalg::dot(w, x) + b[0]
    }
}

fn pair_features(
    pairs: &[(usize, usize)],
    embeddings: &EmbeddingTable,
    domain: Domain,
) -> Result<Vec<Vec<f64>>, BaselineError> {
    pairs
        .iter()
        .map(|&(p, q)| {
            let mut x = Vec::with_capacity(2 * embeddings.dim());
            for id in [p, q] {
                let key = EmbeddingKey::concept(domain, id);
                x.extend_from_slice(embeddings.get(key).ok_or(BaselineError::MissingEmbedding(key))?);
            }
            Ok(x)
        })
        .collect()
}

/// Mean binary cross-entropy of `model` on `(x, y)`.
fn bce(model: &LogisticModel, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let s: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = model.logit(x);
            y * softplus(-z) + (1.0 - y) * softplus(z)
        })
        .sum();
    s / xs.len() as f64
}

/// Full-batch gradient descent on raw feature vectors. Returns the loss
/// before each step.
pub fn fit_logistic(
    xs: &[Vec<f64>],
    ys: &[f64],
    config: &ClsConfig,
) -> Result<(LogisticModel, Vec<f64>), BaselineError> {
    let d = xs.first().map_or(0, Vec::len);
    let mut rng = SeededRng::new(config.seed);
    let mut model = LogisticModel {
        weights: (0..=d).map(|_| 0.01 * rng.normal()).collect(),
        trained: false,
    };
    let n = xs.len() as f64;
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        history.push(bce(&model, xs, ys));
        let mut grad = vec![0.0; d + 1];
        for (x, &y) in xs.iter().zip(ys) {
            let r = sigmoid(model.logit(x)) - y;
            for (g, v) in grad.iter_mut().zip(x) {
                *g += r * v;
            }
            grad[d] += r;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g / n;
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(BaselineError::Diverged(step + 1));
        }
    }
    model.trained = true;
    Ok((model, history))
}

/// Fits on `[e_p ; e_q]` with label 1 for `pos`, 0 for `neg`.
pub fn train_cls(
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    embeddings: &EmbeddingTable,
    domain: Domain,
    config: &ClsConfig,
) -> Result<(LogisticModel, Vec<f64>), BaselineError> {
    if pos.is_empty() || pos.len() != neg.len() {
        return Err(BaselineError::Unbalanced {
            pos: pos.len(),
            neg: neg.len(),
        });
    }
    let mut xs = pair_features(pos, embeddings, domain)?;
    xs.extend(pair_features(neg, embeddings, domain)?);
    let ys: Vec<f64> = (0..xs.len()).map(|i| if i < pos.len() { 1.0 } else { 0.0 }).collect();
    fit_logistic(&xs, &ys, config)
}

/// `sigmoid(w · [e_p ; e_q] + b)` per pair.
pub fn predict_cls(
    model: &LogisticModel,
    pairs: &[(usize, usize)],
    embeddings: &EmbeddingTable,
    domain: Domain,
) -> Result<Vec<f64>, BaselineError> {
    if !model.trained {
        return Err(BaselineError::Untrained);
    }
    if embeddings.dim() != model.input_dim() {
        return Err(BaselineError::Dimension {
            got: embeddings.dim(),
            want: model.input_dim(),
        });
    }
    Ok(pair_features(pairs, embeddings, domain)?
        .iter()
        .map(|x| sigmoid(model.logit(x)))
        .collect())
}
