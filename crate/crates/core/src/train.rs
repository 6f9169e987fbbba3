//! Losses, Adam, and the unsupervised training loop.
//!
//! Training reconstructs the source-concept block only. Target concept
//! labels are never consulted; see [`HeteroGraph::target_gold`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{backward, forward, GradError};
use crate::graph::{DomainNeighborMap, EdgeWeighting, HeteroGraph, NeighborDirection};
use crate::linalg::{sigmoid, softplus, LinalgError, Matrix, SeededRng};
use crate::model::{distmult_scores, Activation, Encoder, EncoderOptions, ModelError, ModelParams, Noise};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Shape(#[from] LinalgError),
    #[error("reconstruction target has no positive entries")]
    DegenerateTarget,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Binary targets over a square logit block, with an inclusion mask and a
/// positive-class weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionTarget {
    targets: Matrix,
    mask: Matrix,
    pos_weight: f64,
}

impl ReconstructionTarget {
    /// Targets are the nonzero entries of `adjacency`; the diagonal is
    /// excluded. `pos_weight` defaults to `#neg / #pos` over included entries.
    pub fn from_adjacency(adjacency: &Matrix, pos_weight: Option<f64>) -> Result<Self, TrainError> {
        let mask = Matrix::from_fn(adjacency.rows(), adjacency.cols(), |i, j| {
            if i == j {
                0.0
            } else {
                1.0
            }
        });
        Self::with_mask(adjacency, mask, pos_weight)
    }

    pub fn with_mask(adjacency: &Matrix, mask: Matrix, pos_weight: Option<f64>) -> Result<Self, TrainError> {
        if adjacency.shape() != mask.shape() {
            return Err(LinalgError::ShapeMismatch {
                op: "reconstruction mask",
                left: adjacency.shape(),
                right: mask.shape(),
            }
            .into());
        }
        let targets = adjacency.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
        let mut t = Self {
            targets,
            mask,
            pos_weight: 1.0,
        };
        let (pos, neg) = t.counts();
        if pos == 0 {
            return Err(TrainError::DegenerateTarget);
        }
        t.pos_weight = pos_weight.unwrap_or(neg as f64 / pos as f64);
        Ok(t)
    }

    /// Drops the given `(row, col)` entries from the loss.
    pub fn exclude(&mut self, pairs: &[(usize, usize)]) -> Result<(), TrainError> {
        for &(i, j) in pairs {
            if i < self.mask.rows() && j < self.mask.cols() {
                self.mask[(i, j)] = 0.0;
            }
        }
        if self.counts().0 == 0 {
            return Err(TrainError::DegenerateTarget);
        }
        Ok(())
    }

    /// Included positive and negative entry counts.
    pub fn counts(&self) -> (usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for (t, m) in self.targets.as_slice().iter().zip(self.mask.as_slice()) {
            if *m != 0.0 {
                if *t != 0.0 {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
        (pos, neg)
    }

    pub fn pos_weight(&self) -> f64 {
        self.pos_weight
    }

    pub fn shape(&self) -> (usize, usize) {
        self.targets.shape()
    }

    /// Mean weighted BCE over included entries and its gradient w.r.t. logits.
    pub fn loss_and_grad(&self, logits: &Matrix) -> Result<(f64, Matrix), TrainError> {
        if logits.shape() != self.targets.shape() {
            return Err(LinalgError::ShapeMismatch {
                op: "reconstruction loss",
                left: logits.shape(),
                right: self.targets.shape(),
            }
            .into());
        }
        let (pos, neg) = self.counts();
        let m = (pos + neg) as f64;
        let pw = self.pos_weight;
        let mut loss = 0.0;
        let mut grad = Matrix::zeros(logits.rows(), logits.cols());
        for (k, ((&x, &y), &w)) in logits
            .as_slice()
            .iter()
            .zip(self.targets.as_slice())
            .zip(self.mask.as_slice())
            .enumerate()
        {
            if w == 0.0 {
                continue;
            }
            if y != 0.0 {
                loss += pw * softplus(-x);
                grad.as_mut_slice()[k] = pw * (logistic(x) - 1.0) / m;
            } else {
                loss += softplus(x);
                grad.as_mut_slice()[k] = logistic(x) / m;
            }
        }
        let loss = loss / m;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite("reconstruction loss"));
        }
        Ok((loss, grad))
    }
}

/// Mean positive-weighted binary cross-entropy over off-diagonal entries.
pub fn reconstruction_loss(logits: &Matrix, targets: &Matrix, pos_weight: Option<f64>) -> Result<f64, TrainError> {
    ReconstructionTarget::from_adjacency(targets, pos_weight)?
        .loss_and_grad(logits)
        .map(|(l, _)| l)
}

/// `(1/N) Σ_i −½ Σ_d (1 + log σ² − μ² − σ²)`.
pub fn kl_loss(mu: &Matrix, logvar: &Matrix) -> Result<f64, TrainError> {
    if mu.shape() != logvar.shape() {
        return Err(LinalgError::ShapeMismatch {
            op: "kl",
            left: mu.shape(),
            right: logvar.shape(),
        }
        .into());
    }
    if !mu.is_finite() || !logvar.is_finite() {
        return Err(TrainError::NonFinite("kl input"));
    }
    let s: f64 = mu
        .as_slice()
        .iter()
        .zip(logvar.as_slice())
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum();
    Ok(s / mu.rows().max(1) as f64)
}

/// Bias-corrected Adam over a fixed list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(shapes: &[&Matrix], lr: f64) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Config(format!(
                "adam expects {} blocks, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || g.shape() != m.shape() {
                return Err(LinalgError::ShapeMismatch {
                    op: "adam",
                    left: p.shape(),
                    right: g.shape(),
                }
                .into());
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlWeight {
    /// `1 / N` for a graph of `N` nodes.
    InverseNodes,
    Constant(f64),
}

impl KlWeight {
    pub fn value(self, n_nodes: usize) -> f64 {
        match self {
            KlWeight::InverseNodes => 1.0 / n_nodes.max(1) as f64,
            KlWeight::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub kl_weight: KlWeight,
    /// `None` uses `#neg / #pos` of the training block.
    pub pos_weight: Option<f64>,
    pub hidden: (usize, usize),
    pub seed: u64,
    pub exact_sum: bool,
    pub weighting: EdgeWeighting,
    pub dn_direction: NeighborDirection,
    /// Fraction of source×target pairs kept as domain neighbours; 0 disables them.
    pub dn_keep_fraction: f64,
    pub patience: usize,
    /// Also reconstruct resource edges (ablation).
    pub reconstruct_resources: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            kl_weight: KlWeight::InverseNodes,
            pos_weight: None,
            hidden: (32, 16),
            seed: 0,
            exact_sum: false,
            weighting: EdgeWeighting::Weighted,
            dn_direction: NeighborDirection::Both,
            dn_keep_fraction: 0.10,
            patience: 20,
            reconstruct_resources: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dn_keep_fraction) {
            return Err(TrainError::Config("dn_keep_fraction must lie in [0, 1]".into()));
        }
        if self.hidden.0 == 0 || self.hidden.1 == 0 {
            return Err(TrainError::Config("hidden sizes must be positive".into()));
        }
        if let Some(pw) = self.pos_weight {
            if !(pw > 0.0 && pw.is_finite()) {
                return Err(TrainError::Config("pos_weight must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn encoder_options(&self) -> EncoderOptions {
        EncoderOptions {
            exact_sum: self.exact_sum,
            weighting: self.weighting,
            dn_direction: self.dn_direction,
            hidden_activation: Activation::Relu,
        }
    }
}

/// Held-out source pairs (local ids) for model selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationPairs {
    pub pos: Vec<(usize, usize)>,
    pub neg: Vec<(usize, usize)>,
}

impl ValidationPairs {
    pub fn is_empty(&self) -> bool {
        self.pos.is_empty() && self.neg.is_empty()
    }

    pub fn all(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.pos.iter().chain(&self.neg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Reconstruction loss on the sampled latents before the update.
    pub recon_loss: f64,
    pub kl: f64,
    pub val_f1: f64,
    /// Reconstruction loss under latent means after the update.
    pub mean_loss: f64,
}

impl EpochLog {
    pub fn total(&self, kl_weight: f64) -> f64 {
        self.recon_loss + kl_weight * self.kl
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub config: TrainConfig,
    /// Latent means of every node under `params`.
    pub z_mean: Matrix,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub kl_weight: f64,
}

impl TrainedModel {
    /// Sigmoid DistMult probabilities between the given global rows.
    pub fn probabilities(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ModelError> {
        let zr = self.z_mean.matmul(&self.params.r)?;
        pairs
            .iter()
            .map(|&(i, j)| {
                if i >= self.z_mean.rows() || j >= self.z_mean.rows() {
                    return Err(ModelError::PairOutOfRange(i, j));
                }
                Ok(sigmoid(crate::linalg::dot(zr.row(i), self.z_mean.row(j))))
            })
            .collect()
    }

    /// Training log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entries serialise") + "\n")
            .collect()
    }
}

/// Validation scores under latent means.
struct ValidationScore {
    f1: f64,
    z_mean: Matrix,
}

fn score_validation(
    encoder: &Encoder,
    params: &ModelParams,
    validation: &ValidationPairs,
) -> Result<ValidationScore, TrainError> {
    let z = encoder.encode(params, Noise::Mean)?.z;
    if validation.is_empty() {
        return Ok(ValidationScore { f1: f64::NAN, z_mean: z });
    }
    let zr = z.matmul(&params.r)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (k, &(i, j)) in validation.all().enumerate() {
        let x = crate::linalg::dot(zr.row(i), z.row(j));
        let label = k < validation.pos.len();
        match (sigmoid(x) >= 0.5, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(ValidationScore { f1, z_mean: z })
}

/// Fits the model on the source-concept block of `graph`.
///
/// Validation pairs are removed from the reconstruction loss and scored after
/// every epoch; the parameters of the best epoch (highest F1, then lowest
/// reconstruction loss under latent means) are returned. Training stops
/// after `patience` epochs without improvement.
pub fn fit(
    graph: &HeteroGraph,
    domain_map: &DomainNeighborMap,
    validation: &ValidationPairs,
    config: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    let view = graph.training_view();
    let nodes = view.nodes;
    let n = nodes.len();
    let s = nodes.n_source();
    for &(i, j) in validation.all() {
        if i >= s || j >= s {
            return Err(TrainError::Config(format!(
                "validation pair ({i}, {j}) is outside the source domain"
            )));
        }
    }

    let map = if config.dn_keep_fraction == 0.0 {
        DomainNeighborMap::empty()
    } else {
        domain_map.clone()
    };
    let encoder = Encoder::for_graph(graph, &map, &config.encoder_options())?;

    let (decoded, mut target) = if config.reconstruct_resources {
        let adj = view.dense_adjacency();
        let tr = nodes.target_rows();
        let mask = Matrix::from_fn(n, n, |i, j| {
            if i == j || (tr.contains(&i) && tr.contains(&j)) {
                0.0
            } else {
                1.0
            }
        });
        (0..n, ReconstructionTarget::with_mask(&adj, mask, config.pos_weight)?)
    } else {
        (0..s, ReconstructionTarget::from_adjacency(view.acs, config.pos_weight)?)
    };
    let held_out: Vec<(usize, usize)> = validation.all().copied().collect();
    target.exclude(&held_out)?;

    let kl_weight = config.kl_weight.value(n);
    let root = SeededRng::new(config.seed);
    let mut init_rng = root.fork(1);
    let mut noise_rng = root.fork(2);
    let (h1, h2) = config.hidden;
    let mut params = ModelParams::init(view.features.cols(), h1, h2, &mut init_rng);
    let mut adam = Adam::new(&params.blocks(), config.learning_rate);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams, Matrix)> = None;
    let mut stale = 0usize;

    for epoch in 1..=config.epochs {
        let tape = forward(&encoder, &params, Noise::Sample(&mut noise_rng), decoded.clone())?;
        let (recon, dlogits) = target.loss_and_grad(&tape.logits)?;
        let kl = kl_loss(&tape.output.mu, &tape.output.logvar)?;
        let total = recon + kl_weight * kl;
        if !total.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: total });
        }
        let grads = backward(&tape, &encoder.mp, encoder.activation, &params, &dlogits, kl_weight)?;
        if !grads.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: total });
        }
        adam.step(&mut params.blocks_mut(), &grads.blocks())?;
        if !params.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: total });
        }

        let ValidationScore { f1: val_f1, z_mean } = score_validation(&encoder, &params, validation)?;
        let zd = z_mean.row_block(decoded.start, decoded.end);
        let (fit_loss, _) = target.loss_and_grad(&distmult_scores(&zd, &zd, &params.r)?)?;
        log.push(EpochLog {
            epoch,
            recon_loss: recon,
            kl,
            val_f1,
            mean_loss: fit_loss,
        });

        // Highest validation F1; ties go to the lower reconstruction loss
        // under latent means.
        let score = if val_f1.is_nan() { 0.0 } else { val_f1 };
        let tie_break = fit_loss;
        let improved = match &best {
            None => true,
            Some((bf, bl, ..)) => score > *bf || (score == *bf && tie_break < *bl),
        };
        if improved {
            best = Some((score, tie_break, epoch, params.clone(), z_mean));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (_, _, best_epoch, params, z_mean) = best.expect("at least one epoch ran");
    Ok(TrainedModel {
        params,
        config: config.clone(),
        z_mean,
        log,
        best_epoch,
        kl_weight,
    })
}

/// Scores of `z_a[i] R z_b[j]ᵀ` for all pairs, as probabilities.
pub fn probability_matrix(z_a: &Matrix, z_b: &Matrix, r: &Matrix) -> Result<Matrix, ModelError> {
    Ok(distmult_scores(z_a, z_b, r)?.map(sigmoid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_correct_logits_give_near_zero_loss() {
        let t = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]).unwrap();
        let logits = t.map(|y| if y > 0.0 { 60.0 } else { -60.0 });
        assert!(reconstruction_loss(&logits, &t, None).unwrap() < 1e-20);
    }

    #[test]
    fn zero_logits_closed_form() {
        let t = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]).unwrap();
        // 6 off-diagonal entries: 2 positive, 4 negative, pos_weight 2.
        let l = reconstruction_loss(&Matrix::zeros(3, 3), &t, None).unwrap();
        let want = (2.0 * 2.0 + 4.0) * std::f64::consts::LN_2 / 6.0;
        assert!((l - want).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_scalar_oracle() {
        let mut rng = SeededRng::new(5);
        let logits = rng.normal_matrix(5, 5).scale(3.0);
        let t = Matrix::from_fn(5, 5, |i, j| if i != j && rng.unit() < 0.3 { 1.0 } else { 0.0 });
        let t = if t.sum() == 0.0 {
            Matrix::from_fn(5, 5, |i, j| if (i, j) == (0, 1) { 1.0 } else { 0.0 })
        } else {
            t
        };
        let (mut pos, mut neg) = (0.0, 0.0);
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    if t[(i, j)] > 0.0 {
                        pos += 1.0
                    } else {
                        neg += 1.0
                    }
                }
            }
        }
        let pw = neg / pos;
        let mut sum = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let p = 1.0 / (1.0 + (-logits[(i, j)]).exp());
                let y = t[(i, j)];
                sum += -(pw * y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            }
        }
        let want = sum / 20.0;
        let got = reconstruction_loss(&logits, &t, None).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn degenerate_target_rejected() {
        assert!(matches!(
            reconstruction_loss(&Matrix::zeros(3, 3), &Matrix::identity(3), None),
            Err(TrainError::DegenerateTarget)
        ));
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_loss(&Matrix::zeros(3, 2), &Matrix::zeros(3, 2)).unwrap(), 0.0);
        let one = Matrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(kl_loss(&one, &Matrix::zeros(1, 1)).unwrap(), 0.5);
        let mut rng = SeededRng::new(12);
        let mu = rng.normal_matrix(4, 3);
        let lv = rng.normal_matrix(4, 3);
        let mut want = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                let (m, l) = (mu[(i, j)], lv[(i, j)]);
                want += -0.5 * (1.0 + l - m * m - l.exp());
            }
        }
        want /= 4.0;
        assert!((kl_loss(&mu, &lv).unwrap() - want).abs() < 1e-14);
        assert!(kl_loss(&mu, &Matrix::zeros(2, 2)).is_err());
        assert!(kl_loss(&mu.map(|_| f64::NAN), &lv).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]).unwrap();
        let before = p.clone();
        let g = Matrix::zeros(1, 2);
        let mut adam = Adam::new(&[&p], 0.1);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.moments().0[0], g);
        assert_eq!(adam.moments().1[0], g);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [3.0, -0.25] {
            let mut p = Matrix::from_rows(&[[0.0]]).unwrap();
            let gm = Matrix::from_rows(&[[g]]).unwrap();
            let mut adam = Adam::new(&[&p], 0.01);
            adam.step(&mut [&mut p], &[&gm]).unwrap();
            assert!((p[(0, 0)] + 0.01 * f64::signum(g)).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_matches_scalar_oracle_on_quadratic() {
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut oracle = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            oracle.push(x);
        }
        let mut p = Matrix::from_rows(&[[1.0]]).unwrap();
        let mut adam = Adam::new(&[&p], lr);
        for want in oracle {
            let g = Matrix::from_rows(&[[2.0 * p[(0, 0)]]]).unwrap();
            adam.step(&mut [&mut p], &[&g]).unwrap();
            assert!((p[(0, 0)] - want).abs() < 1e-15);
        }
        assert_eq!(adam.t(), 10);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = Matrix::zeros(1, 2);
        let mut adam = Adam::new(&[&p], 0.1);
        assert!(adam.step(&mut [&mut p], &[&Matrix::zeros(2, 1)]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
