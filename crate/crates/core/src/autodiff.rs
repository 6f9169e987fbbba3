//! Hand-derived backward pass for the encoder/decoder and a central
//! finite-difference checker for it.
//!
//! Loss = objective(logits) + kl_weight · KL(μ, log σ²), where the logits are
//! DistMult scores over a contiguous range of decoded rows.

use std::ops::{Deref, DerefMut, Range};

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, SeededRng};
use crate::model::{
    distmult_scores, Activation, Encoder, EncoderOutput, ForwardCache, LayerParams, MessagePassing,
    ModelError, ModelParams, Noise, BLOCK_NAMES,
};
use crate::graph::Neighborhoods;
use crate::train::{kl_loss, ReconstructionTarget};

#[derive(Debug, Error)]
pub enum GradError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shape(#[from] LinalgError),
    #[error("upstream gradient is {got:?}, logits are {want:?}")]
    TapeMismatch { got: (usize, usize), want: (usize, usize) },
    #[error("finite-difference step {0} is degenerate")]
    DegenerateStep(f64),
    #[error("loss is not finite")]
    NonFiniteLoss,
}

/// Parameter gradients, laid out like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub ModelParams);

impl Deref for Gradients {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl DerefMut for Gradients {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

/// Forward intermediates for one loss evaluation.
#[derive(Debug, Clone)]
pub struct Tape {
    pub output: EncoderOutput,
    pub cache: ForwardCache,
    pub decoded: Range<usize>,
    pub logits: Matrix,
}

/// Runs the encoder and scores all ordered pairs within `decoded`.
pub fn forward(
    encoder: &Encoder,
    params: &ModelParams,
    noise: Noise<'_>,
    decoded: Range<usize>,
) -> Result<Tape, GradError> {
    let (output, cache) = encoder.forward(params, noise)?;
    let zd = output.z.row_block(decoded.start, decoded.end);
    let logits = distmult_scores(&zd, &zd, &params.r)?;
    Ok(Tape {
        output,
        cache,
        decoded,
        logits,
    })
}

/// Exact gradients of `objective + kl_weight · KL`, given the objective's
/// gradient at the logits.
pub fn backward(
    tape: &Tape,
    mp: &MessagePassing,
    activation: Activation,
    params: &ModelParams,
    dlogits: &Matrix,
    kl_weight: f64,
) -> Result<Gradients, GradError> {
    if dlogits.shape() != tape.logits.shape() {
        return Err(GradError::TapeMismatch {
            got: dlogits.shape(),
            want: tape.logits.shape(),
        });
    }
    let out = &tape.output;
    let cache = &tape.cache;
    let n = out.z.rows();
    let (lo, hi) = (tape.decoded.start, tape.decoded.end);

    // Decoder: G = Z R Zᵀ.
    let zd = out.z.row_block(lo, hi);
    let dr = zd.t_matmul(&dlogits.matmul(&zd)?)?;
    let dzd = dlogits
        .matmul(&zd)?
        .matmul_t(&params.r)?
        .add(&dlogits.t_matmul(&zd)?.matmul(&params.r)?)?;
    let mut dz = Matrix::zeros(n, out.z.cols());
    for (k, i) in (lo..hi).enumerate() {
        dz.row_mut(i).copy_from_slice(dzd.row(k));
    }

    // Reparameterisation and KL.
    let inv_n = 1.0 / n as f64;
    let mut dmu = dz.clone();
    let mut dlv = Matrix::zeros(n, out.z.cols());
    for i in 0..n {
        for j in 0..out.z.cols() {
            let mu = out.mu[(i, j)];
            let lv = out.logvar[(i, j)];
            dmu[(i, j)] += kl_weight * mu * inv_n;
            dlv[(i, j)] = dz[(i, j)] * 0.5 * (0.5 * lv).exp() * out.eps[(i, j)]
                + kl_weight * 0.5 * (lv.exp() - 1.0) * inv_n;
        }
    }

    let head_grads = |dout: &Matrix| -> Result<LayerParams, GradError> {
        let w = cache.agg_hidden.t_matmul(dout)?;
        let w_d = match &cache.dom_hidden {
            Some(d) => d.t_matmul(dout)?,
            None => Matrix::zeros(w.rows(), w.cols()),
        };
        Ok(LayerParams { w, w_d })
    };
    let mu_head = head_grads(&dmu)?;
    let logvar_head = head_grads(&dlv)?;

    let through_direct = dmu
        .matmul_t(&params.mu_head.w)?
        .add(&dlv.matmul_t(&params.logvar_head.w)?)?;
    let mut dhidden = mp.direct.apply_transpose(&through_direct);
    if cache.dom_hidden.is_some() {
        let through_domain = dmu
            .matmul_t(&params.mu_head.w_d)?
            .add(&dlv.matmul_t(&params.logvar_head.w_d)?)?;
        dhidden.add_assign(&mp.domain.apply_transpose(&through_domain))?;
    }

    let mut dpre = dhidden;
    for (g, &p) in dpre
        .as_mut_slice()
        .iter_mut()
        .zip(cache.pre_hidden.as_slice())
    {
        *g *= activation.derivative(p);
    }
    let w1 = cache.agg_input.t_matmul(&dpre)?;
    let w1_d = match &cache.dom_input {
        Some(d) => d.t_matmul(&dpre)?,
        None => Matrix::zeros(w1.rows(), w1.cols()),
    };

    Ok(Gradients(ModelParams {
        layer1: LayerParams { w: w1, w_d: w1_d },
        mu_head,
        logvar_head,
        r: dr,
    }))
}

/// What the logits are scored against.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Weighted binary cross-entropy.
    Reconstruction(ReconstructionTarget),
    /// `Σ c_ij · logit_ij`.
    Linear(Matrix),
}

impl Objective {
    pub fn loss_and_grad(&self, logits: &Matrix) -> Result<(f64, Matrix), GradError> {
        match self {
            Objective::Reconstruction(t) => t
                .loss_and_grad(logits)
                .map_err(|_| GradError::NonFiniteLoss),
            Objective::Linear(c) => Ok((c.hadamard(logits)?.sum(), c.clone())),
        }
    }
}

/// A fixed loss surface: encoder, decoded rows, objective and a frozen `ε`.
#[derive(Debug, Clone)]
pub struct GradProblem {
    pub encoder: Encoder,
    pub decoded: Range<usize>,
    pub objective: Objective,
    pub kl_weight: f64,
    pub eps: Matrix,
}

impl GradProblem {
    pub fn new(
        encoder: Encoder,
        decoded: Range<usize>,
        objective: Objective,
        kl_weight: f64,
        latent_dim: usize,
        noise_seed: u64,
        sample_noise: bool,
    ) -> Self {
        let n = encoder.n_nodes();
        let eps = if sample_noise {
            SeededRng::new(noise_seed).normal_matrix(n, latent_dim)
        } else {
            Matrix::zeros(n, latent_dim)
        };
        Self {
            encoder,
            decoded,
            objective,
            kl_weight,
            eps,
        }
    }

    pub fn loss(&self, params: &ModelParams) -> Result<f64, GradError> {
        let tape = forward(&self.encoder, params, Noise::Fixed(&self.eps), self.decoded.clone())?;
        let (obj, _) = self.objective.loss_and_grad(&tape.logits)?;
        let kl = if self.kl_weight != 0.0 {
            kl_loss(&tape.output.mu, &tape.output.logvar).map_err(|_| GradError::NonFiniteLoss)?
        } else {
            0.0
        };
        let l = obj + self.kl_weight * kl;
        if l.is_finite() {
            Ok(l)
        } else {
            Err(GradError::NonFiniteLoss)
        }
    }

    pub fn gradients(&self, params: &ModelParams) -> Result<(f64, Gradients), GradError> {
        let tape = forward(&self.encoder, params, Noise::Fixed(&self.eps), self.decoded.clone())?;
        let (obj, dlogits) = self.objective.loss_and_grad(&tape.logits)?;
        let kl = if self.kl_weight != 0.0 {
            kl_loss(&tape.output.mu, &tape.output.logvar).map_err(|_| GradError::NonFiniteLoss)?
        } else {
            0.0
        };
        let g = backward(
            &tape,
            &self.encoder.mp,
            self.encoder.activation,
            params,
            &dlogits,
            self.kl_weight,
        )?;
        Ok((obj + self.kl_weight * kl, g))
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub loss: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.max_rel_err))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

/// `|a − f| / max(1e-8, |a| + |f|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compares [`backward`] with central differences of step `epsilon` on every
/// parameter entry. The same `ε` draw is used for every loss evaluation.
pub fn finite_diff_check(
    problem: &GradProblem,
    params: &ModelParams,
    epsilon: f64,
) -> Result<GradCheckReport, GradError> {
    if !(epsilon.is_finite() && (1e-10..=1e-1).contains(&epsilon)) {
        return Err(GradError::DegenerateStep(epsilon));
    }
    let (loss, analytic) = problem.gradients(params)?;
    if !loss.is_finite() {
        return Err(GradError::NonFiniteLoss);
    }
    let mut blocks = Vec::with_capacity(7);
    let mut probe = params.clone();
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let len = params.blocks()[b].as_slice().len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for e in 0..len {
            let orig = params.blocks()[b].as_slice()[e];
            probe.blocks_mut()[b].as_mut_slice()[e] = orig + epsilon;
            let plus = problem.loss(&probe)?;
            probe.blocks_mut()[b].as_mut_slice()[e] = orig - epsilon;
            let minus = problem.loss(&probe)?;
            probe.blocks_mut()[b].as_mut_slice()[e] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.blocks()[b].as_slice()[e];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        blocks.push(BlockCheck {
            name: (*name).to_owned(),
            entries: len,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(GradCheckReport {
        epsilon,
        loss,
        blocks,
    })
}

/// Random six-node problem used by the gradient certification: three
/// decoded concept rows, weighted direct edges and two domain pairs.
///
/// Parameters are redrawn until every hidden pre-activation is at least
/// `1e-3` away from the ReLU kink.
pub fn six_node_fixture(seed: u64) -> (GradProblem, ModelParams) {
    const N: usize = 6;
    const D: usize = 5;
    const H1: usize = 4;
    const H2: usize = 3;
    let mut rng = SeededRng::new(seed);
    let x = rng.normal_matrix(N, D);

    let mut direct: Vec<Vec<(usize, f64)>> = vec![Vec::new(); N];
    for i in 0..N {
        for j in i + 1..N {
            if rng.unit() < 0.45 {
                let w = rng.uniform(0.3, 1.0);
                direct[i].push((j, w));
                direct[j].push((i, w));
            }
        }
    }
    for l in &mut direct {
        l.sort_by_key(|e| e.0);
    }
    // Rows 0..3 play source concepts, 3..5 target concepts, 5 a resource.
    let mut domain: Vec<Vec<usize>> = vec![Vec::new(); N];
    for (s, t) in [(0usize, 3usize), (2, 4)] {
        domain[s].push(t);
        domain[t].push(s);
    }
    let nb = Neighborhoods { direct, domain };
    let mp = MessagePassing::from_neighborhoods(&nb, false);
    let encoder = Encoder::new(mp, &x, Activation::Relu).expect("fixture shapes agree");

    let mut targets = Matrix::zeros(3, 3);
    targets[(0, 1)] = 1.0;
    for (i, j) in [(0, 2), (1, 0), (1, 2), (2, 0), (2, 1)] {
        if rng.unit() < 0.4 {
            targets[(i, j)] = 1.0;
        }
    }
    let objective = Objective::Reconstruction(
        ReconstructionTarget::from_adjacency(&targets, None).expect("fixture has a positive"),
    );

    let params = loop {
        let mut p = ModelParams::init(D, H1, H2, &mut rng);
        p.r = rng.normal_matrix(H2, H2).scale(0.5);
        // Scale logvar weights down so σ stays moderate.
        p.logvar_head.w = p.logvar_head.w.scale(0.5);
        p.logvar_head.w_d = p.logvar_head.w_d.scale(0.5);
        let (_, cache) = encoder.forward(&p, Noise::Mean).expect("finite fixture");
        if cache.pre_hidden.as_slice().iter().all(|v| v.abs() >= 1e-3) {
            break p;
        }
    };
    let kl_weight = 1.0 / N as f64;
    let problem = GradProblem::new(encoder, 0..3, objective, kl_weight, H2, seed ^ 0x5eed, true);
    (problem, params)
}
