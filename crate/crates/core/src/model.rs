//! Cross-domain GCN encoder with Gaussian heads and a DistMult decoder.
//!
//! One layer computes, for every node `i`,
//!
//! ```text
//! out_i = act( c_i · (Σ_{j∈N_i} w_ij h_j + h_i) W  +  d_i · (Σ_{k∈N_i^D} h_k) W_D )
//! ```
//!
//! where `c_i = 1 / (|N_i| + 1)` and `d_i = 1 / max(|N_i^D|, 1)` by default,
//! and both are `1` in exact-sum mode. The neighbour sums are formed before
//! the weight product, which is the same linear map as summing `h_j W`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    neighbor_lists, DomainNeighborMap, EdgeWeighting, HeteroGraph, NeighborDirection, Neighborhoods,
    TrainingView,
};
use crate::linalg::{glorot_init, LinalgError, Matrix, SeededRng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] LinalgError),
    #[error("non-finite values in {0} during the forward pass")]
    Diverged(&'static str),
    #[error("{rows} feature rows for {nodes} nodes")]
    NodeCount { rows: usize, nodes: usize },
    #[error("checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error("concept pair ({0}, {1}) is out of range")]
    PairOutOfRange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, m: &Matrix) -> Matrix {
        match self {
            Activation::Relu => m.map(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Identity => m.clone(),
        }
    }

    /// Derivative evaluated at a pre-activation; ReLU uses 0 at 0.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderOptions {
    /// Use the literal unnormalised sums.
    pub exact_sum: bool,
    pub weighting: EdgeWeighting,
    pub dn_direction: NeighborDirection,
    pub hidden_activation: Activation,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        Self {
            exact_sum: false,
            weighting: EdgeWeighting::Weighted,
            dn_direction: NeighborDirection::Both,
            hidden_activation: Activation::Relu,
        }
    }
}

/// Sparse row operator `out_i = Σ coef_ij · h_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Propagation {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    pub fn apply(&self, h: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows.len(), h.cols());
        for (i, row) in self.rows.iter().enumerate() {
            let o = out.row_mut(i);
            for &(j, c) in row {
                for (a, &b) in o.iter_mut().zip(h.row(j)) {
                    *a += c * b;
                }
            }
        }
        out
    }

    /// `Pᵀ · g`.
    pub fn apply_transpose(&self, g: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows.len(), g.cols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, c) in row {
                let src = g.row(i).to_vec();
                for (a, b) in out.row_mut(j).iter_mut().zip(src) {
                    *a += c * b;
                }
            }
        }
        out
    }
}

/// The two aggregation operators of a cross-domain layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagePassing {
    pub direct: Propagation,
    pub domain: Propagation,
}

impl MessagePassing {
    pub fn from_neighborhoods(nb: &Neighborhoods, exact_sum: bool) -> Self {
        let direct = nb
            .direct
            .iter()
            .enumerate()
            .map(|(i, list)| {
                let c = if exact_sum {
                    1.0
                } else {
                    1.0 / (list.len() as f64 + 1.0)
                };
                let mut row = Vec::with_capacity(list.len() + 1);
                row.push((i, c));
                row.extend(list.iter().map(|&(j, w)| (j, w * c)));
                row
            })
            .collect();
        let domain = nb
            .domain
            .iter()
            .map(|list| {
                let d = if exact_sum {
                    1.0
                } else {
                    1.0 / (list.len().max(1) as f64)
                };
                list.iter().map(|&k| (k, d)).collect()
            })
            .collect();
        Self {
            direct: Propagation { rows: direct },
            domain: Propagation { rows: domain },
        }
    }

    pub fn new(view: TrainingView<'_>, map: &DomainNeighborMap, opts: &EncoderOptions) -> Self {
        let nb = neighbor_lists(view, map, opts.dn_direction, opts.weighting);
        Self::from_neighborhoods(&nb, opts.exact_sum)
    }

    pub fn has_domain_edges(&self) -> bool {
        !self.domain.is_zero()
    }
}

/// `W` and `W_D` of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w: Matrix,
    pub w_d: Matrix,
}

impl LayerParams {
    pub fn glorot(d_in: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            w: glorot_init(d_in, d_out, rng),
            w_d: glorot_init(d_in, d_out, rng),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Matrix::zeros(d_in, d_out),
            w_d: Matrix::zeros(d_in, d_out),
        }
    }
}

/// Every trainable block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layer1: LayerParams,
    pub mu_head: LayerParams,
    pub logvar_head: LayerParams,
    pub r: Matrix,
}

pub const BLOCK_NAMES: [&str; 7] = [
    "layer1.w",
    "layer1.w_d",
    "mu.w",
    "mu.w_d",
    "logvar.w",
    "logvar.w_d",
    "r",
];

impl ModelParams {
    /// Glorot-uniform layers and an identity relation matrix, so the decoder
    /// starts as an inner product.
    pub fn init(d: usize, h1: usize, h2: usize, rng: &mut SeededRng) -> Self {
        Self {
            layer1: LayerParams::glorot(d, h1, rng),
            mu_head: LayerParams::glorot(h1, h2, rng),
            logvar_head: LayerParams::glorot(h1, h2, rng),
            r: Matrix::identity(h2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            layer1: LayerParams {
                w: z(&self.layer1.w),
                w_d: z(&self.layer1.w_d),
            },
            mu_head: LayerParams {
                w: z(&self.mu_head.w),
                w_d: z(&self.mu_head.w_d),
            },
            logvar_head: LayerParams {
                w: z(&self.logvar_head.w),
                w_d: z(&self.logvar_head.w_d),
            },
            r: z(&self.r),
        }
    }

    /// Blocks in [`BLOCK_NAMES`] order.
    pub fn blocks(&self) -> [&Matrix; 7] {
        [
            &self.layer1.w,
            &self.layer1.w_d,
            &self.mu_head.w,
            &self.mu_head.w_d,
            &self.logvar_head.w,
            &self.logvar_head.w_d,
            &self.r,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; 7] {
        [
            &mut self.layer1.w,
            &mut self.layer1.w_d,
            &mut self.mu_head.w,
            &mut self.mu_head.w_d,
            &mut self.logvar_head.w,
            &mut self.logvar_head.w_d,
            &mut self.r,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|m| m.is_finite())
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.w.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.r.rows()
    }

    /// Text checkpoint: a header line, then for each block a
    /// `name rows cols` line followed by one line per row. Values use
    /// shortest round-trip scientific notation, so reading is lossless.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("cdvgae-checkpoint 1\n");
        for (name, m) in BLOCK_NAMES.iter().zip(self.blocks()) {
            let _ = writeln!(s, "{name} {} {}", m.rows(), m.cols());
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, ModelError> {
        let err = |line: usize, reason: String| ModelError::Checkpoint { line, reason };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "cdvgae-checkpoint 1")) => {}
            Some((n, other)) => return Err(err(n, format!("unexpected header `{other}`"))),
            None => return Err(err(1, "empty checkpoint".into())),
        }
        let mut blocks = Vec::with_capacity(7);
        for expected in BLOCK_NAMES {
            let (n, head) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing block {expected}")))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != expected {
                return Err(err(n, format!("expected `{expected} rows cols`")));
            }
            let rows: usize = parts[1].parse().map_err(|_| err(n, "bad row count".into()))?;
            let cols: usize = parts[2].parse().map_err(|_| err(n, "bad column count".into()))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, l) = lines
                    .next()
                    .ok_or_else(|| err(0, format!("block {expected} truncated")))?;
                let before = data.len();
                for f in l.split_whitespace() {
                    data.push(
                        f.parse::<f64>()
                            .map_err(|_| err(n, format!("bad value `{f}`")))?,
                    );
                }
                if data.len() - before != cols {
                    return Err(err(n, format!("expected {cols} values")));
                }
            }
            blocks.push(Matrix::from_vec(rows, cols, data)?);
        }
        let mut it = blocks.into_iter();
        let mut next = || it.next().expect("seven blocks parsed");
        let params = Self {
            layer1: LayerParams {
                w: next(),
                w_d: next(),
            },
            mu_head: LayerParams {
                w: next(),
                w_d: next(),
            },
            logvar_head: LayerParams {
                w: next(),
                w_d: next(),
            },
            r: next(),
        };
        if !params.is_finite() {
            return Err(err(0, "non-finite parameter".into()));
        }
        Ok(params)
    }
}

/// One cross-domain layer on raw node states.
pub fn cd_gcn_layer(
    h: &Matrix,
    mp: &MessagePassing,
    params: &LayerParams,
    activation: Activation,
) -> Result<Matrix, ModelError> {
    if h.rows() != mp.direct.n() {
        return Err(ModelError::NodeCount {
            rows: h.rows(),
            nodes: mp.direct.n(),
        });
    }
    let pre = layer_pre(&mp.direct.apply(h), domain_input(mp, h).as_ref(), params)?;
    Ok(activation.apply(&pre))
}

fn domain_input(mp: &MessagePassing, h: &Matrix) -> Option<Matrix> {
    mp.has_domain_edges().then(|| mp.domain.apply(h))
}

fn layer_pre(agg: &Matrix, dom: Option<&Matrix>, p: &LayerParams) -> Result<Matrix, ModelError> {
    let mut pre = agg.matmul(&p.w)?;
    if let Some(d) = dom {
        pre.add_assign(&d.matmul(&p.w_d)?)?;
    }
    Ok(pre)
}

/// How latents are drawn from the Gaussian heads.
pub enum Noise<'a> {
    /// `ε ~ N(0, 1)` from the stream.
    Sample(&'a mut SeededRng),
    /// `z = μ`.
    Mean,
    /// A caller-supplied `ε`.
    Fixed(&'a Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Matrix,
    pub mu: Matrix,
    pub logvar: Matrix,
    pub eps: Matrix,
    pub z: Matrix,
}

/// Forward intermediates the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub agg_input: Matrix,
    pub dom_input: Option<Matrix>,
    pub pre_hidden: Matrix,
    pub agg_hidden: Matrix,
    pub dom_hidden: Option<Matrix>,
}

/// A message-passing structure bound to a fixed feature matrix. Input
/// aggregations are computed once.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub mp: MessagePassing,
    pub activation: Activation,
    agg_input: Matrix,
    dom_input: Option<Matrix>,
}

impl Encoder {
    pub fn new(mp: MessagePassing, features: &Matrix, activation: Activation) -> Result<Self, ModelError> {
        if features.rows() != mp.direct.n() {
            return Err(ModelError::NodeCount {
                rows: features.rows(),
                nodes: mp.direct.n(),
            });
        }
        Ok(Self {
            agg_input: mp.direct.apply(features),
            dom_input: domain_input(&mp, features),
            mp,
            activation,
        })
    }

    pub fn for_graph(
        graph: &HeteroGraph,
        map: &DomainNeighborMap,
        opts: &EncoderOptions,
    ) -> Result<Self, ModelError> {
        let view = graph.training_view();
        let mp = MessagePassing::new(view, map, opts);
        Self::new(mp, view.features, opts.hidden_activation)
    }

    pub fn n_nodes(&self) -> usize {
        self.agg_input.rows()
    }

    pub fn forward(
        &self,
        params: &ModelParams,
        noise: Noise<'_>,
    ) -> Result<(EncoderOutput, ForwardCache), ModelError> {
        let pre_hidden = layer_pre(&self.agg_input, self.dom_input.as_ref(), &params.layer1)?;
        let hidden = self.activation.apply(&pre_hidden);
        if !hidden.is_finite() {
            return Err(ModelError::Diverged("hidden layer"));
        }
        let agg_hidden = self.mp.direct.apply(&hidden);
        let dom_hidden = domain_input(&self.mp, &hidden);
        let mu = layer_pre(&agg_hidden, dom_hidden.as_ref(), &params.mu_head)?;
        let logvar = layer_pre(&agg_hidden, dom_hidden.as_ref(), &params.logvar_head)?;
        if !mu.is_finite() || !logvar.is_finite() {
            return Err(ModelError::Diverged("latent heads"));
        }
        let eps = match noise {
            Noise::Sample(rng) => rng.normal_matrix(mu.rows(), mu.cols()),
            Noise::Mean => Matrix::zeros(mu.rows(), mu.cols()),
            Noise::Fixed(e) => {
                if e.shape() != mu.shape() {
                    return Err(LinalgError::ShapeMismatch {
                        op: "noise",
                        left: e.shape(),
                        right: mu.shape(),
                    }
                    .into());
                }
                e.clone()
            }
        };
        let sigma = logvar.map(|v| (0.5 * v).exp());
        let z = mu.add(&sigma.hadamard(&eps)?)?;
        if !z.is_finite() {
            return Err(ModelError::Diverged("latent sample"));
        }
        Ok((
            EncoderOutput {
                hidden,
                mu,
                logvar,
                eps,
                z,
            },
            ForwardCache {
                agg_input: self.agg_input.clone(),
                dom_input: self.dom_input.clone(),
                pre_hidden,
                agg_hidden,
                dom_hidden,
            },
        ))
    }

    pub fn encode(&self, params: &ModelParams, noise: Noise<'_>) -> Result<EncoderOutput, ModelError> {
        self.forward(params, noise).map(|(o, _)| o)
    }
}

/// Two-layer cross-domain encoding of `graph` with sampled latents.
pub fn encode(
    graph: &HeteroGraph,
    domain_map: &DomainNeighborMap,
    params: &ModelParams,
    opts: &EncoderOptions,
    rng: &mut SeededRng,
) -> Result<EncoderOutput, ModelError> {
    Encoder::for_graph(graph, domain_map, opts)?.encode(params, Noise::Sample(rng))
}

/// The plain VGAE encoder: [`encode`] without domain neighbours.
pub fn vgae_baseline_encode(
    graph: &HeteroGraph,
    params: &ModelParams,
    opts: &EncoderOptions,
    rng: &mut SeededRng,
) -> Result<EncoderOutput, ModelError> {
    encode(graph, &DomainNeighborMap::empty(), params, opts, rng)
}

/// `logits[i][j] = z_a[i] · R · z_b[j]ᵀ`.
pub fn distmult_scores(z_a: &Matrix, z_b: &Matrix, r: &Matrix) -> Result<Matrix, ModelError> {
    Ok(z_a.matmul(r)?.matmul_t(z_b)?)
}
