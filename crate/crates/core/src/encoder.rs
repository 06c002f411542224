//! Transformer encoder with word-level positional encoding, masked multi-head
//! self-attention, and two classification heads.
//!
//! Pre-norm blocks, GELU feed-forward, learned absolute positional embeddings
//! indexed by word position so all subwords of a word share one position
//! vector. Attention scores at masked-out pairs are excluded before
//! normalization, so invisible tokens contribute exactly zero. The forward
//! pass records a trace from which [`backward`] computes exact analytic
//! gradients of the loss with respect to every parameter.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::AttentionMask;
use crate::scalar::Scalar;
use crate::tags::{repair_iob, NcTag, PunctTag, NC_CLASSES, PUNCT_CLASSES};
use crate::tensor::{axpy, dot, linear, linear_backward_input, linear_backward_params, Matrix};
use crate::tokenizer::{SubwordSequence, TokenLabels};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("position overflow: need {needed} positions but max_positions = {max}")]
    PositionOverflow { needed: usize, max: usize },
    #[error("empty loss: no unmasked label positions")]
    EmptyLoss,
    #[error("stale trace: trace version {trace} but params version {params}")]
    StaleTrace { trace: u64, params: u64 },
    #[error("backward requires a train-mode trace")]
    EvalTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub nc_classes: usize,
    pub punct_classes: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Small configuration used by the CLI defaults.
    pub fn tiny(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 4,
            model_dim: 64,
            ffn_dim: 128,
            max_positions: 96,
            vocab_size,
            nc_classes: NC_CLASSES,
            punct_classes: PUNCT_CLASSES,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.model_dim % self.heads != 0 {
            return Err(EncoderError::Shape(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EncoderError::Shape(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub ln1: NormParams<S>,
    pub wq: Matrix<S>,
    pub bq: Vec<S>,
    pub wk: Matrix<S>,
    pub bk: Vec<S>,
    pub wv: Matrix<S>,
    pub bv: Vec<S>,
    pub wo: Matrix<S>,
    pub bo: Vec<S>,
    pub ln2: NormParams<S>,
    pub w1: Matrix<S>,
    pub b1: Vec<S>,
    pub w2: Matrix<S>,
    pub b2: Vec<S>,
}

/// Dropout marker plus dense projection.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<S> {
    pub w: Matrix<S>,
    pub b: Vec<S>,
}

/// All trainable tensors, without optimizer metadata. Gradients reuse this
/// shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S> {
    pub tok_emb: Matrix<S>,
    pub pos_emb: Matrix<S>,
    pub layers: Vec<LayerParams<S>>,
    pub final_norm: NormParams<S>,
    pub nc_head: HeadParams<S>,
    pub punct_head: HeadParams<S>,
}

/// Trainable model: configuration, parameters, and a version counter bumped
/// on every optimizer step so stale traces can be rejected.
#[derive(Debug, Clone)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub version: u64,
    pub set: ParamSet<S>,
}

fn gauss(rng: &mut impl Rng, std: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_matrix<S: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix<S> {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = S::from_f64_c(gauss(rng, std));
    }
    m
}

impl<S: Scalar> NormParams<S> {
    fn ones(dim: usize) -> NormParams<S> {
        NormParams {
            gamma: vec![S::one(); dim],
            beta: vec![S::zero(); dim],
        }
    }

    fn zeros(dim: usize) -> NormParams<S> {
        NormParams {
            gamma: vec![S::zero(); dim],
            beta: vec![S::zero(); dim],
        }
    }
}

const INIT_STD: f64 = 0.02;

pub fn init_params<S: Scalar>(config: &ModelConfig, rng: &mut impl Rng) -> ModelParams<S> {
    config.validate().expect("invalid model config");
    let d = config.model_dim;
    let layers = (0..config.layers)
        .map(|_| LayerParams {
            ln1: NormParams::ones(d),
            wq: random_matrix(d, d, INIT_STD, rng),
            bq: vec![S::zero(); d],
            wk: random_matrix(d, d, INIT_STD, rng),
            bk: vec![S::zero(); d],
            wv: random_matrix(d, d, INIT_STD, rng),
            bv: vec![S::zero(); d],
            wo: random_matrix(d, d, INIT_STD, rng),
            bo: vec![S::zero(); d],
            ln2: NormParams::ones(d),
            w1: random_matrix(config.ffn_dim, d, INIT_STD, rng),
            b1: vec![S::zero(); config.ffn_dim],
            w2: random_matrix(d, config.ffn_dim, INIT_STD, rng),
            b2: vec![S::zero(); d],
        })
        .collect();
    ModelParams {
        config: config.clone(),
        version: 0,
        set: ParamSet {
            tok_emb: random_matrix(config.vocab_size, d, INIT_STD, rng),
            pos_emb: random_matrix(config.max_positions, d, INIT_STD, rng),
            layers,
            final_norm: NormParams::ones(d),
            nc_head: HeadParams {
                w: random_matrix(config.nc_classes, d, INIT_STD, rng),
                b: vec![S::zero(); config.nc_classes],
            },
            punct_head: HeadParams {
                w: random_matrix(config.punct_classes, d, INIT_STD, rng),
                b: vec![S::zero(); config.punct_classes],
            },
        },
    }
}

impl<S: Scalar> ModelParams<S> {
    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Convert parameters to a different scalar type.
    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let mut out = ParamSet::zeros(&self.config);
        let mut flat = Vec::new();
        self.set.append_flat(&mut flat);
        let flat: Vec<T> = flat
            .into_iter()
            .map(|v| T::from_f64_c(v.to_f64().unwrap()))
            .collect();
        out.assign_from_flat(&flat);
        ModelParams {
            config: self.config.clone(),
            version: self.version,
            set: out,
        }
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn zeros(config: &ModelConfig) -> ParamSet<S> {
        let d = config.model_dim;
        ParamSet {
            tok_emb: Matrix::zeros(config.vocab_size, d),
            pos_emb: Matrix::zeros(config.max_positions, d),
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    ln1: NormParams::zeros(d),
                    wq: Matrix::zeros(d, d),
                    bq: vec![S::zero(); d],
                    wk: Matrix::zeros(d, d),
                    bk: vec![S::zero(); d],
                    wv: Matrix::zeros(d, d),
                    bv: vec![S::zero(); d],
                    wo: Matrix::zeros(d, d),
                    bo: vec![S::zero(); d],
                    ln2: NormParams::zeros(d),
                    w1: Matrix::zeros(config.ffn_dim, d),
                    b1: vec![S::zero(); config.ffn_dim],
                    w2: Matrix::zeros(d, config.ffn_dim),
                    b2: vec![S::zero(); d],
                })
                .collect(),
            final_norm: NormParams::zeros(d),
            nc_head: HeadParams {
                w: Matrix::zeros(config.nc_classes, d),
                b: vec![S::zero(); config.nc_classes],
            },
            punct_head: HeadParams {
                w: Matrix::zeros(config.punct_classes, d),
                b: vec![S::zero(); config.punct_classes],
            },
        }
    }

    /// Visit every tensor in canonical order as `(name, rows, cols, data)`.
    /// Vectors are reported with `rows = 1`.
    pub fn visit(&self, f: &mut dyn FnMut(&str, usize, usize, &[S])) {
        f("tok_emb", self.tok_emb.rows, self.tok_emb.cols, &self.tok_emb.data);
        f("pos_emb", self.pos_emb.rows, self.pos_emb.cols, &self.pos_emb.data);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut emit = |suffix: &str, rows: usize, cols: usize, data: &[S]| {
                f(&format!("layer{l}.{suffix}"), rows, cols, data)
            };
            emit("ln1.gamma", 1, layer.ln1.gamma.len(), &layer.ln1.gamma);
            emit("ln1.beta", 1, layer.ln1.beta.len(), &layer.ln1.beta);
            emit("wq", layer.wq.rows, layer.wq.cols, &layer.wq.data);
            emit("bq", 1, layer.bq.len(), &layer.bq);
            emit("wk", layer.wk.rows, layer.wk.cols, &layer.wk.data);
            emit("bk", 1, layer.bk.len(), &layer.bk);
            emit("wv", layer.wv.rows, layer.wv.cols, &layer.wv.data);
            emit("bv", 1, layer.bv.len(), &layer.bv);
            emit("wo", layer.wo.rows, layer.wo.cols, &layer.wo.data);
            emit("bo", 1, layer.bo.len(), &layer.bo);
            emit("ln2.gamma", 1, layer.ln2.gamma.len(), &layer.ln2.gamma);
            emit("ln2.beta", 1, layer.ln2.beta.len(), &layer.ln2.beta);
            emit("w1", layer.w1.rows, layer.w1.cols, &layer.w1.data);
            emit("b1", 1, layer.b1.len(), &layer.b1);
            emit("w2", layer.w2.rows, layer.w2.cols, &layer.w2.data);
            emit("b2", 1, layer.b2.len(), &layer.b2);
        }
        f("final_norm.gamma", 1, self.final_norm.gamma.len(), &self.final_norm.gamma);
        f("final_norm.beta", 1, self.final_norm.beta.len(), &self.final_norm.beta);
        f("nc_head.w", self.nc_head.w.rows, self.nc_head.w.cols, &self.nc_head.w.data);
        f("nc_head.b", 1, self.nc_head.b.len(), &self.nc_head.b);
        f("punct_head.w", self.punct_head.w.rows, self.punct_head.w.cols, &self.punct_head.w.data);
        f("punct_head.b", 1, self.punct_head.b.len(), &self.punct_head.b);
    }

    fn slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = Vec::new();
        out.push(&mut self.tok_emb.data);
        out.push(&mut self.pos_emb.data);
        for layer in &mut self.layers {
            out.push(&mut layer.ln1.gamma);
            out.push(&mut layer.ln1.beta);
            out.push(&mut layer.wq.data);
            out.push(&mut layer.bq);
            out.push(&mut layer.wk.data);
            out.push(&mut layer.bk);
            out.push(&mut layer.wv.data);
            out.push(&mut layer.bv);
            out.push(&mut layer.wo.data);
            out.push(&mut layer.bo);
            out.push(&mut layer.ln2.gamma);
            out.push(&mut layer.ln2.beta);
            out.push(&mut layer.w1.data);
            out.push(&mut layer.b1);
            out.push(&mut layer.w2.data);
            out.push(&mut layer.b2);
        }
        out.push(&mut self.final_norm.gamma);
        out.push(&mut self.final_norm.beta);
        out.push(&mut self.nc_head.w.data);
        out.push(&mut self.nc_head.b);
        out.push(&mut self.punct_head.w.data);
        out.push(&mut self.punct_head.b);
        out
    }

    /// Total number of scalar parameters.
    pub fn flat_len(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, r, c, _| n += r * c);
        n
    }

    /// Append all parameters in canonical order.
    pub fn append_flat(&self, out: &mut Vec<S>) {
        self.visit(&mut |_, _, _, data| out.extend_from_slice(data));
    }

    /// Overwrite all parameters from a canonical-order flat slice.
    pub fn assign_from_flat(&mut self, data: &[S]) {
        let mut offset = 0;
        for slice in self.slices_mut() {
            slice.copy_from_slice(&data[offset..offset + slice.len()]);
            offset += slice.len();
        }
        assert_eq!(offset, data.len(), "flat length mismatch");
    }

    /// `self += alpha * other`, elementwise over all tensors.
    pub fn add_scaled(&mut self, other: &ParamSet<S>, alpha: S) {
        let mut flat = Vec::with_capacity(self.flat_len());
        other.append_flat(&mut flat);
        let mut offset = 0;
        for slice in self.slices_mut() {
            axpy(alpha, &flat[offset..offset + slice.len()], slice);
            offset += slice.len();
        }
    }

    pub fn scale(&mut self, alpha: S) {
        for slice in self.slices_mut() {
            for v in slice.iter_mut() {
                *v = *v * alpha;
            }
        }
    }

    pub fn l2_norm(&self) -> S {
        let mut acc = S::zero();
        self.visit(&mut |_, _, _, data| {
            for &v in data {
                acc = acc + v * v;
            }
        });
        acc.sqrt()
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct NormTrace<S> {
    /// Normalized pre-affine values.
    xhat: Matrix<S>,
    /// Per-token reciprocal standard deviation.
    rstd: Vec<S>,
}

#[derive(Debug, Clone)]
struct LayerTrace<S> {
    ln1: NormTrace<S>,
    a: Matrix<S>,
    q: Matrix<S>,
    k: Matrix<S>,
    v: Matrix<S>,
    /// Per-head attention probabilities, zero at masked pairs.
    attn: Vec<Matrix<S>>,
    ctx: Matrix<S>,
    ln2: NormTrace<S>,
    m: Matrix<S>,
    f1: Matrix<S>,
    f1a: Matrix<S>,
    ffn_keep: Option<Matrix<S>>,
}

/// Cached activations sufficient to compute exact gradients of the loss.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    params_version: u64,
    train_mode: bool,
    seq: SubwordSequence,
    position_offset: usize,
    emb_keep: Option<Matrix<S>>,
    layers: Vec<LayerTrace<S>>,
    final_norm: NormTrace<S>,
    nc_in: Matrix<S>,
    punct_in: Matrix<S>,
    nc_keep: Option<Matrix<S>>,
    punct_keep: Option<Matrix<S>>,
    nc_probs: Matrix<S>,
    punct_probs: Matrix<S>,
}

impl<S> ForwardTrace<S> {
    pub fn token_count(&self) -> usize {
        self.seq.len()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    pub nc_logits: Matrix<S>,
    pub punct_logits: Matrix<S>,
    pub trace: ForwardTrace<S>,
}

const LN_EPS: f64 = 1e-5;

fn layer_norm<S: Scalar>(x: &Matrix<S>, p: &NormParams<S>) -> (Matrix<S>, NormTrace<S>) {
    let d = x.cols;
    let inv_d = S::from_f64_c(1.0 / d as f64);
    let eps = S::from_f64_c(LN_EPS);
    let mut out = Matrix::zeros(x.rows, d);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for t in 0..x.rows {
        let row = x.row(t);
        let mut mean = S::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = S::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let r = (var + eps).sqrt().recip();
        rstd.push(r);
        let xh = xhat.row_mut(t);
        let o = out.row_mut(t);
        for i in 0..d {
            xh[i] = (row[i] - mean) * r;
            o[i] = xh[i] * p.gamma[i] + p.beta[i];
        }
    }
    (out, NormTrace { xhat, rstd })
}

/// Backward through layer norm; returns dx and accumulates dgamma/dbeta.
fn layer_norm_backward<S: Scalar>(
    dy: &Matrix<S>,
    trace: &NormTrace<S>,
    p: &NormParams<S>,
    dgamma: &mut [S],
    dbeta: &mut [S],
) -> Matrix<S> {
    let d = dy.cols;
    let inv_d = S::from_f64_c(1.0 / d as f64);
    let mut dx = Matrix::zeros(dy.rows, d);
    for t in 0..dy.rows {
        let dyr = dy.row(t);
        let xh = trace.xhat.row(t);
        let r = trace.rstd[t];
        let mut sum_dxhat = S::zero();
        let mut sum_dxhat_xhat = S::zero();
        for i in 0..d {
            let g = dyr[i];
            dgamma[i] = dgamma[i] + g * xh[i];
            dbeta[i] = dbeta[i] + g;
            let dxh = g * p.gamma[i];
            sum_dxhat = sum_dxhat + dxh;
            sum_dxhat_xhat = sum_dxhat_xhat + dxh * xh[i];
        }
        let mean_dxhat = sum_dxhat * inv_d;
        let mean_dxhat_xhat = sum_dxhat_xhat * inv_d;
        let dxr = dx.row_mut(t);
        for i in 0..d {
            let dxh = dyr[i] * p.gamma[i];
            dxr[i] = r * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64_c((2.0 / std::f64::consts::PI).sqrt());
    let k = S::from_f64_c(0.044715);
    let half = S::from_f64_c(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (S::one() + u.tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f64_c((2.0 / std::f64::consts::PI).sqrt());
    let k = S::from_f64_c(0.044715);
    let half = S::from_f64_c(0.5);
    let three = S::from_f64_c(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * c * (S::one() + three * k * x * x)
}

/// Inverted-dropout multiplier matrix: `1/(1-p)` for kept entries, 0 for
/// dropped ones.
fn dropout_keep<S: Scalar>(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Matrix<S> {
    let scale = S::from_f64_c(1.0 / (1.0 - rate));
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = if rng.gen_bool(rate) { S::zero() } else { scale };
    }
    m
}

/// Run the encoder over one tokenized sequence.
///
/// The positional embedding of token i is indexed by `word_ids[i] +
/// position_offset`, so all subwords of a word share one position vector.
/// Dropout is active only in train mode; eval calls never touch the rng.
pub fn forward<S: Scalar>(
    params: &ModelParams<S>,
    seq: &SubwordSequence,
    mask: &AttentionMask,
    train_mode: bool,
    position_offset: usize,
    rng: &mut impl Rng,
) -> Result<ForwardOutput<S>, EncoderError> {
    let cfg = &params.config;
    let n = seq.len();
    if n == 0 {
        return Err(EncoderError::Shape("empty sequence".to_string()));
    }
    if mask.len() != n {
        return Err(EncoderError::Shape(format!(
            "mask is {}x{} but sequence has {} tokens",
            mask.len(),
            mask.len(),
            n
        )));
    }
    let needed = position_offset + seq.word_count();
    if needed > cfg.max_positions {
        return Err(EncoderError::PositionOverflow {
            needed,
            max: cfg.max_positions,
        });
    }
    for &id in &seq.token_ids {
        if id as usize >= cfg.vocab_size {
            return Err(EncoderError::Shape(format!(
                "token id {id} outside vocab of size {}",
                cfg.vocab_size
            )));
        }
    }

    let d = cfg.model_dim;
    let heads = cfg.heads;
    let dh = d / heads;
    let set = &params.set;
    let drop = train_mode && cfg.dropout_rate > 0.0;

    // Embeddings
    let mut h = Matrix::zeros(n, d);
    for i in 0..n {
        let tok = set.tok_emb.row(seq.token_ids[i] as usize);
        let pos = set.pos_emb.row(seq.word_ids[i] + position_offset);
        let row = h.row_mut(i);
        for x in 0..d {
            row[x] = tok[x] + pos[x];
        }
    }
    let emb_keep = drop.then(|| dropout_keep(n, d, cfg.dropout_rate, rng));
    if let Some(keep) = &emb_keep {
        h.hadamard_assign(keep);
    }

    let scale = S::from_f64_c(1.0 / (dh as f64).sqrt());
    let mut layer_traces = Vec::with_capacity(cfg.layers);
    for layer in &set.layers {
        let (a, ln1) = layer_norm(&h, &layer.ln1);
        let q = linear(&a, &layer.wq, &layer.bq);
        let k = linear(&a, &layer.wk, &layer.bk);
        let v = linear(&a, &layer.wv, &layer.bv);

        let mut ctx = Matrix::zeros(n, d);
        let mut attn = Vec::with_capacity(heads);
        for hd in 0..heads {
            let lo = hd * dh;
            let hi = lo + dh;
            let mut probs = Matrix::zeros(n, n);
            for i in 0..n {
                let qi = &q.row(i)[lo..hi];
                let vis = mask.row(i);
                // Scores over visible pairs only; max-subtraction for
                // stability uses the visible maximum.
                let mut max = S::neg_infinity();
                let mut scores = vec![S::zero(); n];
                for j in 0..n {
                    if vis[j] {
                        let s = dot(qi, &k.row(j)[lo..hi]) * scale;
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                }
                let mut denom = S::zero();
                for j in 0..n {
                    if vis[j] {
                        let e = (scores[j] - max).exp();
                        scores[j] = e;
                        denom = denom + e;
                    }
                }
                let inv = denom.recip();
                let prow = probs.row_mut(i);
                let crow = &mut ctx.row_mut(i)[lo..hi];
                for j in 0..n {
                    if vis[j] {
                        let p = scores[j] * inv;
                        prow[j] = p;
                        axpy(p, &v.row(j)[lo..hi], crow);
                    }
                }
            }
            attn.push(probs);
        }
        let attn_out = linear(&ctx, &layer.wo, &layer.bo);
        h.add_assign(&attn_out);

        let (m, ln2) = layer_norm(&h, &layer.ln2);
        let f1 = linear(&m, &layer.w1, &layer.b1);
        let mut f1a = Matrix::zeros(n, cfg.ffn_dim);
        for idx in 0..f1.data.len() {
            f1a.data[idx] = gelu(f1.data[idx]);
        }
        let ffn_keep = drop.then(|| dropout_keep(n, cfg.ffn_dim, cfg.dropout_rate, rng));
        if let Some(keep) = &ffn_keep {
            f1a.hadamard_assign(keep);
        }
        let f2 = linear(&f1a, &layer.w2, &layer.b2);
        h.add_assign(&f2);

        layer_traces.push(LayerTrace {
            ln1,
            a,
            q,
            k,
            v,
            attn,
            ctx,
            ln2,
            m,
            f1,
            f1a,
            ffn_keep,
        });
    }

    let (hf, final_norm) = layer_norm(&h, &set.final_norm);
    let nc_keep = drop.then(|| dropout_keep(n, d, cfg.dropout_rate, rng));
    let punct_keep = drop.then(|| dropout_keep(n, d, cfg.dropout_rate, rng));
    let mut nc_in = hf.clone();
    if let Some(keep) = &nc_keep {
        nc_in.hadamard_assign(keep);
    }
    let mut punct_in = hf;
    if let Some(keep) = &punct_keep {
        punct_in.hadamard_assign(keep);
    }
    let nc_logits = linear(&nc_in, &set.nc_head.w, &set.nc_head.b);
    let punct_logits = linear(&punct_in, &set.punct_head.w, &set.punct_head.b);

    let nc_probs = softmax_rows(&nc_logits);
    let punct_probs = softmax_rows(&punct_logits);

    Ok(ForwardOutput {
        nc_logits,
        punct_logits,
        trace: ForwardTrace {
            params_version: params.version,
            train_mode,
            seq: seq.clone(),
            position_offset,
            emb_keep,
            layers: layer_traces,
            final_norm,
            nc_in,
            punct_in,
            nc_keep,
            punct_keep,
            nc_probs,
            punct_probs,
        },
    })
}

fn softmax_rows<S: Scalar>(logits: &Matrix<S>) -> Matrix<S> {
    let mut out = Matrix::zeros(logits.rows, logits.cols);
    for t in 0..logits.rows {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        let o = out.row_mut(t);
        for (i, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            o[i] = e;
            denom = denom + e;
        }
        let inv = denom.recip();
        for v in o.iter_mut() {
            *v = *v * inv;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

fn masked_cross_entropy<S: Scalar>(
    logits: &Matrix<S>,
    labels: &[u32],
    loss_mask: &[bool],
) -> (S, usize) {
    let mut total = S::zero();
    let mut count = 0;
    for t in 0..logits.rows {
        if !loss_mask[t] {
            continue;
        }
        let row = logits.row(t);
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for &v in row {
            denom = denom + (v - max).exp();
        }
        let label = labels[t] as usize;
        total = total + denom.ln() + max - row[label];
        count += 1;
    }
    (total, count)
}

/// Total loss: per-task mean categorical cross-entropy over loss-masked token
/// positions, summed over the two tasks.
pub fn loss<S: Scalar>(
    nc_logits: &Matrix<S>,
    punct_logits: &Matrix<S>,
    labels: &TokenLabels,
) -> Result<S, EncoderError> {
    if labels.loss_mask.len() != nc_logits.rows || punct_logits.rows != nc_logits.rows {
        return Err(EncoderError::Shape(format!(
            "labels cover {} tokens but logits have {}",
            labels.loss_mask.len(),
            nc_logits.rows
        )));
    }
    let (nc_total, nc_count) = masked_cross_entropy(nc_logits, &labels.nc, &labels.loss_mask);
    let (p_total, p_count) = masked_cross_entropy(punct_logits, &labels.punct, &labels.loss_mask);
    if nc_count == 0 || p_count == 0 {
        return Err(EncoderError::EmptyLoss);
    }
    Ok(nc_total / S::from_f64_c(nc_count as f64) + p_total / S::from_f64_c(p_count as f64))
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Exact analytic gradient of [`loss`] with respect to every parameter.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    trace: &ForwardTrace<S>,
    labels: &TokenLabels,
) -> Result<ParamSet<S>, EncoderError> {
    if trace.params_version != params.version {
        return Err(EncoderError::StaleTrace {
            trace: trace.params_version,
            params: params.version,
        });
    }
    if !trace.train_mode {
        return Err(EncoderError::EvalTrace);
    }
    let n = trace.seq.len();
    if labels.loss_mask.len() != n {
        return Err(EncoderError::Shape(format!(
            "labels cover {} tokens but trace has {}",
            labels.loss_mask.len(),
            n
        )));
    }
    let count = labels.loss_count();
    if count == 0 {
        return Err(EncoderError::EmptyLoss);
    }

    let cfg = &params.config;
    let set = &params.set;
    let d = cfg.model_dim;
    let heads = cfg.heads;
    let dh = d / heads;
    let inv_count = S::from_f64_c(1.0 / count as f64);
    let mut grads = ParamSet::zeros(cfg);

    // d(loss)/d(logits) = (softmax - onehot) / count at masked positions.
    let mut d_nc_logits = Matrix::zeros(n, cfg.nc_classes);
    let mut d_punct_logits = Matrix::zeros(n, cfg.punct_classes);
    for t in 0..n {
        if !labels.loss_mask[t] {
            continue;
        }
        let src = trace.nc_probs.row(t);
        let dst = d_nc_logits.row_mut(t);
        for c in 0..cfg.nc_classes {
            dst[c] = src[c] * inv_count;
        }
        dst[labels.nc[t] as usize] = dst[labels.nc[t] as usize] - inv_count;
        let src = trace.punct_probs.row(t);
        let dst = d_punct_logits.row_mut(t);
        for c in 0..cfg.punct_classes {
            dst[c] = src[c] * inv_count;
        }
        dst[labels.punct[t] as usize] = dst[labels.punct[t] as usize] - inv_count;
    }

    // Heads
    linear_backward_params(&d_nc_logits, &trace.nc_in, &mut grads.nc_head.w, &mut grads.nc_head.b);
    linear_backward_params(
        &d_punct_logits,
        &trace.punct_in,
        &mut grads.punct_head.w,
        &mut grads.punct_head.b,
    );
    let mut d_nc_in = Matrix::zeros(n, d);
    linear_backward_input(&d_nc_logits, &set.nc_head.w, &mut d_nc_in);
    if let Some(keep) = &trace.nc_keep {
        d_nc_in.hadamard_assign(keep);
    }
    let mut d_punct_in = Matrix::zeros(n, d);
    linear_backward_input(&d_punct_logits, &set.punct_head.w, &mut d_punct_in);
    if let Some(keep) = &trace.punct_keep {
        d_punct_in.hadamard_assign(keep);
    }
    let mut d_hf = d_nc_in;
    d_hf.add_assign(&d_punct_in);

    // Final norm
    let mut dx = layer_norm_backward(
        &d_hf,
        &trace.final_norm,
        &set.final_norm,
        &mut grads.final_norm.gamma,
        &mut grads.final_norm.beta,
    );

    let scale = S::from_f64_c(1.0 / (dh as f64).sqrt());
    for l in (0..cfg.layers).rev() {
        let layer = &set.layers[l];
        let tr = &trace.layers[l];
        let g = &mut grads.layers[l];

        // FFN block: h_out = x_mid + w2·drop(gelu(w1·ln2(x_mid)+b1))+b2
        let d_f2 = &dx; // gradient into the ffn output (residual branch)
        linear_backward_params(d_f2, &tr.f1a, &mut g.w2, &mut g.b2);
        let mut d_f1a = Matrix::zeros(n, cfg.ffn_dim);
        linear_backward_input(d_f2, &layer.w2, &mut d_f1a);
        if let Some(keep) = &tr.ffn_keep {
            d_f1a.hadamard_assign(keep);
        }
        // through gelu
        for idx in 0..d_f1a.data.len() {
            d_f1a.data[idx] = d_f1a.data[idx] * gelu_grad(tr.f1.data[idx]);
        }
        linear_backward_params(&d_f1a, &tr.m, &mut g.w1, &mut g.b1);
        let mut d_m = Matrix::zeros(n, d);
        linear_backward_input(&d_f1a, &layer.w1, &mut d_m);
        let d_from_ln2 =
            layer_norm_backward(&d_m, &tr.ln2, &layer.ln2, &mut g.ln2.gamma, &mut g.ln2.beta);
        dx.add_assign(&d_from_ln2); // skip connection + norm branch

        // Attention block: x_mid = x_in + wo·ctx + bo
        let d_attn_out = &dx;
        linear_backward_params(d_attn_out, &tr.ctx, &mut g.wo, &mut g.bo);
        let mut d_ctx = Matrix::zeros(n, d);
        linear_backward_input(d_attn_out, &layer.wo, &mut d_ctx);

        let mut d_q = Matrix::zeros(n, d);
        let mut d_k = Matrix::zeros(n, d);
        let mut d_v = Matrix::zeros(n, d);
        for hd in 0..heads {
            let lo = hd * dh;
            let hi = lo + dh;
            let probs = &tr.attn[hd];
            for i in 0..n {
                let dctx_i = &d_ctx.row(i)[lo..hi];
                let prow = probs.row(i);
                // dA[i][j] and the softmax Jacobian, restricted to visible
                // pairs (probabilities are zero elsewhere).
                let mut d_a_row = vec![S::zero(); n];
                let mut row_dot = S::zero();
                for j in 0..n {
                    let p = prow[j];
                    if p != S::zero() {
                        let da = dot(dctx_i, &tr.v.row(j)[lo..hi]);
                        d_a_row[j] = da;
                        row_dot = row_dot + p * da;
                        axpy(p, dctx_i, &mut d_v.row_mut(j)[lo..hi]);
                    }
                }
                let qi = tr.q.row(i)[lo..hi].to_vec();
                let dq_i = &mut d_q.row_mut(i)[lo..hi];
                for j in 0..n {
                    let p = prow[j];
                    if p != S::zero() {
                        let ds = p * (d_a_row[j] - row_dot) * scale;
                        axpy(ds, &tr.k.row(j)[lo..hi], dq_i);
                        axpy(ds, &qi, &mut d_k.row_mut(j)[lo..hi]);
                    }
                }
            }
        }

        let mut d_a = Matrix::zeros(n, d);
        linear_backward_params(&d_q, &tr.a, &mut g.wq, &mut g.bq);
        linear_backward_input(&d_q, &layer.wq, &mut d_a);
        linear_backward_params(&d_k, &tr.a, &mut g.wk, &mut g.bk);
        linear_backward_input(&d_k, &layer.wk, &mut d_a);
        linear_backward_params(&d_v, &tr.a, &mut g.wv, &mut g.bv);
        linear_backward_input(&d_v, &layer.wv, &mut d_a);
        let d_from_ln1 =
            layer_norm_backward(&d_a, &tr.ln1, &layer.ln1, &mut g.ln1.gamma, &mut g.ln1.beta);
        dx.add_assign(&d_from_ln1);
    }

    // Embeddings
    if let Some(keep) = &trace.emb_keep {
        dx.hadamard_assign(keep);
    }
    for i in 0..n {
        let src = dx.row(i);
        axpy(S::one(), src, grads.tok_emb.row_mut(trace.seq.token_ids[i] as usize));
        axpy(
            S::one(),
            src,
            grads.pos_emb.row_mut(trace.seq.word_ids[i] + trace.position_offset),
        );
    }

    Ok(grads)
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

fn argmax_row<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Word-level argmax tags taken at each word's first-subword position,
/// without IOB repair.
pub fn predict_raw_tags<S: Scalar>(
    nc_logits: &Matrix<S>,
    punct_logits: &Matrix<S>,
    seq: &SubwordSequence,
) -> (Vec<NcTag>, Vec<PunctTag>) {
    let firsts = seq.first_token_of_words();
    let mut nc = Vec::with_capacity(firsts.len());
    let mut punct = Vec::with_capacity(firsts.len());
    for &t in &firsts {
        nc.push(NcTag::from_id(argmax_row(nc_logits.row(t))).expect("nc id in range"));
        punct.push(PunctTag::from_id(argmax_row(punct_logits.row(t))).expect("punct id in range"));
    }
    (nc, punct)
}

/// Word-level tags with deterministic IOB repair.
pub fn predict_tags<S: Scalar>(
    nc_logits: &Matrix<S>,
    punct_logits: &Matrix<S>,
    seq: &SubwordSequence,
) -> (Vec<NcTag>, Vec<PunctTag>) {
    let (mut nc, punct) = predict_raw_tags(nc_logits, punct_logits, seq);
    repair_iob(&mut nc);
    (nc, punct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{build_composite_mask, sample_schedule, ChunkSchedule};
    use crate::tags::Category;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_config(layers: usize, model_dim: usize, heads: usize) -> ModelConfig {
        ModelConfig {
            layers,
            heads,
            model_dim,
            ffn_dim: model_dim * 2,
            max_positions: 64,
            vocab_size: 13,
            nc_classes: NC_CLASSES,
            punct_classes: PUNCT_CLASSES,
            dropout_rate: 0.0,
        }
    }

    /// Sequence with some multi-subword words.
    fn test_seq() -> SubwordSequence {
        SubwordSequence {
            token_ids: vec![4, 5, 6, 7, 8, 9],
            word_ids: vec![0, 0, 1, 2, 2, 3],
            is_first: vec![true, false, true, true, false, true],
        }
    }

    fn labels_for(seq: &SubwordSequence) -> TokenLabels {
        let nc = vec![
            NcTag::Begin(Category::Number),
            NcTag::Inside(Category::Number),
            NcTag::Outside,
            NcTag::Begin(Category::Case),
        ];
        let punct = vec![
            PunctTag::None,
            PunctTag::Comma,
            PunctTag::None,
            PunctTag::Period,
        ];
        crate::tokenizer::project_labels(&nc, &punct, seq).unwrap()
    }

    #[test]
    fn uniform_logits_loss_fixture() {
        // One word, uniform logits over both heads -> ln(9) + ln(5).
        let nc_logits = Matrix::<f64>::zeros(1, NC_CLASSES);
        let punct_logits = Matrix::<f64>::zeros(1, PUNCT_CLASSES);
        let labels = TokenLabels {
            nc: vec![0],
            punct: vec![0],
            loss_mask: vec![true],
        };
        let l = loss(&nc_logits, &punct_logits, &labels).unwrap();
        let expected = (NC_CLASSES as f64).ln() + (PUNCT_CLASSES as f64).ln();
        assert!((l - expected).abs() < 1e-12, "loss {l} != {expected}");
    }

    #[test]
    fn loss_ignores_masked_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seq = test_seq();
        let cfg = test_config(1, 8, 2);
        let params = init_params::<f64>(&cfg, &mut rng);
        let mask = AttentionMask::all_true(seq.len());
        let out = forward(&params, &seq, &mask, false, 0, &mut rng).unwrap();
        let labels = labels_for(&seq);
        let base = loss(&out.nc_logits, &out.punct_logits, &labels).unwrap();
        let mut perturbed = labels.clone();
        for t in 0..seq.len() {
            if !perturbed.loss_mask[t] {
                perturbed.nc[t] = 3;
                perturbed.punct[t] = 2;
            }
        }
        let same = loss(&out.nc_logits, &out.punct_logits, &perturbed).unwrap();
        assert_eq!(base, same, "masked labels must not affect the loss");
    }

    #[test]
    fn empty_loss_is_error() {
        let nc_logits = Matrix::<f64>::zeros(2, NC_CLASSES);
        let punct_logits = Matrix::<f64>::zeros(2, PUNCT_CLASSES);
        let labels = TokenLabels {
            nc: vec![0, 0],
            punct: vec![0, 0],
            loss_mask: vec![false, false],
        };
        assert!(matches!(
            loss(&nc_logits, &punct_logits, &labels),
            Err(EncoderError::EmptyLoss)
        ));
    }

    /// Straight-line reimplementation of the masked mean cross-entropy, as an
    /// independent oracle for the loss.
    fn naive_loss(
        nc_logits: &Matrix<f64>,
        punct_logits: &Matrix<f64>,
        labels: &TokenLabels,
    ) -> f64 {
        let per_head = |logits: &Matrix<f64>, ids: &[u32]| {
            let mut sum = 0.0;
            let mut n = 0.0;
            for t in 0..logits.rows {
                if labels.loss_mask[t] {
                    let row = logits.row(t);
                    let denom: f64 = row.iter().map(|v| v.exp()).sum();
                    let p = row[ids[t] as usize].exp() / denom;
                    sum -= p.ln();
                    n += 1.0;
                }
            }
            sum / n
        };
        per_head(nc_logits, &labels.nc) + per_head(punct_logits, &labels.punct)
    }

    #[test]
    fn loss_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = test_seq();
        let cfg = test_config(2, 8, 2);
        let params = init_params::<f64>(&cfg, &mut rng);
        let mask = AttentionMask::all_true(seq.len());
        let out = forward(&params, &seq, &mask, false, 0, &mut rng).unwrap();
        let labels = labels_for(&seq);
        let fast = loss(&out.nc_logits, &out.punct_logits, &labels).unwrap();
        let slow = naive_loss(&out.nc_logits, &out.punct_logits, &labels);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }

    #[test]
    fn eval_forward_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = test_config(2, 8, 2);
        let params = init_params::<f64>(&cfg, &mut rng);
        let seq = test_seq();
        let mask = AttentionMask::all_true(seq.len());
        let a = forward(&params, &seq, &mask, false, 0, &mut rng).unwrap();
        let b = forward(&params, &seq, &mask, false, 0, &mut rng).unwrap();
        assert_eq!(a.nc_logits.data, b.nc_logits.data);
        assert_eq!(a.punct_logits.data, b.punct_logits.data);
    }

    #[test]
    fn subwords_share_position_vector() {
        // Two subwords of one word differ only in token embedding; check the
        // positional contribution is identical by zeroing token embeddings.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = test_config(1, 8, 2);
        let mut params = init_params::<f64>(&cfg, &mut rng);
        for v in params.set.tok_emb.data.iter_mut() {
            *v = 0.0;
        }
        let seq = SubwordSequence {
            token_ids: vec![4, 5],
            word_ids: vec![0, 0],
            is_first: vec![true, false],
        };
        let mask = AttentionMask::all_true(2);
        let out = forward(&params, &seq, &mask, false, 0, &mut rng).unwrap();
        assert_eq!(out.nc_logits.row(0), out.nc_logits.row(1));
    }

    #[test]
    fn full_composite_mask_equals_all_true() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = test_config(2, 8, 2);
        let params = init_params::<f64>(&cfg, &mut rng);
        let seq = test_seq();
        let full = build_composite_mask(&ChunkSchedule::full(seq.word_count()), &seq).unwrap();
        let a = forward(&params, &seq, &full, false, 0, &mut rng).unwrap();
        let b = forward(&params, &seq, &AttentionMask::all_true(seq.len()), false, 0, &mut rng)
            .unwrap();
        assert_eq!(a.nc_logits.data, b.nc_logits.data);
        assert_eq!(a.punct_logits.data, b.punct_logits.data);
    }

    #[test]
    fn position_overflow_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cfg = test_config(1, 8, 2);
        cfg.max_positions = 3;
        let params = init_params::<f64>(&cfg, &mut rng);
        let seq = test_seq();
        let mask = AttentionMask::all_true(seq.len());
        assert!(matches!(
            forward(&params, &seq, &mask, false, 0, &mut rng),
            Err(EncoderError::PositionOverflow { .. })
        ));
    }

    #[test]
    fn stale_trace_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = test_config(1, 8, 2);
        let mut params = init_params::<f64>(&cfg, &mut rng);
        let seq = test_seq();
        let mask = AttentionMask::all_true(seq.len());
        let out = forward(&params, &seq, &mask, true, 0, &mut rng).unwrap();
        params.bump_version();
        let labels = labels_for(&seq);
        assert!(matches!(
            backward(&params, &out.trace, &labels),
            Err(EncoderError::StaleTrace { .. })
        ));
    }

    #[test]
    fn eval_trace_rejected_by_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = test_config(1, 8, 2);
        let params = init_params::<f64>(&cfg, &mut rng);
        let seq = test_seq();
        let mask = AttentionMask::all_true(seq.len());
        let out = forward(&params, &seq, &mask, false, 0, &mut rng).unwrap();
        let labels = labels_for(&seq);
        assert!(matches!(
            backward(&params, &out.trace, &labels),
            Err(EncoderError::EvalTrace)
        ));
    }

    #[test]
    fn gradients_double_with_doubled_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = test_config(1, 8, 2);
        let params = init_params::<f64>(&cfg, &mut rng);
        let seq = test_seq();
        let mask = AttentionMask::all_true(seq.len());
        let out = forward(&params, &seq, &mask, true, 0, &mut rng).unwrap();
        let labels = labels_for(&seq);
        let g = backward(&params, &out.trace, &labels).unwrap();
        // Sum of two identical loss terms: accumulate the same gradients twice.
        let mut doubled = ParamSet::zeros(&cfg);
        doubled.add_scaled(&g, 1.0);
        doubled.add_scaled(&g, 1.0);
        let mut scaled = g.clone();
        scaled.scale(2.0);
        let mut a = Vec::new();
        doubled.append_flat(&mut a);
        let mut b = Vec::new();
        scaled.append_flat(&mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn unused_rows_get_zero_gradient() {
        // Vocab rows never seen and positions beyond the sentence are
        // analytically forced to zero gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = test_config(2, 8, 2);
        let params = init_params::<f64>(&cfg, &mut rng);
        let seq = test_seq();
        let mask = AttentionMask::all_true(seq.len());
        let out = forward(&params, &seq, &mask, true, 0, &mut rng).unwrap();
        let labels = labels_for(&seq);
        let g = backward(&params, &out.trace, &labels).unwrap();
        for unused in [0usize, 1, 2, 3, 10, 11, 12] {
            assert!(g.tok_emb.row(unused).iter().all(|&v| v == 0.0));
        }
        for pos in seq.word_count()..cfg.max_positions {
            assert!(g.pos_emb.row(pos).iter().all(|&v| v == 0.0));
        }
    }

    /// Central finite differences over every parameter.
    ///
    /// Parameters are scaled to O(1) so LayerNorm curvature does not inflate
    /// the finite-difference truncation error.
    fn finite_difference_check(cfg: &ModelConfig, seed: u64, dropout: f64) -> f64 {
        let mut cfg = cfg.clone();
        cfg.dropout_rate = dropout;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_params::<f64>(&cfg, &mut rng);
        for v in params.set.tok_emb.data.iter_mut() {
            *v *= 30.0;
        }
        for v in params.set.pos_emb.data.iter_mut() {
            *v *= 30.0;
        }
        let seq = test_seq();
        let schedule = sample_schedule(seq.word_count(), (1, 2), (0, 1), Some(2), &mut rng);
        let mask = build_composite_mask(&schedule, &seq).unwrap();
        let labels = labels_for(&seq);

        // Dropout decisions must match between the analytic backward and the
        // two displaced forwards, so reseed identically per call.
        let fwd_seed = 999u64;
        let out = forward(
            &params,
            &seq,
            &mask,
            true,
            1,
            &mut ChaCha8Rng::seed_from_u64(fwd_seed),
        )
        .unwrap();
        let analytic = backward(&params, &out.trace, &labels).unwrap();
        let mut ga = Vec::new();
        analytic.append_flat(&mut ga);

        let mut flat = Vec::new();
        params.set.append_flat(&mut flat);
        let h = 1e-4;
        let mut max_rel = 0.0f64;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            params.set.assign_from_flat(&flat);
            let out_p = forward(
                &params,
                &seq,
                &mask,
                true,
                1,
                &mut ChaCha8Rng::seed_from_u64(fwd_seed),
            )
            .unwrap();
            let lp = loss(&out_p.nc_logits, &out_p.punct_logits, &labels).unwrap();
            flat[i] = orig - h;
            params.set.assign_from_flat(&flat);
            let out_m = forward(
                &params,
                &seq,
                &mask,
                true,
                1,
                &mut ChaCha8Rng::seed_from_u64(fwd_seed),
            )
            .unwrap();
            let lm = loss(&out_m.nc_logits, &out_m.punct_logits, &labels).unwrap();
            flat[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (ga[i] - fd).abs() / ga[i].abs().max(fd.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        params.set.assign_from_flat(&flat);
        max_rel
    }

    #[test]
    fn small_gradcheck_no_dropout() {
        let cfg = test_config(1, 8, 2);
        let max_rel = finite_difference_check(&cfg, 17, 0.0);
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn small_gradcheck_with_dropout() {
        let cfg = test_config(1, 8, 2);
        let max_rel = finite_difference_check(&cfg, 18, 0.25);
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn predict_tags_respects_first_subword_and_repair() {
        let seq = test_seq();
        let mut nc_logits = Matrix::<f64>::zeros(seq.len(), NC_CLASSES);
        let punct_logits = Matrix::<f64>::zeros(seq.len(), PUNCT_CLASSES);
        // Force word tags [O, I-DATE, O, O] at first-subword rows; repair
        // rewrites the leading I-DATE to B-DATE.
        let firsts = seq.first_token_of_words();
        nc_logits.set(firsts[0], NcTag::Outside.id(), 5.0);
        nc_logits.set(firsts[1], NcTag::Inside(Category::Date).id(), 5.0);
        nc_logits.set(firsts[2], NcTag::Outside.id(), 5.0);
        nc_logits.set(firsts[3], NcTag::Outside.id(), 5.0);
        // Perturb non-first rows wildly: they must not matter.
        for t in 0..seq.len() {
            if !seq.is_first[t] {
                for c in 0..NC_CLASSES {
                    nc_logits.set(t, c, 100.0 - c as f64);
                }
            }
        }
        let (nc, _) = predict_tags(&nc_logits, &punct_logits, &seq);
        assert_eq!(
            nc,
            vec![
                NcTag::Outside,
                NcTag::Begin(Category::Date),
                NcTag::Outside,
                NcTag::Outside
            ]
        );
    }
}
