use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{
    glorot_uniform, scaled_normal, ParamId, ParameterStore, Scalar, Tape, Tensor, Var,
};

use super::config::ModelConfig;

/// Logit assigned to attention positions dropped at train time.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Glorot,
    Zeros,
    Ones,
    Normal(f64),
}

/// Either creates parameters in a store or looks up existing ones, so a
/// single code path defines the parameter layout.
pub(crate) enum Registrar<'a, T: Scalar> {
    Create {
        store: &'a mut ParameterStore<T>,
        rng: &'a mut ChaCha8Rng,
    },
    Lookup {
        store: &'a ParameterStore<T>,
    },
}

impl<T: Scalar> Registrar<'_, T> {
    pub(crate) fn param(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
    ) -> Result<ParamId> {
        match self {
            Registrar::Create { store, rng } => {
                let value = match init {
                    Init::Glorot => glorot_uniform(rows, cols, *rng),
                    Init::Zeros => Tensor::zeros(&[rows, cols]),
                    Init::Ones => Tensor::filled(&[rows, cols], T::one()),
                    Init::Normal(s) => scaled_normal(rows, cols, s, *rng),
                };
                Ok(store.insert(name, value)?)
            }
            Registrar::Lookup { store } => {
                let id = store.id(name)?;
                if store.value(id).shape() != [rows, cols] {
                    return Err(crate::Error::Model(format!(
                        "parameter `{name}` has shape {:?}, expected [{rows}, {cols}]",
                        store.value(id).shape()
                    )));
                }
                Ok(id)
            }
        }
    }
}

/// `U · tanh(W x + b)` with a hidden layer of `⌊√d⌋` units.
/// Stored row-wise: `w: [1, k]`, `b: [1, k]`, `u: [k, d]`.
#[derive(Clone, Debug)]
pub struct CveParams {
    pub w: ParamId,
    pub b: ParamId,
    pub u: ParamId,
}

impl CveParams {
    pub(crate) fn register<T: Scalar>(
        r: &mut Registrar<T>,
        prefix: &str,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let k = cfg.cve_hidden();
        Ok(Self {
            w: r.param(&format!("{prefix}.w"), 1, k, Init::Glorot)?,
            b: r.param(&format!("{prefix}.b"), 1, k, Init::Zeros)?,
            u: r.param(&format!("{prefix}.u"), k, cfg.d, Init::Glorot)?,
        })
    }
}

/// Continuous value embedding of an `[n, 1]` column of scalars → `[n, d]`.
pub fn cve_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &CveParams,
    x: Var,
) -> Result<Var> {
    let w = tape.param(store, p.w)?;
    let b = tape.param(store, p.b)?;
    let u = tape.param(store, p.u)?;
    let h = tape.matmul(x, w)?;
    let h = tape.add(h, b)?;
    let h = tape.tanh(h)?;
    Ok(tape.matmul(h, u)?)
}

#[derive(Clone, Debug)]
pub struct AttentionHeadParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub heads: Vec<AttentionHeadParams>,
    pub wc: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl BlockParams {
    pub(crate) fn register<T: Scalar>(
        r: &mut Registrar<T>,
        prefix: &str,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let d = cfg.d;
        let dh = cfg.head_dim();
        let heads = (0..cfg.n_heads)
            .map(|j| {
                Ok(AttentionHeadParams {
                    wq: r.param(&format!("{prefix}.head{j}.wq"), d, dh, Init::Glorot)?,
                    wk: r.param(&format!("{prefix}.head{j}.wk"), d, dh, Init::Glorot)?,
                    wv: r.param(&format!("{prefix}.head{j}.wv"), d, dh, Init::Glorot)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            heads,
            wc: r.param(&format!("{prefix}.wc"), cfg.n_heads * dh, d, Init::Glorot)?,
            ln1_gain: r.param(&format!("{prefix}.ln1.gain"), 1, d, Init::Ones)?,
            ln1_bias: r.param(&format!("{prefix}.ln1.bias"), 1, d, Init::Zeros)?,
            ffn_w1: r.param(&format!("{prefix}.ffn.w1"), d, 2 * d, Init::Glorot)?,
            ffn_b1: r.param(&format!("{prefix}.ffn.b1"), 1, 2 * d, Init::Zeros)?,
            ffn_w2: r.param(&format!("{prefix}.ffn.w2"), 2 * d, d, Init::Glorot)?,
            ffn_b2: r.param(&format!("{prefix}.ffn.b2"), 1, d, Init::Zeros)?,
            ln2_gain: r.param(&format!("{prefix}.ln2.gain"), 1, d, Init::Ones)?,
            ln2_bias: r.param(&format!("{prefix}.ln2.bias"), 1, d, Init::Zeros)?,
        })
    }
}

/// Train-time randomness; `None` means evaluation mode.
pub struct Stochastic<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub dropout_rate: f64,
    pub attention_dropout_rate: f64,
}

/// Multi-head scaled dot-product self-attention over the rows of `e`.
///
/// Returns the projected output and each head's `[n, n]` attention matrix.
pub fn mha_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &BlockParams,
    e: Var,
    mut train: Option<&mut Stochastic<'_>>,
) -> Result<(Var, Vec<Var>)> {
    let n = tape.value(e).rows();
    let mut outputs = Vec::with_capacity(p.heads.len());
    let mut attentions = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let wq = tape.param(store, head.wq)?;
        let wk = tape.param(store, head.wk)?;
        let wv = tape.param(store, head.wv)?;
        let q = tape.matmul(e, wq)?;
        let k = tape.matmul(e, wk)?;
        let v = tape.matmul(e, wv)?;
        let dh = tape.value(q).cols();
        let logits = tape.matmul_nt(q, k)?;
        let mut logits = tape.scale(logits, T::from_f64_lossy(1.0 / (dh as f64).sqrt()))?;
        if let Some(st) = train.as_deref_mut() {
            if st.attention_dropout_rate > 0.0 {
                let mask = attention_dropout_mask(n, st.attention_dropout_rate, st.rng);
                logits = tape.masked_fill(logits, mask, T::from_f64_lossy(MASKED_LOGIT))?;
            }
        }
        let attn = tape.softmax(logits)?;
        attentions.push(attn);
        outputs.push(tape.matmul(attn, v)?);
    }
    let concat = tape.concat(&outputs)?;
    let wc = tape.param(store, p.wc)?;
    Ok((tape.matmul(concat, wc)?, attentions))
}

/// Bernoulli drop mask over an `[n, n]` logit matrix; rows that come out
/// fully masked are redrawn.
fn attention_dropout_mask(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    // 32-bit draws: the mask is n² per head, so this is a hot loop
    let threshold = (rate * 4_294_967_296.0).round().min(u32::MAX as f64) as u32;
    let mut mask = vec![false; n * n];
    for row in mask.chunks_mut(n) {
        loop {
            for m in row.iter_mut() {
                *m = rng.next_u32() < threshold;
            }
            if row.iter().any(|m| !m) {
                break;
            }
        }
    }
    mask
}

/// Post-norm Transformer block:
/// `X₁ = LN(E + Drop(MHA(E)))`, `out = LN(X₁ + Drop(FFN(X₁)))`.
pub fn transformer_block<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &BlockParams,
    e: Var,
    mut train: Option<&mut Stochastic<'_>>,
) -> Result<Var> {
    let (attn, _) = mha_forward(tape, store, p, e, train.as_deref_mut())?;
    let attn = dropout(tape, attn, train.as_deref_mut())?;
    let x1 = tape.add(e, attn)?;
    let g1 = tape.param(store, p.ln1_gain)?;
    let b1 = tape.param(store, p.ln1_bias)?;
    let x1 = tape.layer_norm(x1, g1, b1)?;

    let w1 = tape.param(store, p.ffn_w1)?;
    let fb1 = tape.param(store, p.ffn_b1)?;
    let w2 = tape.param(store, p.ffn_w2)?;
    let fb2 = tape.param(store, p.ffn_b2)?;
    let h = tape.matmul(x1, w1)?;
    let h = tape.add(h, fb1)?;
    let h = tape.relu(h)?;
    let f = tape.matmul(h, w2)?;
    let f = tape.add(f, fb2)?;
    let f = dropout(tape, f, train)?;
    let x2 = tape.add(x1, f)?;
    let g2 = tape.param(store, p.ln2_gain)?;
    let b2 = tape.param(store, p.ln2_bias)?;
    Ok(tape.layer_norm(x2, g2, b2)?)
}

fn dropout<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    train: Option<&mut Stochastic<'_>>,
) -> Result<Var> {
    match train {
        Some(st) => Ok(tape.dropout(x, st.dropout_rate, true, st.rng)?),
        None => Ok(x),
    }
}

/// Applies the blocks in sequence.
pub fn encode_contextual<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    blocks: &[BlockParams],
    e: Var,
    mut train: Option<&mut Stochastic<'_>>,
) -> Result<Var> {
    if tape.value(e).rows() == 0 {
        return Err(crate::Error::Model(
            "cannot encode zero observations".into(),
        ));
    }
    let mut x = e;
    for b in blocks {
        x = transformer_block(tape, store, b, x, train.as_deref_mut())?;
    }
    Ok(x)
}

/// `a_i = u_aᵀ tanh(W_a c_i + b_a)`, stored row-wise as `w_a: [d, d_a]`,
/// `b_a: [1, d_a]`, `u_a: [d_a, 1]`.
#[derive(Clone, Debug)]
pub struct FusionParams {
    pub w_a: ParamId,
    pub b_a: ParamId,
    pub u_a: ParamId,
}

impl FusionParams {
    pub(crate) fn register<T: Scalar>(r: &mut Registrar<T>, cfg: &ModelConfig) -> Result<Self> {
        let da = cfg.fusion_hidden();
        Ok(Self {
            w_a: r.param("fusion.w_a", cfg.d, da, Init::Glorot)?,
            b_a: r.param("fusion.b_a", 1, da, Init::Zeros)?,
            u_a: r.param("fusion.u_a", da, 1, Init::Glorot)?,
        })
    }
}

/// Softmax attention weights `α` (`[1, n]`) over the rows of `c`.
pub fn fusion_weights<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &FusionParams,
    c: Var,
) -> Result<Var> {
    let n = tape.value(c).rows();
    let w = tape.param(store, p.w_a)?;
    let b = tape.param(store, p.b_a)?;
    let u = tape.param(store, p.u_a)?;
    let h = tape.matmul(c, w)?;
    let h = tape.add(h, b)?;
    let h = tape.tanh(h)?;
    let a = tape.matmul(h, u)?;
    let a = tape.reshape(a, 1, n)?;
    Ok(tape.softmax(a)?)
}

/// Returns `(Σ α_i c_i, α)`.
pub fn fusion_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &FusionParams,
    c: Var,
) -> Result<(Var, Var)> {
    let alpha = fusion_weights(tape, store, p, c)?;
    Ok((tape.matmul(alpha, c)?, alpha))
}

#[derive(Clone, Debug)]
pub struct DemographicsParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl DemographicsParams {
    pub(crate) fn register<T: Scalar>(r: &mut Registrar<T>, cfg: &ModelConfig) -> Result<Self> {
        let (dd, d) = (cfg.n_demographics, cfg.d);
        Ok(Self {
            w1: r.param("demographics.w1", dd, 2 * d, Init::Glorot)?,
            b1: r.param("demographics.b1", 1, 2 * d, Init::Zeros)?,
            w2: r.param("demographics.w2", 2 * d, d, Init::Glorot)?,
            b2: r.param("demographics.b2", 1, d, Init::Zeros)?,
        })
    }
}

/// `tanh(W₂ tanh(W₁ d + b₁) + b₂)` on a `[1, D]` row.
pub fn demographics_embed<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &DemographicsParams,
    demo: Var,
) -> Result<Var> {
    let w1 = tape.param(store, p.w1)?;
    let b1 = tape.param(store, p.b1)?;
    let w2 = tape.param(store, p.w2)?;
    let b2 = tape.param(store, p.b2)?;
    let h = tape.matmul(demo, w1)?;
    let h = tape.add(h, b1)?;
    let h = tape.tanh(h)?;
    let o = tape.matmul(h, w2)?;
    let o = tape.add(o, b2)?;
    Ok(tape.tanh(o)?)
}

/// Affine map `x · w + b`.
#[derive(Clone, Debug)]
pub struct DenseParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl DenseParams {
    pub(crate) fn register<T: Scalar>(
        r: &mut Registrar<T>,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        w_name: &str,
        b_name: &str,
    ) -> Result<Self> {
        Ok(Self {
            w: r.param(&format!("{prefix}.{w_name}"), inputs, outputs, Init::Glorot)?,
            b: r.param(&format!("{prefix}.{b_name}"), 1, outputs, Init::Zeros)?,
        })
    }
}

pub fn dense<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &DenseParams,
    x: Var,
) -> Result<Var> {
    let w = tape.param(store, p.w)?;
    let b = tape.param(store, p.b)?;
    let y = tape.matmul(x, w)?;
    Ok(tape.add(y, b)?)
}

/// Logit of the target head: `w_oᵀ [e^d, e^T] + b_o`.
pub fn target_head<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &DenseParams,
    demo_embedding: Var,
    series_embedding: Var,
) -> Result<Var> {
    let x = tape.concat(&[demo_embedding, series_embedding])?;
    dense(tape, store, p, x)
}

/// Forecast head: `W_s [e^d, e^T] + b_s`, one output per variable.
pub fn forecast_head<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    p: &DenseParams,
    demo_embedding: Var,
    series_embedding: Var,
) -> Result<Var> {
    let x = tape.concat(&[demo_embedding, series_embedding])?;
    dense(tape, store, p, x)
}

pub(crate) fn feature_embedding_init() -> Init {
    Init::Normal(0.02)
}
