//! Context-conditioned attention decoder.
//!
//! Node embeddings are projected once per episode into per-head keys and
//! values plus a separate set of logit keys. At each decision the context
//! vector becomes a query, multi-head attention over the available tasks
//! produces a glimpse, a residual feed-forward block and batch-norm refine
//! it, and clipped compatibilities with the logit keys give the masked
//! log-probabilities.

use numcore::{Axis, BatchNorm, NormMode, ParamVars, Tape, Tensor, Var};

use crate::error::{CapamError, Result};
use crate::model::ModelConfig;
use crate::sim::SimState;

pub const CONTEXT_WIDTH: usize = 8;
/// Logits are `C * tanh(.)` with this `C`.
pub const LOGIT_CLIP: f64 = 10.0;
pub const CAPACITY_SCALE: f64 = 3.0;
/// Reference team size used to normalise the peer count.
pub const PEER_COUNT_SCALE: f64 = 6.0;

/// `[t / d_max, c / 3, x, y, mean peer destination x, y, mean peer capacity / 3,
/// peers / 6]`, positions divided by the grid size. An idle peer's
/// destination is its own location.
pub fn build_context(state: &SimState<'_>, robot: usize) -> Vec<f64> {
    let inst = state.instance();
    let grid = inst.grid;
    let me = &state.robots()[robot];
    let mut ctx = vec![
        state.time() / inst.max_deadline(),
        inst.robots[robot].capacity / CAPACITY_SCALE,
        me.x / grid,
        me.y / grid,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    let peers: Vec<usize> = (0..inst.n_robots()).filter(|&j| j != robot).collect();
    if !peers.is_empty() {
        let n = peers.len() as f64;
        for &j in &peers {
            let (dx, dy) = state.free_position(j);
            ctx[4] += dx / grid / n;
            ctx[5] += dy / grid / n;
            ctx[6] += inst.robots[j].capacity / CAPACITY_SCALE / n;
        }
        ctx[7] = n / PEER_COUNT_SCALE;
    }
    ctx
}

/// Per-episode projections of the node embeddings.
#[derive(Clone, Debug)]
pub struct NodeCache {
    /// Per head, `dh x N`.
    pub keys_t: Vec<Var>,
    /// Per head, `N x dh`.
    pub values: Vec<Var>,
    /// `hl x N`.
    pub logit_keys_t: Var,
    pub n_nodes: usize,
}

pub fn project_nodes(
    tape: &mut Tape,
    emb: Var,
    params: &ParamVars,
    cfg: &ModelConfig,
) -> Result<NodeCache> {
    let [n, hl] = tape.shape(emb);
    if hl != cfg.hl {
        return Err(CapamError::Config(format!(
            "embeddings have width {hl}, decoder expects {}",
            cfg.hl
        )));
    }
    let keys = tape.matmul(emb, params.get("dec.key.w")?)?;
    let values = tape.matmul(emb, params.get("dec.value.w")?)?;
    let lk = tape.matmul(emb, params.get("dec.logit_key.w")?)?;
    let dh = cfg.head_width();
    let mut keys_t = Vec::with_capacity(cfg.heads);
    let mut vals = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let kh = if cfg.heads == 1 {
            keys
        } else {
            tape.slice(Axis::Cols, keys, a, b)?
        };
        keys_t.push(tape.transpose(kh));
        vals.push(if cfg.heads == 1 {
            values
        } else {
            tape.slice(Axis::Cols, values, a, b)?
        });
    }
    Ok(NodeCache {
        keys_t,
        values: vals,
        logit_keys_t: tape.transpose(lk),
        n_nodes: n,
    })
}

/// `softmax(q K^T / scale) V` over the unmasked nodes. `q: 1 x d`,
/// `keys_t: d x N`, `values: N x d`.
pub fn attention(
    tape: &mut Tape,
    q: Var,
    keys_t: Var,
    values: Var,
    mask: &[bool],
    scale: f64,
) -> Result<Var> {
    let scores = tape.matmul(q, keys_t)?;
    let scores = tape.scale(scores, 1.0 / scale);
    let weights = tape.softmax(scores, mask)?;
    Ok(tape.matmul(weights, values)?)
}

/// Multi-head attention of a `1 x hl` query followed by the output projection.
pub fn mha(
    tape: &mut Tape,
    q: Var,
    cache: &NodeCache,
    mask: &[bool],
    params: &ParamVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    if !cfg.hl.is_multiple_of(cfg.heads) {
        return Err(CapamError::Config(format!(
            "embedding width {} is not divisible by {} heads",
            cfg.hl, cfg.heads
        )));
    }
    let dh = cfg.head_width();
    let scale = (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = if cfg.heads == 1 {
            q
        } else {
            tape.slice(Axis::Cols, q, h * dh, (h + 1) * dh)?
        };
        heads.push(attention(
            tape,
            qh,
            cache.keys_t[h],
            cache.values[h],
            mask,
            scale,
        )?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat(Axis::Cols, &heads)?
    };
    Ok(tape.linear(
        joined,
        params.get("dec.mha_out.w")?,
        params.get("dec.mha_out.b")?,
    )?)
}

/// Attention glimpse for one decision, before the feed-forward block.
pub fn glimpse(
    tape: &mut Tape,
    context: &[f64],
    cache: &NodeCache,
    mask: &[bool],
    params: &ParamVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    if mask.len() != cache.n_nodes {
        return Err(CapamError::Contract(format!(
            "mask over {} tasks for a graph of {}",
            mask.len(),
            cache.n_nodes
        )));
    }
    if !mask.contains(&true) {
        return Err(CapamError::NoFeasibleAction);
    }
    let ctx = tape.constant(Tensor::row(context.to_vec()));
    let q = tape.linear(ctx, params.get("dec.query.w")?, params.get("dec.query.b")?)?;
    mha(tape, q, cache, mask, params, cfg)
}

/// Batch-norm handle: training updates running statistics, evaluation reads them.
pub enum Norm<'a> {
    Train(&'a mut BatchNorm),
    Eval(&'a BatchNorm),
}

/// `BN(g + ReLU(g W + b))` over a stack of glimpses, one row per episode.
pub fn refine(tape: &mut Tape, g: Var, params: &ParamVars, norm: Norm<'_>) -> Result<Var> {
    let ff = tape.linear(g, params.get("dec.ff.w")?, params.get("dec.ff.b")?)?;
    let ff = tape.relu(ff);
    let s = tape.add(g, ff)?;
    let gamma = params.get("dec.bn.gamma")?;
    let beta = params.get("dec.bn.beta")?;
    Ok(match norm {
        Norm::Train(bn) => bn.forward(tape, s, gamma, beta, NormMode::Train)?,
        Norm::Eval(bn) => bn.forward_eval(tape, s, gamma, beta)?,
    })
}

/// Masked log-probabilities `1 x N` from a refined `1 x hl` glimpse.
pub fn log_probs(
    tape: &mut Tape,
    g: Var,
    cache: &NodeCache,
    mask: &[bool],
    cfg: &ModelConfig,
) -> Result<Var> {
    let u = tape.matmul(g, cache.logit_keys_t)?;
    let u = tape.scale(u, 1.0 / (cfg.hl as f64).sqrt());
    let u = tape.tanh(u);
    let u = tape.scale(u, LOGIT_CLIP);
    if !tape.value(u).all_finite() {
        return Err(CapamError::Policy("non-finite logits".into()));
    }
    Ok(tape.log_softmax(u, mask)?)
}

/// Probabilities from a log-softmax row; masked entries are exactly zero.
pub fn probabilities(tape: &Tape, log_probs: Var) -> Vec<f64> {
    tape.value(log_probs)
        .data()
        .iter()
        .map(|v| v.exp())
        .collect()
}

/// Full distribution for one decision with evaluation-mode batch-norm.
pub fn action_distribution(
    tape: &mut Tape,
    cache: &NodeCache,
    state: &SimState<'_>,
    robot: usize,
    params: &ParamVars,
    bn: &BatchNorm,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    let mask = state.feasible_mask();
    let ctx = build_context(state, robot);
    let g = glimpse(tape, &ctx, cache, &mask, params, cfg)?;
    let g = refine(tape, g, params, Norm::Eval(bn))?;
    let lp = log_probs(tape, g, cache, &mask, cfg)?;
    Ok(probabilities(tape, lp))
}
