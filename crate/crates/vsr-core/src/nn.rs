//! Neural network building blocks on top of the tape ops: parameter
//! registry, initializers, linear / norm / embedding / dropout layers,
//! multi-head attention and masking helpers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::StreamRng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Additive mask value for disallowed positions.  Large but finite: after a
/// softmax it underflows to an exact zero weight without ever producing NaN
/// on rows that are partially masked.
pub const MASK_NEG: f64 = -1.0e30;

/// Named trainable parameters.  BTreeMap keeps iteration order stable, which
/// makes optimizer updates and checkpoints deterministic.
#[derive(Default)]
pub struct ParamMap {
    map: BTreeMap<String, Tensor>,
}

impl ParamMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        self.map.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.map.values() {
            t.zero_grad();
        }
    }
}

/// Named non-trainable state (running statistics, normalizer constants).
pub type StateMap = BTreeMap<String, Tensor>;

/// Weight initialization recipes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    /// Uniform in [-limit, +limit].
    Uniform(f64),
    /// Normal with the given std.
    Normal(f64),
}

impl Init {
    pub fn xavier(fan_in: usize, fan_out: usize) -> Init {
        Init::Uniform(math::sqrt(6.0 / (fan_in + fan_out) as f64))
    }

    pub fn kaiming(fan_in: usize) -> Init {
        Init::Normal(math::sqrt(2.0 / fan_in as f64))
    }

    fn create(self, shape: &[usize], rng: &mut StreamRng) -> Tensor {
        match self {
            Init::Const(v) => Tensor::full(shape, v),
            Init::Uniform(l) => Tensor::rand_uniform(shape, -l, l, rng),
            Init::Normal(s) => Tensor::randn(shape, s, rng),
        }
    }
}

/// Construction context threaded through model builders: owns the parameter
/// and state registries and derives per-parameter init streams and
/// per-layer dropout streams from the model seed.
pub struct BuildCtx {
    pub params: ParamMap,
    pub states: StateMap,
    dropouts: Vec<Dropout>,
    seed: u64,
}

impl BuildCtx {
    pub fn new(seed: u64) -> Self {
        BuildCtx { params: ParamMap::new(), states: StateMap::new(), dropouts: Vec::new(), seed }
    }

    /// Mint a trainable parameter.  The init stream is derived from the
    /// parameter name, so initialization is independent of build order.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut rng = StreamRng::named(self.seed, &format!("init.{name}"));
        let t = init.create(shape, &mut rng).requires_grad();
        self.params.insert(name, t.clone())?;
        Ok(t)
    }

    /// Mint a non-trainable state tensor.
    pub fn state(&mut self, name: &str, shape: &[usize], fill: f64) -> Result<Tensor> {
        if self.states.contains_key(name) {
            return Err(Error::config(format!("duplicate state {name}")));
        }
        let t = Tensor::full(shape, fill);
        self.states.insert(String::from(name), t.clone());
        Ok(t)
    }

    /// Mint a dropout layer with its own named stream.
    pub fn dropout(&mut self, name: &str, p: f64) -> Dropout {
        let d = Dropout {
            inner: Rc::new(DropoutInner {
                name: String::from(name),
                p,
                rng: RefCell::new(StreamRng::named(self.seed, &format!("dropout.{name}"))),
            }),
        };
        self.dropouts.push(d.clone());
        d
    }

    /// All dropout layers minted so far (for RNG state snapshots).
    pub fn take_dropouts(&mut self) -> Vec<Dropout> {
        core::mem::take(&mut self.dropouts)
    }
}

struct DropoutInner {
    name: String,
    p: f64,
    rng: RefCell<StreamRng>,
}

/// Dropout layer bound to a named stream.  In eval mode it is the identity
/// and consumes no randomness.
#[derive(Clone)]
pub struct Dropout {
    inner: Rc<DropoutInner>,
}

impl Dropout {
    pub fn forward(&self, tape: &Tape, x: &Tensor, train: bool) -> Result<Tensor> {
        if !train || self.inner.p == 0.0 {
            return Ok(x.clone());
        }
        tape.dropout(x, self.inner.p, &mut self.inner.rng.borrow_mut())
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn rng_state(&self) -> [u64; 4] {
        self.inner.rng.borrow().state()
    }

    pub fn restore_rng(&self, state: [u64; 4]) {
        *self.inner.rng.borrow_mut() = StreamRng::restore(state);
    }
}

/// Fully connected layer computing `x @ w^T + b` over the last axis.
pub struct Linear {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Linear {
    pub fn new(
        ctx: &mut BuildCtx,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = ctx.param(&format!("{name}.w"), &[out_dim, in_dim], Init::xavier(in_dim, out_dim))?;
        let b = if bias {
            Some(ctx.param(&format!("{name}.b"), &[out_dim], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let y = tape.matmul_nt(x, &self.w)?;
        match &self.b {
            Some(b) => tape.add(&y, b),
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last axis, with learned gain and bias.
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ctx: &mut BuildCtx, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: ctx.param(&format!("{name}.gamma"), &[dim], Init::Const(1.0))?,
            beta: ctx.param(&format!("{name}.beta"), &[dim], Init::Const(0.0))?,
            eps: 1e-12,
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

/// Batch normalization over `[B, C, T]` with running statistics for eval.
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(ctx: &mut BuildCtx, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm1d {
            gamma: ctx.param(&format!("{name}.gamma"), &[channels], Init::Const(1.0))?,
            beta: ctx.param(&format!("{name}.beta"), &[channels], Init::Const(0.0))?,
            running_mean: ctx.state(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: ctx.state(&format!("{name}.running_var"), &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Train mode: batch statistics over valid positions, running statistics
    /// updated in place.  Eval mode: running statistics.
    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        lengths: Option<&[usize]>,
        train: bool,
    ) -> Result<Tensor> {
        if train {
            let r = tape.batch_norm_train(x, &self.gamma, &self.beta, self.eps, lengths)?;
            let mom = self.momentum;
            self.running_mean.update_data(|m| {
                for (mi, &bi) in m.iter_mut().zip(r.batch_mean.iter()) {
                    *mi = (1.0 - mom) * *mi + mom * bi;
                }
            });
            self.running_var.update_data(|v| {
                for (vi, &bi) in v.iter_mut().zip(r.batch_var.iter()) {
                    *vi = (1.0 - mom) * *vi + mom * bi;
                }
            });
            Ok(r.out)
        } else {
            let mean = self.running_mean.to_vec();
            let var = self.running_var.to_vec();
            tape.batch_norm_eval(x, &self.gamma, &self.beta, &mean, &var, self.eps)
        }
    }
}

/// Token embedding table `[V, D]`.
pub struct Embedding {
    pub table: Tensor,
    pub dim: usize,
}

impl Embedding {
    pub fn new(ctx: &mut BuildCtx, name: &str, vocab: usize, dim: usize) -> Result<Self> {
        let std = 1.0 / math::sqrt(dim as f64);
        Ok(Embedding {
            table: ctx.param(&format!("{name}.table"), &[vocab, dim], Init::Normal(std))?,
            dim,
        })
    }

    /// Embed one batch of equal-length token rows: `[B, L] -> [B, L, D]`.
    pub fn forward(&self, tape: &Tape, tokens: &[Vec<usize>]) -> Result<Tensor> {
        let b = tokens.len();
        let l = tokens.first().map(|r| r.len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(b * l);
        for row in tokens {
            if row.len() != l {
                return Err(Error::shape("embedding: ragged token rows"));
            }
            flat.extend_from_slice(row);
        }
        let e = tape.gather_rows(&self.table, &flat)?;
        tape.reshape(&e, &[b, l, self.dim])
    }
}

/// Position-wise feed-forward: linear, ReLU, dropout, linear.
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
    pub drop: Dropout,
}

impl FeedForward {
    pub fn new(ctx: &mut BuildCtx, name: &str, dim: usize, hidden: usize, p: f64) -> Result<Self> {
        Ok(FeedForward {
            lin1: Linear::new(ctx, &format!("{name}.lin1"), dim, hidden, true)?,
            lin2: Linear::new(ctx, &format!("{name}.lin2"), hidden, dim, true)?,
            drop: ctx.dropout(&format!("{name}.drop"), p),
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.lin1.forward(tape, x)?;
        let h = tape.relu(&h)?;
        let h = self.drop.forward(tape, &h, train)?;
        self.lin2.forward(tape, &h)
    }
}

/// Learned relative position keys for self-attention, one vector per
/// clamped offset in [-clip, clip].
pub struct RelPosition {
    pub table: Tensor,
    pub clip: usize,
}

/// Multi-head scaled dot-product attention.  Supports an optional additive
/// mask broadcastable to `[B, H, Tq, Tk]` and optional learned relative
/// position keys (self-attention only).
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub head_dim: usize,
    pub rel: Option<RelPosition>,
}

impl MultiHeadAttention {
    pub fn new(
        ctx: &mut BuildCtx,
        name: &str,
        dim: usize,
        head_dim: usize,
        rel_clip: Option<usize>,
    ) -> Result<Self> {
        if head_dim == 0 || dim % head_dim != 0 {
            return Err(Error::config(format!(
                "attention: head_dim {head_dim} must divide model dim {dim}"
            )));
        }
        let rel = match rel_clip {
            Some(clip) => {
                let w = 2 * clip + 1;
                Some(RelPosition {
                    table: ctx.param(
                        &format!("{name}.rel"),
                        &[w, head_dim],
                        Init::xavier(w, head_dim),
                    )?,
                    clip,
                })
            }
            None => None,
        };
        Ok(MultiHeadAttention {
            q: Linear::new(ctx, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::new(ctx, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::new(ctx, &format!("{name}.v"), dim, dim, true)?,
            out: Linear::new(ctx, &format!("{name}.out"), dim, dim, true)?,
            heads: dim / head_dim,
            head_dim,
            rel,
        })
    }

    /// `query` is `[B, Tq, D]`, `kv` is `[B, Tk, D]`.
    pub fn forward(
        &self,
        tape: &Tape,
        query: &Tensor,
        kv: &Tensor,
        add_mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let (b, tq, d) = (query.shape()[0], query.shape()[1], query.shape()[2]);
        let tk = kv.shape()[1];
        let (h, dh) = (self.heads, self.head_dim);
        let split = |tape: &Tape, x: &Tensor, t: usize| -> Result<Tensor> {
            let x = tape.reshape(x, &[b, t, h, dh])?;
            tape.transpose(&x, &[0, 2, 1, 3])
        };
        let qp = split(tape, &self.q.forward(tape, query)?, tq)?;
        let kp = split(tape, &self.k.forward(tape, kv)?, tk)?;
        let vp = split(tape, &self.v.forward(tape, kv)?, tk)?;
        let mut scores = tape.matmul_nt(&qp, &kp)?;
        if let Some(rel) = &self.rel {
            if tq != tk {
                return Err(Error::config(
                    "attention: relative positions require self-attention (Tq == Tk)",
                ));
            }
            let rq = tape.matmul_nt(&qp, &rel.table)?;
            let rq = tape.rel_shift(&rq, rel.clip)?;
            scores = tape.add(&scores, &rq)?;
        }
        let scores = tape.scale(&scores, 1.0 / math::sqrt(dh as f64))?;
        let scores = match add_mask {
            Some(m) => tape.add(&scores, m)?,
            None => scores,
        };
        let attn = tape.softmax_last(&scores)?;
        let ctxv = tape.matmul(&attn, &vp)?;
        let merged = tape.transpose(&ctxv, &[0, 2, 1, 3])?;
        let merged = tape.reshape(&merged, &[b, tq, d])?;
        self.out.forward(tape, &merged)
    }
}

/// Additive key mask `[B, 1, 1, T]`: zero inside each sample's length,
/// `MASK_NEG` beyond it.
pub fn key_mask(lengths: &[usize], t: usize) -> Tensor {
    let b = lengths.len();
    let mut m = vec![0.0f64; b * t];
    for (bi, &l) in lengths.iter().enumerate() {
        for i in l..t {
            m[bi * t + i] = MASK_NEG;
        }
    }
    Tensor::build(vec![b, 1, 1, t], m, crate::tensor::Precision::F64)
}

/// Additive causal mask `[1, 1, L, L]`: position i may attend to j <= i.
pub fn causal_mask(l: usize) -> Tensor {
    let mut m = vec![0.0f64; l * l];
    for i in 0..l {
        for j in i + 1..l {
            m[i * l + j] = MASK_NEG;
        }
    }
    Tensor::build(vec![1, 1, l, l], m, crate::tensor::Precision::F64)
}

/// Combined causal and key mask for decoder self-attention over padded
/// target batches: `[B, 1, L, L]`.
pub fn causal_key_mask(lengths: &[usize], l: usize) -> Tensor {
    let b = lengths.len();
    let mut m = vec![0.0f64; b * l * l];
    for (bi, &len) in lengths.iter().enumerate() {
        for i in 0..l {
            for j in 0..l {
                if j > i || j >= len {
                    m[(bi * l + i) * l + j] = MASK_NEG;
                }
            }
        }
    }
    Tensor::build(vec![b, 1, l, l], m, crate::tensor::Precision::F64)
}

/// Multiplicative frame mask `[B, T, 1]`: one inside the length, zero after.
pub fn frame_mask(lengths: &[usize], t: usize) -> Tensor {
    let b = lengths.len();
    let mut m = vec![0.0f64; b * t];
    for (bi, &l) in lengths.iter().enumerate() {
        for i in 0..l.min(t) {
            m[bi * t + i] = 1.0;
        }
    }
    Tensor::build(vec![b, t, 1], m, crate::tensor::Precision::F64)
}

/// Sinusoidal positional encoding `[len, dim]`.
pub fn sinusoidal_pe(len: usize, dim: usize) -> Tensor {
    let mut pe = vec![0.0f64; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let freq = math::powf(10_000.0, -(2.0 * i as f64) / dim as f64);
            let angle = pos as f64 * freq;
            pe[pos * dim + 2 * i] = math::sin(angle);
            pe[pos * dim + 2 * i + 1] = math::cos(angle);
        }
        if dim % 2 == 1 {
            let i = dim / 2;
            let freq = math::powf(10_000.0, -(2.0 * i as f64) / dim as f64);
            pe[pos * dim + dim - 1] = math::sin(pos as f64 * freq);
        }
    }
    Tensor::build(vec![len, dim], pe, crate::tensor::Precision::F64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes_and_bias() {
        let mut ctx = BuildCtx::new(11);
        let lin = Linear::new(&mut ctx, "l", 4, 3, true).unwrap();
        let tape = Tape::inference();
        let x = Tensor::zeros(&[2, 5, 4]);
        let y = lin.forward(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[2, 5, 3]);
        assert_eq!(ctx.params.len(), 2);
    }

    #[test]
    fn init_streams_depend_on_name_not_order() {
        let mut ctx1 = BuildCtx::new(5);
        let a1 = ctx1.param("alpha", &[4], Init::Normal(1.0)).unwrap();
        let _b1 = ctx1.param("beta", &[4], Init::Normal(1.0)).unwrap();
        let mut ctx2 = BuildCtx::new(5);
        let _b2 = ctx2.param("beta", &[4], Init::Normal(1.0)).unwrap();
        let a2 = ctx2.param("alpha", &[4], Init::Normal(1.0)).unwrap();
        assert_eq!(a1.to_vec(), a2.to_vec());
    }

    #[test]
    fn attention_output_shape_and_mask() {
        let mut ctx = BuildCtx::new(3);
        let mha = MultiHeadAttention::new(&mut ctx, "a", 8, 4, None).unwrap();
        let tape = Tape::inference();
        let mut rng = StreamRng::named(1, "x");
        let q = Tensor::randn(&[2, 3, 8], 1.0, &mut rng);
        let kv = Tensor::randn(&[2, 5, 8], 1.0, &mut rng);
        let mask = key_mask(&[5, 2], 5);
        let y = mha.forward(&tape, &q, &kv, Some(&mask)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 8]);
        assert!(y.all_finite());
    }

    #[test]
    fn masked_positions_do_not_influence_output() {
        // Change kv beyond the masked length; output must be identical.
        let mut ctx = BuildCtx::new(3);
        let mha = MultiHeadAttention::new(&mut ctx, "a", 8, 4, None).unwrap();
        let tape = Tape::inference();
        let mut rng = StreamRng::named(9, "x");
        let q = Tensor::randn(&[1, 2, 8], 1.0, &mut rng);
        let kv1 = Tensor::randn(&[1, 4, 8], 1.0, &mut rng);
        let mask = key_mask(&[2], 4);
        let y1 = mha.forward(&tape, &q, &kv1, Some(&mask)).unwrap();
        let kv2 = kv1.detach();
        kv2.update_data(|d| {
            for v in d[2 * 8..].iter_mut() {
                *v += 99.0;
            }
        });
        let y2 = mha.forward(&tape, &q, &kv2, Some(&mask)).unwrap();
        let (a, b) = (y1.to_vec(), y2.to_vec());
        for i in 0..a.len() {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_mask_blocks_future() {
        let m = causal_mask(3);
        let d = m.to_vec();
        assert_eq!(d[0 * 3 + 1], MASK_NEG);
        assert_eq!(d[2 * 3 + 1], 0.0);
    }

    #[test]
    fn pe_first_position_is_zero_one_pattern() {
        let pe = sinusoidal_pe(4, 6);
        let d = pe.to_vec();
        for i in 0..3 {
            assert_eq!(d[2 * i], 0.0);
            assert_eq!(d[2 * i + 1], 1.0);
        }
        // Position 1, dim 0: sin(1)
        assert!((d[6] - math::sin(1.0)).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_running_stats_update() {
        let mut ctx = BuildCtx::new(1);
        let bn = BatchNorm1d::new(&mut ctx, "bn", 2).unwrap();
        let tape = Tape::inference();
        let x = Tensor::from_vec(&[1, 2, 2], vec![4.0, 4.0, -2.0, -2.0]).unwrap();
        let _ = bn.forward(&tape, &x, None, true).unwrap();
        let m = bn.running_mean.to_vec();
        // momentum 0.1: 0.9*0 + 0.1*4 = 0.4
        assert!((m[0] - 0.4).abs() < 1e-12);
        assert!((m[1] + 0.2).abs() < 1e-12);
        // Eval uses the stored stats and is deterministic.
        let y = bn.forward(&tape, &x, None, false).unwrap();
        assert!(y.all_finite());
    }
}
