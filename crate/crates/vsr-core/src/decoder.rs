//! Transformer decoder producing character log-probabilities by attending
//! over encoder memory, plus the frame-wise CTC output head.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{
    causal_key_mask, key_mask, sinusoidal_pe, BuildCtx, Dropout, Embedding, FeedForward,
    LayerNorm, Linear, MultiHeadAttention, MASK_NEG,
};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vocab::{BLANK, EOS, SOS};

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub head_dim: usize,
    pub dropout: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { num_blocks: 6, model_dim: 256, ff_dim: 2048, head_dim: 64, dropout: 0.1 }
    }
}

struct DecoderBlock {
    ln_self: LayerNorm,
    self_mha: MultiHeadAttention,
    drop_self: Dropout,
    ln_cross: LayerNorm,
    cross_mha: MultiHeadAttention,
    drop_cross: Dropout,
    ln_ff: LayerNorm,
    ff: FeedForward,
    drop_ff: Dropout,
}

impl DecoderBlock {
    fn new(ctx: &mut BuildCtx, name: &str, cfg: &DecoderConfig) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(DecoderBlock {
            ln_self: LayerNorm::new(ctx, &format!("{name}.self.ln"), d)?,
            self_mha: MultiHeadAttention::new(ctx, &format!("{name}.self"), d, cfg.head_dim, None)?,
            drop_self: ctx.dropout(&format!("{name}.self.drop"), cfg.dropout),
            ln_cross: LayerNorm::new(ctx, &format!("{name}.cross.ln"), d)?,
            cross_mha: MultiHeadAttention::new(
                ctx,
                &format!("{name}.cross"),
                d,
                cfg.head_dim,
                None,
            )?,
            drop_cross: ctx.dropout(&format!("{name}.cross.drop"), cfg.dropout),
            ln_ff: LayerNorm::new(ctx, &format!("{name}.ff.ln"), d)?,
            ff: FeedForward::new(ctx, &format!("{name}.ff"), d, cfg.ff_dim, cfg.dropout)?,
            drop_ff: ctx.dropout(&format!("{name}.ff.drop"), cfg.dropout),
        })
    }

    fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        memory: &Tensor,
        self_mask: &Tensor,
        mem_mask: &Tensor,
        train: bool,
    ) -> Result<Tensor> {
        let n = self.ln_self.forward(tape, x)?;
        let a = self.self_mha.forward(tape, &n, &n, Some(self_mask))?;
        let h = tape.add(x, &self.drop_self.forward(tape, &a, train)?)?;
        let n = self.ln_cross.forward(tape, &h)?;
        let a = self.cross_mha.forward(tape, &n, memory, Some(mem_mask))?;
        let h = tape.add(&h, &self.drop_cross.forward(tape, &a, train)?)?;
        let n = self.ln_ff.forward(tape, &h)?;
        let f = self.ff.forward(tape, &n, train)?;
        tape.add(&h, &self.drop_ff.forward(tape, &f, train)?)
    }
}

pub struct TransformerDecoder {
    pub cfg: DecoderConfig,
    vocab_size: usize,
    embed: Embedding,
    drop_embed: Dropout,
    blocks: Vec<DecoderBlock>,
    ln_final: LayerNorm,
    head: Linear,
}

impl TransformerDecoder {
    pub fn new(
        ctx: &mut BuildCtx,
        name: &str,
        vocab_size: usize,
        cfg: &DecoderConfig,
    ) -> Result<Self> {
        if cfg.head_dim == 0 || cfg.model_dim % cfg.head_dim != 0 {
            return Err(Error::config(format!(
                "decoder: head_dim {} must divide model_dim {}",
                cfg.head_dim, cfg.model_dim
            )));
        }
        let mut blocks = Vec::new();
        for i in 0..cfg.num_blocks {
            blocks.push(DecoderBlock::new(ctx, &format!("{name}.b{i}"), cfg)?);
        }
        Ok(TransformerDecoder {
            cfg: cfg.clone(),
            vocab_size,
            embed: Embedding::new(ctx, &format!("{name}.embed"), vocab_size, cfg.model_dim)?,
            drop_embed: ctx.dropout(&format!("{name}.embed.drop"), cfg.dropout),
            blocks,
            ln_final: LayerNorm::new(ctx, &format!("{name}.final.ln"), cfg.model_dim)?,
            head: Linear::new(ctx, &format!("{name}.head"), cfg.model_dim, vocab_size, true)?,
        })
    }

    fn check_rows(&self, tokens: &[&[usize]]) -> Result<()> {
        for row in tokens {
            if row.is_empty() || row[0] != SOS {
                return Err(Error::config(
                    "decoder: every token row must start with the sos token",
                ));
            }
            if row.iter().any(|&t| t >= self.vocab_size) {
                return Err(Error::data("decoder: token outside vocabulary"));
            }
        }
        Ok(())
    }

    /// Teacher-forced pass.  `tokens` rows start with sos; rows are padded
    /// internally.  Returns log-probabilities `[B, L_max, V]` with blank
    /// masked out; positions beyond a row's length carry garbage and must be
    /// masked by the consumer.
    pub fn forward(
        &self,
        tape: &Tape,
        memory: &Tensor,
        mem_lengths: &[usize],
        tokens: &[&[usize]],
        train: bool,
    ) -> Result<Tensor> {
        let b = tokens.len();
        if memory.rank() != 3 || memory.shape()[0] != b {
            return Err(Error::shape(format!(
                "decoder: memory {:?} does not match batch of {b}",
                memory.shape()
            )));
        }
        if mem_lengths.len() != b {
            return Err(Error::shape("decoder: memory lengths do not match batch"));
        }
        self.check_rows(tokens)?;
        let t_mem = memory.shape()[1];
        let l_max = tokens.iter().map(|r| r.len()).max().unwrap_or(0);
        let row_lengths: Vec<usize> = tokens.iter().map(|r| r.len()).collect();
        let padded: Vec<Vec<usize>> = tokens
            .iter()
            .map(|r| {
                let mut v = r.to_vec();
                v.resize(l_max, EOS);
                v
            })
            .collect();
        let d = self.cfg.model_dim;
        let e = self.embed.forward(tape, &padded)?;
        let e = tape.scale(&e, crate::math::sqrt(d as f64))?;
        let pe = sinusoidal_pe(l_max, d);
        let e = tape.add(&e, &pe)?;
        let mut h = self.drop_embed.forward(tape, &e, train)?;
        let self_mask = causal_key_mask(&row_lengths, l_max);
        let mem_mask = key_mask(mem_lengths, t_mem);
        for block in &self.blocks {
            h = block.forward(tape, &h, memory, &self_mask, &mem_mask, train)?;
        }
        let h = self.ln_final.forward(tape, &h)?;
        let logits = self.head.forward(tape, &h)?;
        let logits = mask_index(tape, &logits, &[BLANK])?;
        tape.log_softmax_last(&logits)
    }

    /// Next-token log-probabilities after the given prefix: the last
    /// position of a teacher-forced pass.
    pub fn decode_step(
        &self,
        tape: &Tape,
        memory: &Tensor,
        mem_lengths: &[usize],
        prefix: &[usize],
    ) -> Result<Vec<f64>> {
        let out = self.forward(tape, memory, mem_lengths, &[prefix], false)?;
        let l = prefix.len();
        let v = self.vocab_size;
        let data = out.data();
        Ok(data[(l - 1) * v..l * v].to_vec())
    }
}

/// Adds a large negative constant to the chosen vocabulary indices so they
/// vanish under softmax.
fn mask_index(tape: &Tape, logits: &Tensor, banned: &[usize]) -> Result<Tensor> {
    let v = *logits.shape().last().unwrap();
    let mut m = alloc::vec![0.0f64; v];
    for &i in banned {
        m[i] = MASK_NEG;
    }
    let mask = Tensor::build(alloc::vec![v], m, crate::tensor::Precision::F64);
    tape.add(logits, &mask)
}

/// Frame-wise CTC head over encoder output: linear projection to the
/// vocabulary with sos/eos banned, then log-softmax.
pub struct CtcHead {
    head: Linear,
}

impl CtcHead {
    pub fn new(
        ctx: &mut BuildCtx,
        name: &str,
        model_dim: usize,
        vocab_size: usize,
    ) -> Result<Self> {
        Ok(CtcHead { head: Linear::new(ctx, name, model_dim, vocab_size, true)? })
    }

    /// `[B, T, D] -> [B, T, V]` log-probabilities.
    pub fn forward(&self, tape: &Tape, encoder_top: &Tensor) -> Result<Tensor> {
        let logits = self.head.forward(tape, encoder_top)?;
        let logits = mask_index(tape, &logits, &[SOS, EOS])?;
        tape.log_softmax_last(&logits)
    }
}
