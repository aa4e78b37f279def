//! Small causal character-level language model used for shallow fusion
//! during decoding, plus its training loop.

use alloc::format;
use alloc::vec::Vec;
use core::cell::Cell;

use crate::error::{Error, Result};
use crate::losses::attention_loss;
use crate::nn::{
    causal_key_mask, sinusoidal_pe, BuildCtx, Dropout, Embedding, FeedForward, LayerNorm, Linear,
    MultiHeadAttention, ParamMap,
};
use crate::optim::{Adam, AdamConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vocab::{BLANK, EOS, SOS, UNK};

#[derive(Debug, Clone)]
pub struct LmConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub head_dim: usize,
    pub dropout: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { num_blocks: 2, model_dim: 128, ff_dim: 512, head_dim: 64, dropout: 0.1 }
    }
}

struct LmBlock {
    ln_attn: LayerNorm,
    mha: MultiHeadAttention,
    drop_attn: Dropout,
    ln_ff: LayerNorm,
    ff: FeedForward,
    drop_ff: Dropout,
}

impl LmBlock {
    fn new(ctx: &mut BuildCtx, name: &str, cfg: &LmConfig) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(LmBlock {
            ln_attn: LayerNorm::new(ctx, &format!("{name}.attn.ln"), d)?,
            mha: MultiHeadAttention::new(ctx, &format!("{name}.attn"), d, cfg.head_dim, None)?,
            drop_attn: ctx.dropout(&format!("{name}.attn.drop"), cfg.dropout),
            ln_ff: LayerNorm::new(ctx, &format!("{name}.ff.ln"), d)?,
            ff: FeedForward::new(ctx, &format!("{name}.ff"), d, cfg.ff_dim, cfg.dropout)?,
            drop_ff: ctx.dropout(&format!("{name}.ff.drop"), cfg.dropout),
        })
    }

    fn forward(&self, tape: &Tape, x: &Tensor, mask: &Tensor, train: bool) -> Result<Tensor> {
        let n = self.ln_attn.forward(tape, x)?;
        let a = self.mha.forward(tape, &n, &n, Some(mask))?;
        let h = tape.add(x, &self.drop_attn.forward(tape, &a, train)?)?;
        let n = self.ln_ff.forward(tape, &h)?;
        let f = self.ff.forward(tape, &n, train)?;
        tape.add(&h, &self.drop_ff.forward(tape, &f, train)?)
    }
}

/// Causal transformer over characters.  `forward` gives teacher-forced
/// next-token log-probabilities; `score_step` the distribution after one
/// prefix, used by the beam search for fusion.
pub struct CharLm {
    pub cfg: LmConfig,
    vocab_size: usize,
    embed: Embedding,
    drop_embed: Dropout,
    blocks: Vec<LmBlock>,
    ln_final: LayerNorm,
    head: Linear,
    unk_warnings: Cell<u64>,
}

impl CharLm {
    pub fn new(ctx: &mut BuildCtx, name: &str, vocab_size: usize, cfg: &LmConfig) -> Result<Self> {
        if cfg.head_dim == 0 || cfg.model_dim % cfg.head_dim != 0 {
            return Err(Error::config(format!(
                "lm: head_dim {} must divide model_dim {}",
                cfg.head_dim, cfg.model_dim
            )));
        }
        let mut blocks = Vec::new();
        for i in 0..cfg.num_blocks {
            blocks.push(LmBlock::new(ctx, &format!("{name}.b{i}"), cfg)?);
        }
        Ok(CharLm {
            cfg: cfg.clone(),
            vocab_size,
            embed: Embedding::new(ctx, &format!("{name}.embed"), vocab_size, cfg.model_dim)?,
            drop_embed: ctx.dropout(&format!("{name}.embed.drop"), cfg.dropout),
            blocks,
            ln_final: LayerNorm::new(ctx, &format!("{name}.final.ln"), cfg.model_dim)?,
            head: Linear::new(ctx, &format!("{name}.head"), cfg.model_dim, vocab_size, true)?,
            unk_warnings: Cell::new(0),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// How many out-of-vocabulary tokens `score_step` has remapped to unk.
    pub fn unk_warnings(&self) -> u64 {
        self.unk_warnings.get()
    }

    /// Teacher-forced pass over token rows (each starting with sos).
    /// Returns `[B, L_max, V]` log-probabilities; positions beyond a row's
    /// length are garbage the caller must mask.
    pub fn forward(&self, tape: &Tape, tokens: &[&[usize]], train: bool) -> Result<Tensor> {
        for row in tokens {
            if row.is_empty() || row[0] != SOS {
                return Err(Error::config("lm: every token row must start with the sos token"));
            }
            if row.iter().any(|&t| t >= self.vocab_size) {
                return Err(Error::data("lm: token outside vocabulary"));
            }
        }
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
        let e = tape.add(&e, &sinusoidal_pe(l_max, d))?;
        let mut h = self.drop_embed.forward(tape, &e, train)?;
        let mask = causal_key_mask(&row_lengths, l_max);
        for block in &self.blocks {
            h = block.forward(tape, &h, &mask, train)?;
        }
        let h = self.ln_final.forward(tape, &h)?;
        let logits = self.head.forward(tape, &h)?;
        tape.log_softmax_last(&logits)
    }

    /// Next-character log-probabilities after `prefix` (which starts with
    /// sos).  Tokens outside the vocabulary are remapped to unk and counted
    /// in [`CharLm::unk_warnings`].
    pub fn score_step(&self, tape: &Tape, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.is_empty() || prefix[0] != SOS {
            return Err(Error::config("lm: prefix must start with the sos token"));
        }
        let mut row = prefix.to_vec();
        for t in row.iter_mut() {
            if *t >= self.vocab_size {
                *t = UNK;
                self.unk_warnings.set(self.unk_warnings.get() + 1);
            }
        }
        let out = self.forward(tape, &[&row], false)?;
        let v = self.vocab_size;
        let l = row.len();
        let data = out.data();
        Ok(data[(l - 1) * v..l * v].to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            epochs: 5,
            batch_size: 16,
            optim: AdamConfig { peak_lr: 0.003, warmup_steps: 100, ..AdamConfig::default() },
        }
    }
}

fn check_text_rows(vocab_size: usize, rows: &[Vec<usize>]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("lm: empty training text"));
    }
    for row in rows {
        for &t in row {
            if t >= vocab_size || t == BLANK || t == SOS || t == EOS {
                return Err(Error::data(format!("lm: training token {t} is not a character")));
            }
        }
    }
    Ok(())
}

/// Mean per-token perplexity of the model over character rows (specials
/// excluded; sos/eos are added internally).
pub fn lm_perplexity(lm: &CharLm, rows: &[Vec<usize>]) -> Result<f64> {
    check_text_rows(lm.vocab_size(), rows)?;
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    for chunk in rows.chunks(32) {
        let inputs: Vec<Vec<usize>> = chunk
            .iter()
            .map(|r| {
                let mut v = alloc::vec![SOS];
                v.extend_from_slice(r);
                v
            })
            .collect();
        let targets: Vec<Vec<usize>> = chunk
            .iter()
            .map(|r| {
                let mut v = r.clone();
                v.push(EOS);
                v
            })
            .collect();
        let input_refs: Vec<&[usize]> = inputs.iter().map(|r| r.as_slice()).collect();
        let target_refs: Vec<&[usize]> = targets.iter().map(|r| r.as_slice()).collect();
        let tape = Tape::inference();
        let out = lm.forward(&tape, &input_refs, false)?;
        let loss = attention_loss(&tape, &out, &target_refs, 0.0)?;
        // The loss is the batch mean of per-row token-summed negative
        // log-likelihoods.
        total_nll += loss.item() * chunk.len() as f64;
        total_tokens += targets.iter().map(|t| t.len()).sum::<usize>();
    }
    Ok(crate::math::exp(total_nll / total_tokens as f64))
}

/// Train the language model on character rows.  Returns the perplexity on
/// the training text measured after each epoch.
pub fn train_lm(
    lm: &CharLm,
    params: &ParamMap,
    rows: &[Vec<usize>],
    cfg: &LmTrainConfig,
) -> Result<Vec<f64>> {
    check_text_rows(lm.vocab_size(), rows)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::config("lm: epochs and batch_size must be positive"));
    }
    let mut adam = Adam::new(cfg.optim.clone());
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for chunk in rows.chunks(cfg.batch_size) {
            let inputs: Vec<Vec<usize>> = chunk
                .iter()
                .map(|r| {
                    let mut v = alloc::vec![SOS];
                    v.extend_from_slice(r);
                    v
                })
                .collect();
            let targets: Vec<Vec<usize>> = chunk
                .iter()
                .map(|r| {
                    let mut v = r.clone();
                    v.push(EOS);
                    v
                })
                .collect();
            let input_refs: Vec<&[usize]> = inputs.iter().map(|r| r.as_slice()).collect();
            let target_refs: Vec<&[usize]> = targets.iter().map(|r| r.as_slice()).collect();
            let tape = Tape::new();
            let out = lm.forward(&tape, &input_refs, true)?;
            let loss = attention_loss(&tape, &out, &target_refs, 0.0)?;
            params.zero_grads();
            tape.backward(&loss)?;
            adam.step(params)?;
        }
        per_epoch.push(lm_perplexity(lm, rows)?);
    }
    Ok(per_epoch)
}
