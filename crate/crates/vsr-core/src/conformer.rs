//! Conformer encoder: linear embedding followed by a stack of blocks, each
//! combining half-step feed-forward modules, relative-position self-attention
//! and a gated depthwise-convolution module.  Exposes a tap at a configurable
//! block for auxiliary prediction losses.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{
    key_mask, BatchNorm1d, BuildCtx, Dropout, FeedForward, Init, LayerNorm, Linear,
    MultiHeadAttention,
};
use crate::ops::conv::ConvSpec;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ConformerConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub head_dim: usize,
    pub dropout: f64,
    /// Depthwise convolution kernel; must be odd so time length is preserved.
    pub conv_kernel: usize,
    /// Block whose output feeds the auxiliary predictors; 0 taps the
    /// embedding itself.
    pub tap_layer: usize,
    /// Relative-position offsets are clamped to [-clip, clip].
    pub rel_clip: usize,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        ConformerConfig {
            num_blocks: 12,
            model_dim: 256,
            ff_dim: 2048,
            head_dim: 64,
            dropout: 0.1,
            conv_kernel: 31,
            tap_layer: 6,
            rel_clip: 64,
        }
    }
}

impl ConformerConfig {
    pub fn num_heads(&self) -> usize {
        self.model_dim / self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.model_dim % self.head_dim != 0 {
            return Err(Error::config(format!(
                "conformer: head_dim {} must divide model_dim {}",
                self.head_dim, self.model_dim
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "conformer: conv_kernel {} must be odd",
                self.conv_kernel
            )));
        }
        if self.tap_layer > self.num_blocks {
            return Err(Error::config(format!(
                "conformer: tap layer {} exceeds {} blocks",
                self.tap_layer, self.num_blocks
            )));
        }
        Ok(())
    }
}

pub struct EncoderOutput {
    /// Final block output `[B, T, model_dim]`.
    pub top: Tensor,
    /// Tap-block output, same shape as `top`.
    pub tap: Tensor,
    pub lengths: Vec<usize>,
}

/// Pointwise expansion with gating, depthwise temporal convolution, batch
/// norm, swish, pointwise projection, layer norm.
struct ConvModule {
    pw1: Linear,
    dw: Tensor,
    bn: BatchNorm1d,
    pw2: Linear,
    ln: LayerNorm,
    kernel: usize,
}

impl ConvModule {
    fn new(ctx: &mut BuildCtx, name: &str, dim: usize, kernel: usize) -> Result<Self> {
        Ok(ConvModule {
            pw1: Linear::new(ctx, &format!("{name}.pw1"), dim, 2 * dim, true)?,
            dw: ctx.param(&format!("{name}.dw"), &[dim, 1, kernel], Init::kaiming(kernel))?,
            bn: BatchNorm1d::new(ctx, &format!("{name}.bn"), dim)?,
            pw2: Linear::new(ctx, &format!("{name}.pw2"), dim, dim, true)?,
            ln: LayerNorm::new(ctx, &format!("{name}.ln"), dim)?,
            kernel,
        })
    }

    fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        fmask: &Tensor,
        lengths: &[usize],
        train: bool,
    ) -> Result<Tensor> {
        let dim = x.shape()[2];
        let h = self.pw1.forward(tape, x)?;
        let h = tape.glu(&h, 2)?;
        // Zero the padded tail so the temporal window never reads over a
        // sample boundary.
        let h = tape.mul(&h, fmask)?;
        let h = tape.transpose(&h, &[0, 2, 1])?;
        let spec = ConvSpec::new(&[1], &[(self.kernel - 1) / 2]).with_groups(dim);
        let h = tape.conv(&h, &self.dw, None, &spec)?;
        let h = self.bn.forward(tape, &h, Some(lengths), train)?;
        let h = tape.swish(&h)?;
        let h = tape.transpose(&h, &[0, 2, 1])?;
        let h = self.pw2.forward(tape, &h)?;
        self.ln.forward(tape, &h)
    }
}

struct ConformerBlock {
    ln_ff1: LayerNorm,
    ff1: FeedForward,
    ln_mha: LayerNorm,
    mha: MultiHeadAttention,
    conv: ConvModule,
    ln_ff2: LayerNorm,
    ff2: FeedForward,
    drop_mha: Dropout,
    drop_conv: Dropout,
}

impl ConformerBlock {
    fn new(ctx: &mut BuildCtx, name: &str, cfg: &ConformerConfig) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(ConformerBlock {
            ln_ff1: LayerNorm::new(ctx, &format!("{name}.ff1.ln"), d)?,
            ff1: FeedForward::new(ctx, &format!("{name}.ff1"), d, cfg.ff_dim, cfg.dropout)?,
            ln_mha: LayerNorm::new(ctx, &format!("{name}.mha.ln"), d)?,
            mha: MultiHeadAttention::new(
                ctx,
                &format!("{name}.mha"),
                d,
                cfg.head_dim,
                Some(cfg.rel_clip),
            )?,
            conv: ConvModule::new(ctx, &format!("{name}.conv"), d, cfg.conv_kernel)?,
            ln_ff2: LayerNorm::new(ctx, &format!("{name}.ff2.ln"), d)?,
            ff2: FeedForward::new(ctx, &format!("{name}.ff2"), d, cfg.ff_dim, cfg.dropout)?,
            drop_mha: ctx.dropout(&format!("{name}.mha.drop"), cfg.dropout),
            drop_conv: ctx.dropout(&format!("{name}.conv.drop"), cfg.dropout),
        })
    }

    fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        kmask: &Tensor,
        fmask: &Tensor,
        lengths: &[usize],
        train: bool,
    ) -> Result<Tensor> {
        let f = self.ff1.forward(tape, &self.ln_ff1.forward(tape, x)?, train)?;
        let h = tape.add(x, &tape.scale(&f, 0.5)?)?;
        let n = self.ln_mha.forward(tape, &h)?;
        let a = self.mha.forward(tape, &n, &n, Some(kmask))?;
        let h = tape.add(&h, &self.drop_mha.forward(tape, &a, train)?)?;
        let c = self.conv.forward(tape, &h, fmask, lengths, train)?;
        let h = tape.add(&h, &self.drop_conv.forward(tape, &c, train)?)?;
        let f = self.ff2.forward(tape, &self.ln_ff2.forward(tape, &h)?, train)?;
        tape.add(&h, &tape.scale(&f, 0.5)?)
    }
}

pub struct ConformerEncoder {
    pub cfg: ConformerConfig,
    input_dim: usize,
    embed: Linear,
    blocks: Vec<ConformerBlock>,
}

impl ConformerEncoder {
    pub fn new(
        ctx: &mut BuildCtx,
        name: &str,
        input_dim: usize,
        cfg: &ConformerConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let embed = Linear::new(ctx, &format!("{name}.embed"), input_dim, cfg.model_dim, true)?;
        let mut blocks = Vec::new();
        for i in 0..cfg.num_blocks {
            blocks.push(ConformerBlock::new(ctx, &format!("{name}.b{i}"), cfg)?);
        }
        Ok(ConformerEncoder { cfg: cfg.clone(), input_dim, embed, blocks })
    }

    /// Encode front-end features `[B, C, T]`, recording every block output.
    pub fn encode_traced(
        &self,
        tape: &Tape,
        features: &Tensor,
        lengths: &[usize],
        train: bool,
    ) -> Result<(EncoderOutput, Vec<Tensor>)> {
        let shape = features.shape();
        if shape.len() != 3 || shape[1] != self.input_dim {
            return Err(Error::shape(format!(
                "encoder: features must be [B, {}, T], got {shape:?}",
                self.input_dim
            )));
        }
        let (b, t) = (shape[0], shape[2]);
        if lengths.len() != b {
            return Err(Error::shape(format!(
                "encoder: {} lengths for batch of {b}",
                lengths.len()
            )));
        }
        if lengths.iter().any(|&l| l == 0 || l > t) {
            return Err(Error::data(format!(
                "encoder: lengths must be in 1..={t}, got {lengths:?}"
            )));
        }
        let kmask = key_mask(lengths, t);
        let fmask = crate::nn::frame_mask(lengths, t);
        let x = tape.transpose(features, &[0, 2, 1])?;
        let mut h = self.embed.forward(tape, &x)?;
        let mut per_block = Vec::with_capacity(self.cfg.num_blocks + 1);
        per_block.push(h.clone());
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(tape, &h, &kmask, &fmask, lengths, train)?;
            if !h.all_finite() {
                return Err(Error::numeric(format!(
                    "conformer block {i}: non-finite activations"
                )));
            }
            per_block.push(h.clone());
        }
        let tap = per_block[self.cfg.tap_layer].clone();
        Ok((EncoderOutput { top: h, tap, lengths: lengths.to_vec() }, per_block))
    }

    pub fn encode(
        &self,
        tape: &Tape,
        features: &Tensor,
        lengths: &[usize],
        train: bool,
    ) -> Result<EncoderOutput> {
        Ok(self.encode_traced(tape, features, lengths, train)?.0)
    }
}
