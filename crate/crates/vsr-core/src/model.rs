//! Full recognizer assembly: front-end → conformer encoder → CTC head and
//! transformer decoder, with optional auxiliary predictors over the encoder
//! tap, plus parameter snapshots and checkpoint averaging.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::beam::{beam_search, BeamHypothesis, DecodeConfig, StepScorer};
use crate::conformer::{ConformerConfig, ConformerEncoder, EncoderOutput};
use crate::decoder::{CtcHead, DecoderConfig, TransformerDecoder};
use crate::error::{Error, Result};
use crate::frontend::{Frontend, FrontendConfig, FrontendKind};
use crate::lm::CharLm;
use crate::nn::{BuildCtx, Dropout, Linear, ParamMap, StateMap};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Samples of raw audio per acoustic frame (16 kHz waveform at 25 fps).
pub const AUDIO_SAMPLES_PER_FRAME: usize = 640;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub frontend: FrontendConfig,
    pub encoder: ConformerConfig,
    pub decoder: DecoderConfig,
    /// Build the audio-teacher predictor head.
    pub aux_audio: bool,
    /// Build the visual-teacher predictor head.
    pub aux_visual: bool,
    /// Width of the teacher representations the predictors regress onto.
    pub aux_dim: usize,
}

impl ModelConfig {
    /// Full-scale lipreading configuration: 3D-conv visual front-end into
    /// the default encoder/decoder stack, predictors at the encoder width.
    pub fn paper_visual() -> Self {
        let encoder = ConformerConfig::default();
        let aux_dim = encoder.model_dim;
        ModelConfig {
            frontend: FrontendConfig::visual(1.0),
            encoder,
            decoder: DecoderConfig::default(),
            aux_audio: true,
            aux_visual: true,
            aux_dim,
        }
    }

    /// Small configuration that trains in minutes on one CPU core while
    /// keeping the architecture shape: 64-wide encoder, 3 encoder blocks,
    /// 2 decoder blocks, tap at block 2.
    pub fn desk(frontend: FrontendConfig) -> Self {
        let encoder = ConformerConfig {
            num_blocks: 3,
            model_dim: 64,
            ff_dim: 256,
            head_dim: 16,
            dropout: 0.1,
            conv_kernel: 7,
            tap_layer: 2,
            rel_clip: 16,
        };
        let decoder = DecoderConfig {
            num_blocks: 2,
            model_dim: 64,
            ff_dim: 256,
            head_dim: 16,
            dropout: 0.1,
        };
        ModelConfig {
            frontend,
            encoder,
            decoder,
            aux_audio: true,
            aux_visual: true,
            aux_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.decoder.model_dim != self.encoder.model_dim {
            return Err(Error::config(format!(
                "model: decoder width {} must match encoder width {} for cross-attention",
                self.decoder.model_dim, self.encoder.model_dim
            )));
        }
        if (self.aux_audio || self.aux_visual) && self.aux_dim == 0 {
            return Err(Error::config("model: auxiliary predictors need aux_dim > 0"));
        }
        Ok(())
    }

    /// Encoder frames produced for an input of `input_len` time steps:
    /// audio front-ends emit one frame per 640 samples, the others
    /// preserve the frame count.
    pub fn encoder_length(&self, input_len: usize) -> usize {
        match self.frontend.kind {
            FrontendKind::Audio1dResidual | FrontendKind::Audio1dCnn => {
                input_len / AUDIO_SAMPLES_PER_FRAME
            }
            FrontendKind::Visual3dResidual | FrontendKind::Passthrough => input_len,
        }
    }
}

/// One teacher-forced pass of the whole recognizer.
pub struct ForwardOutput {
    pub encoder: EncoderOutput,
    /// `[B, T, V]` frame-wise log-probabilities for the CTC loss.
    pub ctc_logprobs: Tensor,
    /// `[B, L, V]` next-token log-probabilities for the attention loss.
    pub att_logprobs: Tensor,
}

pub struct VsrModel {
    pub cfg: ModelConfig,
    pub vocab_size: usize,
    pub frontend: Frontend,
    pub encoder: ConformerEncoder,
    pub ctc_head: CtcHead,
    pub decoder: TransformerDecoder,
    pub pred_audio: Option<Linear>,
    pub pred_visual: Option<Linear>,
    pub params: ParamMap,
    pub states: StateMap,
    pub dropouts: Vec<Dropout>,
}

impl VsrModel {
    /// Parameter initialization streams are derived from parameter names,
    /// so the same seed and config always build the same model.
    pub fn new(seed: u64, vocab_size: usize, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if vocab_size <= crate::vocab::SPECIALS {
            return Err(Error::config(format!(
                "model: vocabulary of {vocab_size} has no room for characters"
            )));
        }
        let mut ctx = BuildCtx::new(seed);
        let frontend = Frontend::new(&mut ctx, "fe", &cfg.frontend)?;
        let encoder =
            ConformerEncoder::new(&mut ctx, "enc", cfg.frontend.output_dim, &cfg.encoder)?;
        let ctc_head = CtcHead::new(&mut ctx, "ctc", cfg.encoder.model_dim, vocab_size)?;
        let decoder = TransformerDecoder::new(&mut ctx, "dec", vocab_size, &cfg.decoder)?;
        let pred_audio = if cfg.aux_audio {
            Some(Linear::new(&mut ctx, "aux.audio", cfg.encoder.model_dim, cfg.aux_dim, true)?)
        } else {
            None
        };
        let pred_visual = if cfg.aux_visual {
            Some(Linear::new(&mut ctx, "aux.visual", cfg.encoder.model_dim, cfg.aux_dim, true)?)
        } else {
            None
        };
        let dropouts = ctx.take_dropouts();
        Ok(VsrModel {
            cfg: cfg.clone(),
            vocab_size,
            frontend,
            encoder,
            ctc_head,
            decoder,
            pred_audio,
            pred_visual,
            params: ctx.params,
            states: ctx.states,
            dropouts,
        })
    }

    /// Teacher-forced forward pass.  `x` is the raw front-end input,
    /// `lengths` the valid input lengths per sample, and `tokens` the
    /// decoder input rows (each starting with the sos token).
    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        lengths: &[usize],
        tokens: &[&[usize]],
        train: bool,
    ) -> Result<ForwardOutput> {
        let feats = self.frontend.forward(tape, x, train)?;
        let enc_lengths: Vec<usize> =
            lengths.iter().map(|&l| self.cfg.encoder_length(l)).collect();
        if enc_lengths.iter().any(|&l| l == 0) {
            return Err(Error::data(format!(
                "model: input lengths {lengths:?} leave an empty encoder sequence"
            )));
        }
        let encoder = self.encoder.encode(tape, &feats, &enc_lengths, train)?;
        let ctc_logprobs = self.ctc_head.forward(tape, &encoder.top)?;
        let att_logprobs =
            self.decoder.forward(tape, &encoder.top, &enc_lengths, tokens, train)?;
        Ok(ForwardOutput { encoder, ctc_logprobs, att_logprobs })
    }

    /// Frozen-teacher representation: the encoder tap in eval mode,
    /// detached from any gradient bookkeeping.
    pub fn teacher_tap(&self, x: &Tensor, lengths: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let tape = Tape::inference();
        let feats = self.frontend.forward(&tape, x, false)?;
        let enc_lengths: Vec<usize> =
            lengths.iter().map(|&l| self.cfg.encoder_length(l)).collect();
        let out = self.encoder.encode(&tape, &feats, &enc_lengths, false)?;
        Ok((out.tap.detach(), enc_lengths))
    }

    /// Joint CTC/attention/LM beam decode of one utterance (`x` carries a
    /// batch dimension of 1 and no padding).  Returns finished hypotheses,
    /// best first.
    pub fn decode_utterance(
        &self,
        x: &Tensor,
        lm: Option<&CharLm>,
        cfg: &DecodeConfig,
    ) -> Result<Vec<BeamHypothesis>> {
        if x.rank() < 2 || x.shape()[0] != 1 {
            return Err(Error::shape(format!(
                "decode: expected a single-sample batch, got {:?}",
                x.shape()
            )));
        }
        let tape = Tape::inference();
        let feats = self.frontend.forward(&tape, x, false)?;
        let t = feats.shape()[2];
        if t == 0 {
            return Err(Error::data("decode: utterance produced zero encoder frames"));
        }
        let enc = self.encoder.encode(&tape, &feats, &[t], false)?;
        let ctc = self.ctc_head.forward(&tape, &enc.top)?;
        let ctc = tape.reshape(&ctc, &[t, self.vocab_size])?;
        let att = DecoderScorer {
            decoder: &self.decoder,
            tape: &tape,
            memory: enc.top,
            mem_lengths: vec![t],
        };
        let lm_scorer = lm.map(|m| LmScorer { lm: m, tape: &tape });
        let lm_dyn = lm_scorer.as_ref().map(|s| s as &dyn StepScorer);
        beam_search(&att, lm_dyn, &ctc, cfg)
    }
}

/// Attention-decoder hypothesis scorer over a fixed encoder memory.
pub struct DecoderScorer<'a> {
    pub decoder: &'a TransformerDecoder,
    pub tape: &'a Tape,
    pub memory: Tensor,
    pub mem_lengths: Vec<usize>,
}

impl StepScorer for DecoderScorer<'_> {
    fn step(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.decoder.decode_step(self.tape, &self.memory, &self.mem_lengths, prefix)
    }
}

/// Shallow-fusion language-model scorer.
pub struct LmScorer<'a> {
    pub lm: &'a CharLm,
    pub tape: &'a Tape,
}

impl StepScorer for LmScorer<'_> {
    fn step(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.lm.score_step(self.tape, prefix)
    }
}

/// A tensor's contents frozen outside the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSnapshot {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorSnapshot {
    pub fn of(t: &Tensor) -> Self {
        TensorSnapshot { shape: t.shape().to_vec(), data: t.to_vec() }
    }
}

/// Named-parameter snapshot with training metadata.  Restoring one into a
/// freshly built model reproduces every forward output bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: BTreeMap<String, TensorSnapshot>,
    pub states: BTreeMap<String, TensorSnapshot>,
    /// Named RNG streams: dropout layers plus any trainer streams.
    pub rng: BTreeMap<String, [u64; 4]>,
    pub step: u64,
    pub epoch: u64,
    pub config_hash: u64,
    /// Steps of the snapshots folded into this one (singleton unless
    /// averaged).
    pub source_steps: Vec<u64>,
}

impl VsrModel {
    pub fn snapshot(&self, step: u64, epoch: u64, config_hash: u64) -> Checkpoint {
        let params = snapshot_tensors(self.params.iter());
        let states = snapshot_tensors(self.states.iter());
        let rng = self
            .dropouts
            .iter()
            .map(|d| (String::from(d.name()), d.rng_state()))
            .collect();
        Checkpoint { params, states, rng, step, epoch, config_hash, source_steps: vec![step] }
    }

    /// Overwrites every parameter and state tensor from the checkpoint and
    /// restores dropout streams recorded in it.  The name sets must match
    /// exactly and every shape must agree.
    pub fn load(&self, cp: &Checkpoint) -> Result<()> {
        restore_tensors(self.params.iter(), &cp.params, "parameter")?;
        restore_tensors(self.states.iter(), &cp.states, "state")?;
        for d in &self.dropouts {
            if let Some(&s) = cp.rng.get(d.name()) {
                d.restore_rng(s);
            }
        }
        Ok(())
    }
}

/// Snapshot every tensor of a name→tensor map, e.g. to persist a module
/// built outside [`VsrModel`] such as the language model.
pub fn snapshot_tensors<'a>(
    live: impl Iterator<Item = (&'a String, &'a Tensor)>,
) -> BTreeMap<String, TensorSnapshot> {
    live.map(|(n, t)| (n.clone(), TensorSnapshot::of(t))).collect()
}

/// Overwrite every tensor of a live map from saved snapshots.  The name
/// sets must match exactly and every shape must agree; `what` names the
/// tensor kind in errors.
pub fn restore_tensors<'a>(
    live: impl Iterator<Item = (&'a String, &'a Tensor)>,
    saved: &BTreeMap<String, TensorSnapshot>,
    what: &str,
) -> Result<()> {
    let mut seen = 0usize;
    for (name, tensor) in live {
        let snap = saved.get(name).ok_or_else(|| {
            Error::config(format!("checkpoint: missing {what} {name}"))
        })?;
        if snap.shape != tensor.shape() {
            return Err(Error::shape(format!(
                "checkpoint: {what} {name} has shape {:?}, model expects {:?}",
                snap.shape,
                tensor.shape()
            )));
        }
        tensor.update_data(|d| d.copy_from_slice(&snap.data));
        seen += 1;
    }
    if seen != saved.len() {
        let extra: Vec<&String> = saved.keys().collect();
        return Err(Error::config(format!(
            "checkpoint: {} saved {what}s for {seen} in the model ({extra:?})",
            saved.len()
        )));
    }
    Ok(())
}

/// Elementwise arithmetic mean of parameter and state snapshots.  All
/// checkpoints must come from the same configuration; metadata keeps every
/// source step, and RNG streams are taken from the newest checkpoint.
pub fn average_checkpoints(cps: &[Checkpoint]) -> Result<Checkpoint> {
    let first = cps.first().ok_or_else(|| Error::config("average: no checkpoints"))?;
    if cps.iter().any(|c| c.config_hash != first.config_hash) {
        return Err(Error::config("average: checkpoints come from different configs"));
    }
    let k = cps.len() as f64;
    let mut out = cps[cps.len() - 1].clone();
    for (name_map, label) in [(true, "parameter"), (false, "state")] {
        let keys: Vec<String> = if name_map {
            first.params.keys().cloned().collect()
        } else {
            first.states.keys().cloned().collect()
        };
        for name in keys {
            let mut mean: Option<TensorSnapshot> = None;
            for cp in cps {
                let map = if name_map { &cp.params } else { &cp.states };
                let snap = map.get(&name).ok_or_else(|| {
                    Error::config(format!("average: {label} {name} missing from a checkpoint"))
                })?;
                match &mut mean {
                    None => {
                        let mut m = snap.clone();
                        for v in &mut m.data {
                            *v /= k;
                        }
                        mean = Some(m);
                    }
                    Some(m) => {
                        if m.shape != snap.shape {
                            return Err(Error::shape(format!(
                                "average: {label} {name} has shapes {:?} and {:?}",
                                m.shape, snap.shape
                            )));
                        }
                        for (a, b) in m.data.iter_mut().zip(snap.data.iter()) {
                            *a += b / k;
                        }
                    }
                }
            }
            let target = if name_map { &mut out.params } else { &mut out.states };
            target.insert(name, mean.unwrap());
        }
    }
    out.source_steps = cps.iter().map(|c| c.step).collect();
    Ok(out)
}

/// FNV-1a over arbitrary bytes; used to stamp checkpoints with the
/// configuration they were trained under.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
