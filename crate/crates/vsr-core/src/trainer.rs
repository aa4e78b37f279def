//! Training and evaluation pipeline: frozen-teacher pre-training, curriculum
//! training of the full model with augmentation and auxiliary losses,
//! checkpoint-averaged evaluation, and the six-configuration ablation runner.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::augment::{spatial_augment, time_mask, SpatialConfig, TimeMaskConfig};
use crate::beam::DecodeConfig;
use crate::data::{
    curriculum_filter, make_batches, pad_stack, BatchPlanConfig, CurriculumSchedule,
};
use crate::error::{Error, Result};
use crate::lm::CharLm;
use crate::losses::{
    attention_loss, aux_loss, ctc_loss_batch, total_loss, vsr_loss, LossWeights, TeacherTargets,
};
use crate::metrics::{score_corpus, CorpusScore, Unit};
use crate::model::{average_checkpoints, fnv1a64, Checkpoint, ModelConfig, VsrModel};
use crate::optim::{Adam, AdamConfig};
use crate::rng::StreamRng;
use crate::synth::{CorpusMode, Split, SynthCorpus, Utterance};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vocab::{EOS, SOS};

/// Which recorded stream a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Visual,
    Audio,
}

/// The three switches the ablation study toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSwitches {
    pub audio_aux: bool,
    pub visual_aux: bool,
    pub time_masking: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        AblationSwitches { audio_aux: true, visual_aux: true, time_masking: true }
    }
}

impl AblationSwitches {
    pub fn label(&self) -> String {
        let mut off = Vec::new();
        if !self.audio_aux {
            off.push("audio aux");
        }
        if !self.visual_aux {
            off.push("visual aux");
        }
        if !self.time_masking {
            off.push("time masking");
        }
        if off.is_empty() {
            String::from("full")
        } else {
            format!("- {}", off.join(", "))
        }
    }
}

/// Everything a run needs, serialized alongside it.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub decode: DecodeConfig,
    pub curriculum: CurriculumSchedule,
    pub batch: BatchPlanConfig,
    pub mask: TimeMaskConfig,
    pub spatial: SpatialConfig,
    pub optim: AdamConfig,
    pub epochs: usize,
    /// Checkpoints folded into the evaluation model.
    pub average_last: usize,
    pub label_smoothing: f64,
    pub channel: Channel,
    pub seed: u64,
    pub switches: AblationSwitches,
}

impl ExperimentConfig {
    /// Desk-scale recipe: 64-wide model, 20 epochs, 500-step warmup,
    /// evaluation on the mean of the last 5 checkpoints.
    pub fn desk(model: ModelConfig, channel: Channel, seed: u64) -> Self {
        ExperimentConfig {
            model,
            loss: LossWeights::default(),
            decode: DecodeConfig {
                beam_size: 6,
                lambda: 0.1,
                beta: 0.0,
                max_len_ratio: 1.0,
                language: String::from("en"),
            },
            curriculum: CurriculumSchedule::default(),
            batch: BatchPlanConfig::default(),
            mask: TimeMaskConfig::default(),
            // The synthetic canvas is already the crop size, so spatial
            // augmentation is the identity at desk scale.
            spatial: SpatialConfig {
                crop_h: crate::synth::CANVAS,
                crop_w: crate::synth::CANVAS,
                flip_prob: 0.0,
            },
            optim: AdamConfig { peak_lr: 0.004, warmup_steps: 500, ..AdamConfig::default() },
            epochs: 20,
            average_last: 5,
            label_smoothing: 0.1,
            channel,
            seed,
            switches: AblationSwitches::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.decode.validate()?;
        self.curriculum.validate()?;
        self.mask.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("experiment: epochs must be at least 1"));
        }
        if self.average_last == 0 {
            return Err(Error::config("experiment: average_last must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config(format!(
                "experiment: label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        Ok(())
    }

    /// Loss weights with the ablation switches applied.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.loss.alpha,
            beta_audio: if self.switches.audio_aux { self.loss.beta_audio } else { 0.0 },
            beta_visual: if self.switches.visual_aux { self.loss.beta_visual } else { 0.0 },
        }
    }

    pub fn uses_teachers(&self) -> bool {
        let w = self.effective_weights();
        w.beta_audio > 0.0 || w.beta_visual > 0.0
    }

    /// Stable digest of the whole configuration, stamped into checkpoints.
    pub fn hash(&self) -> u64 {
        fnv1a64(format!("{self:?}").as_bytes())
    }
}

/// One optimizer step's loss components.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub stage: usize,
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub vsr: f64,
    pub ctc: f64,
    pub att: f64,
    pub aux: f64,
}

pub struct TrainOutput {
    pub model: VsrModel,
    /// One checkpoint per epoch, oldest first.
    pub checkpoints: Vec<Checkpoint>,
    pub logs: Vec<StepLog>,
    pub warnings: Vec<String>,
}

/// Frozen pre-trained recognizers whose encoder taps serve as regression
/// targets.
pub struct Teachers {
    pub asr: VsrModel,
    pub vsr: VsrModel,
}

/// Split `epochs` across curriculum stages: every stage gets an equal share
/// and the last stage absorbs the remainder.
pub fn distribute_epochs(epochs: usize, stages: usize) -> Vec<usize> {
    let base = epochs / stages;
    let mut out = vec![base; stages];
    out[stages - 1] += epochs % stages;
    out
}

fn utterance_input(u: &Utterance, channel: Channel) -> &Tensor {
    match channel {
        Channel::Visual => &u.visual,
        Channel::Audio => &u.audio,
    }
}

/// Prepend a batch dimension of 1.
fn batched(t: &Tensor) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Tensor::build(shape, t.to_vec(), t.precision())
}

fn token_rows(corpus: &SynthCorpus, utts: &[&Utterance]) -> Result<BatchTokens> {
    let mut ctc = Vec::with_capacity(utts.len());
    let mut dec_in = Vec::with_capacity(utts.len());
    let mut att = Vec::with_capacity(utts.len());
    for u in utts {
        let (tokens, unk) = corpus.vocab.encode(&u.transcript);
        if unk > 0 {
            return Err(Error::data(format!(
                "utterance {}: transcript contains characters outside the vocabulary",
                u.id
            )));
        }
        let mut di = vec![SOS];
        di.extend_from_slice(&tokens);
        let mut at = tokens.clone();
        at.push(EOS);
        ctc.push(tokens);
        dec_in.push(di);
        att.push(at);
    }
    Ok(BatchTokens { ctc, dec_in, att })
}

struct BatchTokens {
    ctc: Vec<Vec<usize>>,
    dec_in: Vec<Vec<usize>>,
    att: Vec<Vec<usize>>,
}

fn as_slices(rows: &[Vec<usize>]) -> Vec<&[usize]> {
    rows.iter().map(|r| r.as_slice()).collect()
}

/// Train the two baseline teachers — an acoustic recognizer and a visual
/// recognizer — on the corpus with the recognition loss only, no
/// augmentation, and freeze them.  Their encoder taps become the targets of
/// the auxiliary losses.
pub fn train_teachers(
    cfg: &ExperimentConfig,
    corpus: &SynthCorpus,
) -> Result<(Teachers, Vec<StepLog>)> {
    if corpus
        .split(Split::Train)
        .iter()
        .any(|u| u.audio.shape().iter().product::<usize>() == 0)
    {
        return Err(Error::data(
            "corpus has no audio channel; cannot build the acoustic teacher",
        ));
    }
    let mut asr_model = cfg.model.clone();
    asr_model.frontend = crate::frontend::FrontendConfig::passthrough(corpus.cfg.audio_dim);
    let mut base = cfg.clone();
    base.switches = AblationSwitches { audio_aux: false, visual_aux: false, time_masking: false };

    let mut asr_cfg = base.clone();
    asr_cfg.model = asr_model;
    asr_cfg.channel = Channel::Audio;
    asr_cfg.seed = cfg.seed ^ 0xA51D;
    let mut asr_out = train(&asr_cfg, corpus, None)?;

    let mut vsr_cfg = base;
    vsr_cfg.channel = Channel::Visual;
    vsr_cfg.seed = cfg.seed ^ 0x515D;
    let mut vsr_out = train(&vsr_cfg, corpus, None)?;

    let mut logs = core::mem::take(&mut asr_out.logs);
    logs.append(&mut vsr_out.logs);
    Ok((Teachers { asr: asr_out.model, vsr: vsr_out.model }, logs))
}

/// Untrained models with exactly the architecture and parameter names that
/// [`train_teachers`] produces, ready to receive saved teacher checkpoints.
pub fn teacher_shells(
    cfg: &ExperimentConfig,
    audio_dim: usize,
    vocab_size: usize,
) -> Result<Teachers> {
    let mut asr_model = cfg.model.clone();
    asr_model.frontend = crate::frontend::FrontendConfig::passthrough(audio_dim);
    asr_model.aux_audio = false;
    asr_model.aux_visual = false;
    let asr = VsrModel::new(cfg.seed ^ 0xA51D, vocab_size, &asr_model)?;
    let mut vsr_model = cfg.model.clone();
    vsr_model.aux_audio = false;
    vsr_model.aux_visual = false;
    let vsr = VsrModel::new(cfg.seed ^ 0x515D, vocab_size, &vsr_model)?;
    Ok(Teachers { asr, vsr })
}

/// Full training run.  Teachers must be provided exactly when some
/// auxiliary weight survives the ablation switches.
pub fn train(
    cfg: &ExperimentConfig,
    corpus: &SynthCorpus,
    teachers: Option<&Teachers>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let eff = cfg.effective_weights();
    let need_teachers = cfg.uses_teachers();
    match (need_teachers, teachers.is_some()) {
        (true, false) => {
            return Err(Error::config(
                "train: auxiliary weights are active but no teachers were provided",
            ))
        }
        (false, true) => {
            return Err(Error::config(
                "train: teachers provided but every auxiliary task is disabled",
            ))
        }
        _ => {}
    }
    if let Some(t) = teachers {
        for (name, m) in [("acoustic", &t.asr), ("visual", &t.vsr)] {
            if m.cfg.encoder.model_dim != cfg.model.aux_dim {
                return Err(Error::config(format!(
                    "train: {name} teacher is {} wide but predictors target {}",
                    m.cfg.encoder.model_dim, cfg.model.aux_dim
                )));
            }
        }
    }

    // Predictor heads exist exactly when their task is active, so a
    // disabled task has no parameters and therefore no gradients.
    let mut model_cfg = cfg.model.clone();
    model_cfg.aux_audio = eff.beta_audio > 0.0;
    model_cfg.aux_visual = eff.beta_visual > 0.0;
    let model = VsrModel::new(cfg.seed, corpus.vocab.size(), &model_cfg)?;

    let train_utts = corpus.split(Split::Train);
    if train_utts.is_empty() {
        return Err(Error::data("train: corpus has no training split"));
    }
    let frames: Vec<usize> = train_utts.iter().map(|u| u.frames).collect();
    let image_mode = corpus.cfg.mode == CorpusMode::Image;

    let mut adam = Adam::new(cfg.optim.clone());
    let config_hash = cfg.hash();
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut logs = Vec::new();
    let mut warnings = Vec::new();
    let stage_epochs = distribute_epochs(cfg.epochs, cfg.curriculum.caps.len());
    let mut epoch_no = 0usize;

    for (stage, &n_epochs) in stage_epochs.iter().enumerate() {
        if n_epochs == 0 {
            continue;
        }
        let kept = curriculum_filter(&frames, &cfg.curriculum, stage)?;
        for _ in 0..n_epochs {
            let mut batch_rng =
                StreamRng::named(cfg.seed, &format!("train.batches.e{epoch_no}"));
            let mut mask_rng = StreamRng::named(cfg.seed, &format!("train.mask.e{epoch_no}"));
            let mut spatial_rng =
                StreamRng::named(cfg.seed, &format!("train.spatial.e{epoch_no}"));
            let (batches, mut warns) =
                make_batches(&frames, &kept, &cfg.batch, None, &mut batch_rng)?;
            warnings.append(&mut warns);
            for batch in &batches {
                let utts: Vec<&Utterance> = batch.iter().map(|&i| train_utts[i]).collect();
                let lengths: Vec<usize> = utts.iter().map(|u| u.frames).collect();
                let tokens = token_rows(corpus, &utts)?;

                let tape = Tape::new();
                let mut inputs: Vec<Tensor> = Vec::with_capacity(utts.len());
                for u in &utts {
                    let mut x = utterance_input(u, cfg.channel).clone();
                    if image_mode && cfg.channel == Channel::Visual {
                        x = spatial_augment(&x, &cfg.spatial, true, &mut spatial_rng)?.0;
                    }
                    if cfg.switches.time_masking {
                        x = time_mask(&x, 1, &cfg.mask, &mut mask_rng)?.0;
                    }
                    inputs.push(x);
                }
                let refs: Vec<&Tensor> = inputs.iter().collect();
                let (x, _) = pad_stack(&refs, 1)?;

                let out = model.forward(&tape, &x, &lengths, &as_slices(&tokens.dec_in), true)?;
                let enc_lengths = out.encoder.lengths.clone();
                let l_ctc =
                    ctc_loss_batch(&tape, &out.ctc_logprobs, &enc_lengths, &as_slices(&tokens.ctc))?;
                let l_att = attention_loss(
                    &tape,
                    &out.att_logprobs,
                    &as_slices(&tokens.att),
                    cfg.label_smoothing,
                )?;
                let l_vsr = vsr_loss(&tape, &l_ctc, &l_att, eff.alpha)?;
                let (total, aux_val) = if let Some(t) = teachers {
                    let clean_audio: Vec<&Tensor> = utts.iter().map(|u| &u.audio).collect();
                    let clean_visual: Vec<&Tensor> = utts.iter().map(|u| &u.visual).collect();
                    let (xa, _) = pad_stack(&clean_audio, 1)?;
                    let (xv, _) = pad_stack(&clean_visual, 1)?;
                    let (g_a, _) = t.asr.teacher_tap(&xa, &lengths)?;
                    let (g_v, _) = t.vsr.teacher_tap(&xv, &lengths)?;
                    let targets = TeacherTargets { audio: g_a, visual: g_v };
                    let l_aux = aux_loss(
                        &tape,
                        &out.encoder.tap,
                        &targets,
                        model.pred_audio.as_ref(),
                        model.pred_visual.as_ref(),
                        &eff,
                        &enc_lengths,
                    )?;
                    let aux_val = l_aux.item();
                    (total_loss(&tape, &l_vsr, &l_aux)?, aux_val)
                } else {
                    (l_vsr.clone(), 0.0)
                };

                let loss_val = total.item();
                if !loss_val.is_finite() {
                    let ids: Vec<&str> = utts.iter().map(|u| u.id.as_str()).collect();
                    return Err(Error::numeric(format!(
                        "train: non-finite loss {loss_val} at step {} (stage {stage}, epoch \
                         {epoch_no}); batch ids {ids:?}, frame lengths {lengths:?}",
                        adam.steps() + 1
                    )));
                }
                model.params.zero_grads();
                tape.backward(&total)?;
                adam.step(&model.params)?;
                logs.push(StepLog {
                    stage,
                    epoch: epoch_no,
                    step: adam.steps(),
                    lr: crate::optim::lr_at(
                        adam.steps(),
                        cfg.optim.peak_lr,
                        cfg.optim.warmup_steps,
                    ),
                    total: loss_val,
                    vsr: l_vsr.item(),
                    ctc: l_ctc.item(),
                    att: l_att.item(),
                    aux: aux_val,
                });
            }
            checkpoints.push(model.snapshot(adam.steps(), epoch_no as u64, config_hash));
            epoch_no += 1;
        }
    }
    Ok(TrainOutput { model, checkpoints, logs, warnings })
}

/// The model evaluation uses: the elementwise mean of the last
/// `average_last` checkpoints loaded into a fresh model.
pub fn averaged_model(
    cfg: &ExperimentConfig,
    vocab_size: usize,
    checkpoints: &[Checkpoint],
) -> Result<VsrModel> {
    if checkpoints.is_empty() {
        return Err(Error::config("averaged model: no checkpoints"));
    }
    let k = cfg.average_last.min(checkpoints.len());
    let tail = &checkpoints[checkpoints.len() - k..];
    let avg = average_checkpoints(tail)?;
    let mut model_cfg = cfg.model.clone();
    let eff = cfg.effective_weights();
    model_cfg.aux_audio = eff.beta_audio > 0.0;
    model_cfg.aux_visual = eff.beta_visual > 0.0;
    let model = VsrModel::new(cfg.seed, vocab_size, &model_cfg)?;
    model.load(&avg)?;
    Ok(model)
}

/// One decoded utterance with its fused scores.
#[derive(Debug, Clone)]
pub struct DecodeRecord {
    pub id: String,
    pub text: String,
    pub combined: f64,
    pub ctc: f64,
    pub att: f64,
    pub lm: f64,
}

pub struct EvalOutput {
    pub wer: CorpusScore,
    pub cer: CorpusScore,
    pub decodes: Vec<DecodeRecord>,
}

/// Decode every utterance of a split (in id order) and score word and
/// character error rates against the references.
pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &VsrModel,
    corpus: &SynthCorpus,
    split: Split,
    lm: Option<&CharLm>,
) -> Result<EvalOutput> {
    let mut utts = corpus.split(split);
    if utts.is_empty() {
        return Err(Error::data(format!("evaluate: no utterances in the {} split", split.tag())));
    }
    utts.sort_by(|a, b| a.id.cmp(&b.id));
    let image_mode = corpus.cfg.mode == CorpusMode::Image;
    let mut decodes = Vec::with_capacity(utts.len());
    let mut hyp_pairs = Vec::with_capacity(utts.len());
    let mut ref_pairs = Vec::with_capacity(utts.len());
    let mut eval_rng = StreamRng::named(cfg.seed, "evaluate.spatial");
    for u in &utts {
        let mut x = utterance_input(u, cfg.channel).clone();
        if image_mode && cfg.channel == Channel::Visual {
            x = spatial_augment(&x, &cfg.spatial, false, &mut eval_rng)?.0;
        }
        let hyps = model.decode_utterance(&batched(&x), lm, &cfg.decode)?;
        let best = &hyps[0];
        let text = corpus.vocab.decode(&best.chars());
        decodes.push(DecodeRecord {
            id: u.id.clone(),
            text: text.clone(),
            combined: best.combined(cfg.decode.lambda, cfg.decode.beta),
            ctc: best.s_ctc,
            att: best.s_att,
            lm: best.s_lm,
        });
        hyp_pairs.push((u.id.clone(), text));
        ref_pairs.push((u.id.clone(), u.transcript.clone()));
    }
    let wer = score_corpus(&hyp_pairs, &ref_pairs, Unit::Word)?;
    let cer = score_corpus(&hyp_pairs, &ref_pairs, Unit::Char)?;
    Ok(EvalOutput { wer, cer, decodes })
}

/// Train the shallow-fusion character language model on the training-split
/// transcripts.  Returns the model, its parameters, and per-epoch training
/// perplexities.
pub fn train_corpus_lm(
    corpus: &SynthCorpus,
    lm_cfg: &crate::lm::LmConfig,
    train_cfg: &crate::lm::LmTrainConfig,
    seed: u64,
) -> Result<(CharLm, crate::nn::ParamMap, Vec<f64>)> {
    let rows: Vec<Vec<usize>> = corpus
        .split(Split::Train)
        .iter()
        .map(|u| corpus.vocab.encode(&u.transcript).0)
        .collect();
    let mut ctx = crate::nn::BuildCtx::new(seed);
    let lm = CharLm::new(&mut ctx, "lm", corpus.vocab.size(), lm_cfg)?;
    let ppl = crate::lm::train_lm(&lm, &ctx.params, &rows, train_cfg)?;
    Ok((lm, ctx.params, ppl))
}

/// Error rates of one seeded run, as percentages.
#[derive(Debug, Clone, Copy)]
pub struct SeedResult {
    pub seed: u64,
    pub wer: f64,
    pub cer: f64,
}

/// Per-seed results of one configuration with the summary statistics the
/// reports print: mean, sample standard deviation, and best (minimum).
#[derive(Debug, Clone)]
pub struct RunReport {
    pub label: String,
    pub seeds: Vec<SeedResult>,
    pub failures: Vec<String>,
}

fn mean_std_best(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        crate::math::sqrt(ss / (n - 1) as f64)
    };
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
    (mean, std, best)
}

impl RunReport {
    pub fn wer_stats(&self) -> (f64, f64, f64) {
        let v: Vec<f64> = self.seeds.iter().map(|s| s.wer).collect();
        mean_std_best(&v)
    }

    pub fn cer_stats(&self) -> (f64, f64, f64) {
        let v: Vec<f64> = self.seeds.iter().map(|s| s.cer).collect();
        mean_std_best(&v)
    }
}

pub struct AblationReport {
    pub rows: Vec<RunReport>,
}

/// The six ablation configurations, full model first.
pub fn ablation_grid() -> Vec<AblationSwitches> {
    vec![
        AblationSwitches { audio_aux: true, visual_aux: true, time_masking: true },
        AblationSwitches { audio_aux: false, visual_aux: true, time_masking: true },
        AblationSwitches { audio_aux: true, visual_aux: false, time_masking: true },
        AblationSwitches { audio_aux: false, visual_aux: false, time_masking: true },
        AblationSwitches { audio_aux: true, visual_aux: true, time_masking: false },
        AblationSwitches { audio_aux: false, visual_aux: false, time_masking: false },
    ]
}

/// Train one configuration end to end for one seed and return its test
/// error rates (percent).
pub fn run_one(
    cfg: &ExperimentConfig,
    corpus: &SynthCorpus,
    teachers: Option<&Teachers>,
    split: Split,
) -> Result<SeedResult> {
    let out = train(cfg, corpus, teachers)?;
    let model = averaged_model(cfg, corpus.vocab.size(), &out.checkpoints)?;
    let eval = evaluate(cfg, &model, corpus, split, None)?;
    let wer = eval.wer.rate.ok_or_else(|| Error::data("run: empty references"))? * 100.0;
    let cer = eval.cer.rate.ok_or_else(|| Error::data("run: empty references"))? * 100.0;
    Ok(SeedResult { seed: cfg.seed, wer, cer })
}

/// Run the six-configuration ablation over the given seeds.  Teachers are
/// trained once per seed and shared by every configuration that needs
/// them.  A failed run is recorded as an annotation in its row instead of
/// aborting the table.
pub fn ablate(
    cfg: &ExperimentConfig,
    corpus: &SynthCorpus,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.len() < 2 {
        return Err(Error::config("ablate: at least 2 seeds are required"));
    }
    let grid = ablation_grid();
    let mut rows: Vec<RunReport> = grid
        .iter()
        .map(|s| RunReport { label: s.label(), seeds: Vec::new(), failures: Vec::new() })
        .collect();
    for &seed in seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed;
        let needs_teachers = grid.iter().any(|s| {
            let mut c = seed_cfg.clone();
            c.switches = *s;
            c.uses_teachers()
        });
        let teachers = if needs_teachers {
            match train_teachers(&seed_cfg, corpus) {
                Ok((t, _)) => Some(t),
                Err(e) => {
                    for row in &mut rows {
                        row.failures.push(format!("seed {seed}: teacher training failed: {e}"));
                    }
                    continue;
                }
            }
        } else {
            None
        };
        for (row, switches) in rows.iter_mut().zip(grid.iter()) {
            let mut run_cfg = seed_cfg.clone();
            run_cfg.switches = *switches;
            let t = if run_cfg.uses_teachers() { teachers.as_ref() } else { None };
            match run_one(&run_cfg, corpus, t, Split::Test) {
                Ok(res) => row.seeds.push(res),
                Err(e) => row.failures.push(format!("seed {seed}: {e}")),
            }
        }
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::FrontendConfig;
    use crate::synth::{generate_corpus, injective_preset, CorpusConfig};

    fn tiny_model_cfg(input_dim: usize) -> ModelConfig {
        ModelConfig {
            frontend: FrontendConfig::passthrough(input_dim),
            encoder: crate::conformer::ConformerConfig {
                num_blocks: 1,
                model_dim: 16,
                ff_dim: 32,
                head_dim: 8,
                dropout: 0.0,
                conv_kernel: 3,
                tap_layer: 1,
                rel_clip: 8,
            },
            decoder: crate::decoder::DecoderConfig {
                num_blocks: 1,
                model_dim: 16,
                ff_dim: 32,
                head_dim: 8,
                dropout: 0.0,
            },
            aux_audio: true,
            aux_visual: true,
            aux_dim: 16,
        }
    }

    fn tiny_corpus(size: usize, seed: u64) -> SynthCorpus {
        let cfg = CorpusConfig::feature(size, seed, injective_preset());
        generate_corpus(&cfg).unwrap().0
    }

    fn tiny_exp(seed: u64, corpus: &SynthCorpus, epochs: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk(
            tiny_model_cfg(corpus.cfg.visual_dim),
            Channel::Visual,
            seed,
        );
        cfg.epochs = epochs;
        cfg.curriculum = CurriculumSchedule { caps: vec![600] };
        cfg.optim = AdamConfig { peak_lr: 0.002, warmup_steps: 10, ..AdamConfig::default() };
        cfg.decode.beam_size = 3;
        cfg
    }

    #[test]
    fn epoch_distribution_covers_all_stages() {
        assert_eq!(distribute_epochs(20, 5), vec![4, 4, 4, 4, 4]);
        assert_eq!(distribute_epochs(7, 3), vec![2, 2, 3]);
        assert_eq!(distribute_epochs(2, 5), vec![0, 0, 0, 0, 2]);
    }

    #[test]
    fn switch_labels_match_report_rows() {
        let grid = ablation_grid();
        assert_eq!(grid.len(), 6);
        assert_eq!(grid[0].label(), "full");
        assert_eq!(grid[1].label(), "- audio aux");
        assert_eq!(grid[5].label(), "- audio aux, visual aux, time masking");
    }

    #[test]
    fn config_hash_tracks_content() {
        let corpus = tiny_corpus(8, 3);
        let a = tiny_exp(1, &corpus, 1);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.label_smoothing = 0.2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn teachers_must_match_aux_activation() {
        let corpus = tiny_corpus(10, 4);
        let mut off = tiny_exp(1, &corpus, 1);
        off.switches = AblationSwitches { audio_aux: false, visual_aux: false, time_masking: false };
        let mut on = tiny_exp(1, &corpus, 1);
        on.switches = AblationSwitches::default();
        // Aux on without teachers, and teachers without aux, both fail.
        assert!(matches!(train(&on, &corpus, None), Err(Error::Config(_))));
        let (teachers, _) = train_teachers(&off, &corpus).unwrap();
        assert!(matches!(train(&off, &corpus, Some(&teachers)), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_total_is_exactly_the_recognition_loss() {
        let corpus = tiny_corpus(10, 5);
        let mut cfg = tiny_exp(2, &corpus, 1);
        cfg.switches = AblationSwitches { audio_aux: false, visual_aux: false, time_masking: false };
        let out = train(&cfg, &corpus, None).unwrap();
        assert!(!out.logs.is_empty());
        for log in &out.logs {
            assert_eq!(log.total, log.vsr, "no auxiliary term may leak into the baseline");
            assert_eq!(log.aux, 0.0);
            let recombined = cfg.loss.alpha * log.ctc + (1.0 - cfg.loss.alpha) * log.att;
            assert!((log.total - recombined).abs() < 1e-12);
        }
        assert_eq!(out.checkpoints.len(), 1);
    }

    #[test]
    fn first_batch_loss_is_reproducible() {
        let corpus = tiny_corpus(10, 6);
        let cfg = {
            let mut c = tiny_exp(3, &corpus, 1);
            c.switches =
                AblationSwitches { audio_aux: false, visual_aux: false, time_masking: true };
            c
        };
        let a = train(&cfg, &corpus, None).unwrap();
        let b = train(&cfg, &corpus, None).unwrap();
        assert_eq!(a.logs[0].total, b.logs[0].total);
        let last_a = &a.checkpoints[a.checkpoints.len() - 1];
        let last_b = &b.checkpoints[b.checkpoints.len() - 1];
        assert_eq!(last_a.params, last_b.params, "whole runs are bit-identical");
    }

    #[test]
    fn aux_training_runs_and_logs_the_term() {
        let corpus = tiny_corpus(10, 7);
        let cfg = tiny_exp(4, &corpus, 1);
        let (teachers, teacher_logs) = train_teachers(&cfg, &corpus).unwrap();
        assert!(!teacher_logs.is_empty());
        // Teacher tap extraction leaves no gradients anywhere.
        let u = corpus.split(Split::Train)[0];
        teachers.asr.teacher_tap(&batched(&u.audio), &[u.frames]).unwrap();
        for (_, p) in teachers.asr.params.iter() {
            assert!(p.grad().is_none());
        }
        let out = train(&cfg, &corpus, Some(&teachers)).unwrap();
        assert!(out.logs.iter().all(|l| l.aux > 0.0), "auxiliary term is live");
        assert!(out.logs.iter().all(|l| l.total > l.vsr));
        let model = out.model;
        assert!(model.pred_audio.is_some() && model.pred_visual.is_some());
    }

    #[test]
    fn evaluate_scores_a_trained_model() {
        let corpus = tiny_corpus(14, 8);
        let mut cfg = tiny_exp(5, &corpus, 2);
        cfg.switches = AblationSwitches { audio_aux: false, visual_aux: false, time_masking: false };
        let out = train(&cfg, &corpus, None).unwrap();
        let model = averaged_model(&cfg, corpus.vocab.size(), &out.checkpoints).unwrap();
        let eval = evaluate(&cfg, &model, &corpus, Split::Train, None).unwrap();
        assert!(eval.wer.rate.is_some());
        assert!(eval.cer.rate.is_some());
        assert_eq!(eval.decodes.len(), corpus.split(Split::Train).len());
        let ids: Vec<&str> = eval.decodes.iter().map(|d| d.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted, "decodes come back in id order");
    }

    #[test]
    fn run_summary_statistics_are_sampled() {
        let report = RunReport {
            label: String::from("full"),
            seeds: vec![
                SeedResult { seed: 1, wer: 1.0, cer: 10.0 },
                SeedResult { seed: 2, wer: 2.0, cer: 20.0 },
                SeedResult { seed: 3, wer: 3.0, cer: 30.0 },
            ],
            failures: Vec::new(),
        };
        let (mean, std, best) = report.wer_stats();
        assert_eq!(mean, 2.0);
        assert!((std - 1.0).abs() < 1e-12, "sample standard deviation");
        assert_eq!(best, 1.0);
        let (cmean, _, cbest) = report.cer_stats();
        assert_eq!(cmean, 20.0);
        assert_eq!(cbest, 10.0);
    }

    #[test]
    fn ablation_needs_two_seeds() {
        let corpus = tiny_corpus(8, 9);
        let cfg = tiny_exp(1, &corpus, 1);
        assert!(matches!(ablate(&cfg, &corpus, &[1]), Err(Error::Config(_))));
    }

    /// Manual probe for tuning the desk recipe: a real-size baseline run
    /// with timing and error rates printed.  Run with `--ignored`.
    #[test]
    #[ignore]
    fn desk_baseline_probe() {
        use std::time::Instant;
        let corpus_cfg = CorpusConfig::feature(500, 11, injective_preset());
        let (corpus, warns) = generate_corpus(&corpus_cfg).unwrap();
        std::println!("corpus warnings: {warns:?}");
        let frames: Vec<usize> =
            corpus.split(Split::Train).iter().map(|u| u.frames).collect();
        std::println!(
            "train utts {} frames min {} max {} mean {:.1}",
            frames.len(),
            frames.iter().min().unwrap(),
            frames.iter().max().unwrap(),
            frames.iter().sum::<usize>() as f64 / frames.len() as f64
        );
        let mut cfg = ExperimentConfig::desk(
            ModelConfig::desk(FrontendConfig::passthrough(corpus.cfg.visual_dim)),
            Channel::Visual,
            1,
        );
        cfg.switches =
            AblationSwitches { audio_aux: false, visual_aux: false, time_masking: false };
        let t0 = Instant::now();
        let out = train(&cfg, &corpus, None).unwrap();
        let train_secs = t0.elapsed().as_secs_f64();
        for log in out.logs.iter().step_by(25) {
            std::println!(
                "stage {} epoch {} step {} lr {:.5} total {:.4} ctc {:.4} att {:.4}",
                log.stage, log.epoch, log.step, log.lr, log.total, log.ctc, log.att
            );
        }
        let last = out.logs.last().unwrap();
        std::println!("final step {} total {:.4}", last.step, last.total);
        let model = averaged_model(&cfg, corpus.vocab.size(), &out.checkpoints).unwrap();
        let t1 = Instant::now();
        let eval = evaluate(&cfg, &model, &corpus, Split::Dev, None).unwrap();
        std::println!(
            "train {:.1}s decode {:.1}s dev CER {:.2}% WER {:.2}%  ({} utts)",
            train_secs,
            t1.elapsed().as_secs_f64(),
            eval.cer.rate.unwrap() * 100.0,
            eval.wer.rate.unwrap() * 100.0,
            eval.decodes.len()
        );
        for d in eval.decodes.iter().take(5) {
            std::println!("  {} -> {:?}", d.id, d.text);
        }
    }

    #[test]
    fn lm_trains_from_corpus_transcripts() {
        let corpus = tiny_corpus(12, 10);
        let lm_cfg = crate::lm::LmConfig {
            num_blocks: 1,
            model_dim: 8,
            ff_dim: 16,
            head_dim: 4,
            dropout: 0.0,
        };
        let train_cfg = crate::lm::LmTrainConfig {
            epochs: 1,
            batch_size: 8,
            optim: AdamConfig { peak_lr: 0.001, warmup_steps: 5, ..AdamConfig::default() },
        };
        let (_, _, ppl) = train_corpus_lm(&corpus, &lm_cfg, &train_cfg, 11).unwrap();
        assert_eq!(ppl.len(), 1);
        assert!(ppl[0].is_finite() && ppl[0] > 1.0);
    }
}
