//! Implementations behind the `vsr` subcommands.  Each takes plain paths
//! and options so integration tests can call them without spawning the
//! binary.

use std::fs;
use std::path::Path;

use vsr_core::lm::CharLm;
use vsr_core::metrics::{score_corpus, Unit};
use vsr_core::model::{average_checkpoints, fnv1a64, restore_tensors, snapshot_tensors, Checkpoint, VsrModel};
use vsr_core::nn::BuildCtx;
use vsr_core::synth::{generate_corpus, Split, SynthCorpus};
use vsr_core::trainer::{
    self, teacher_shells, ExperimentConfig, StepLog, Teachers,
};
use vsr_core::{Error, Result};

use crate::config::{build_corpus_config, build_settings, Conf, LmSettings, Settings};
use crate::corpus_io::{load_corpus, save_corpus};
use crate::formats::{read_checkpoint, read_decodes, write_checkpoint, write_decodes};
use crate::report;

pub const TEACHER_ASR_FILE: &str = "teacher.asr.ckpt";
pub const TEACHER_VSR_FILE: &str = "teacher.vsr.ckpt";
pub const AVERAGE_FILE: &str = "average.ckpt";
pub const LM_FILE: &str = "lm.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TABLE: &str = "ablation.txt";

pub fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        _ => Err(Error::config(format!("split must be train, dev or test, got {s:?}"))),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::data(format!("creating {}: {e}", dir.display())))
}

fn load_settings(corpus: &SynthCorpus, config: Option<&Path>, sets: &[String]) -> Result<Settings> {
    let mut conf = Conf::load(config, sets)?;
    build_settings(&mut conf, &corpus.cfg)
}

pub fn generate_data(out: &Path, config: Option<&Path>, sets: &[String]) -> Result<()> {
    let mut conf = Conf::load(config, sets)?;
    let cfg = build_corpus_config(&mut conf)?;
    let (corpus, warnings) = generate_corpus(&cfg)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    ensure_dir(out)?;
    save_corpus(out, &corpus)?;
    println!(
        "wrote {} utterances ({} train / {} dev / {} test) to {}",
        corpus.utterances.len(),
        corpus.split(Split::Train).len(),
        corpus.split(Split::Dev).len(),
        corpus.split(Split::Test).len(),
        out.display()
    );
    Ok(())
}

/// Steps each run contributed to a merged teacher log: the step counter is
/// 1-based per run, so a reset marks the second teacher's start.
fn per_run_steps(logs: &[StepLog]) -> (u64, u64) {
    let mut first_end = 0;
    let mut last = 0;
    for l in logs {
        if l.step == 1 && last > 0 {
            first_end = last;
        }
        last = l.step;
    }
    if first_end == 0 {
        (last, 0)
    } else {
        (first_end, last)
    }
}

pub fn train_teachers(
    corpus_dir: &Path,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let settings = load_settings(&corpus, config, sets)?;
    let cfg = &settings.experiment;
    eprintln!("training acoustic and visual teachers ({} epochs each)", cfg.epochs);
    let (teachers, logs) = trainer::train_teachers(cfg, &corpus)?;
    let (asr_steps, vsr_steps) = per_run_steps(&logs);
    ensure_dir(out)?;
    let hash = cfg.hash();
    write_checkpoint(
        &out.join(TEACHER_ASR_FILE),
        &teachers.asr.snapshot(asr_steps, cfg.epochs as u64, hash),
    )?;
    write_checkpoint(
        &out.join(TEACHER_VSR_FILE),
        &teachers.vsr.snapshot(vsr_steps, cfg.epochs as u64, hash),
    )?;
    println!(
        "wrote {} and {} ({} + {} steps) to {}",
        TEACHER_ASR_FILE,
        TEACHER_VSR_FILE,
        asr_steps,
        vsr_steps,
        out.display()
    );
    Ok(())
}

/// Rebuild the teacher architectures and load their saved weights.
fn load_teachers(dir: &Path, cfg: &ExperimentConfig, corpus: &SynthCorpus) -> Result<Teachers> {
    let shells = teacher_shells(cfg, corpus.cfg.audio_dim, corpus.vocab.size())?;
    let expected = cfg.hash();
    for (file, model) in [(TEACHER_ASR_FILE, &shells.asr), (TEACHER_VSR_FILE, &shells.vsr)] {
        let cp = read_checkpoint(&dir.join(file))?;
        if cp.config_hash != expected {
            eprintln!(
                "warning: {file} was trained under a different configuration \
                 (hash {:016x}, current {expected:016x})",
                cp.config_hash
            );
        }
        model.load(&cp)?;
    }
    Ok(shells)
}

fn write_train_log(path: &Path, logs: &[StepLog]) -> Result<()> {
    let mut out = String::from("# stage\tepoch\tstep\tlr\ttotal\tvsr\tctc\tatt\taux\n");
    for l in logs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.8}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            l.stage, l.epoch, l.step, l.lr, l.total, l.vsr, l.ctc, l.att, l.aux
        ));
    }
    fs::write(path, out).map_err(|e| Error::data(format!("writing {}: {e}", path.display())))
}

fn lm_hash(lm: &LmSettings) -> u64 {
    fnv1a64(format!("{:?}{:?}", lm.model, lm.train).as_bytes())
}

fn save_lm(path: &Path, corpus: &SynthCorpus, lm: &LmSettings, seed: u64) -> Result<()> {
    let (_, params, ppl) = trainer::train_corpus_lm(corpus, &lm.model, &lm.train, seed)?;
    let cp = Checkpoint {
        params: snapshot_tensors(params.iter()),
        states: Default::default(),
        rng: Default::default(),
        step: lm.train.epochs as u64,
        epoch: lm.train.epochs as u64,
        config_hash: lm_hash(lm),
        source_steps: Vec::new(),
    };
    write_checkpoint(path, &cp)?;
    eprintln!(
        "language model: {} epochs, final train perplexity {:.3}",
        ppl.len(),
        ppl.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Rebuild the language model and load saved weights.  The builder seed is
/// irrelevant because every parameter is overwritten.
pub fn load_lm(path: &Path, corpus: &SynthCorpus, lm: &LmSettings) -> Result<CharLm> {
    let cp = read_checkpoint(path)?;
    if cp.config_hash != lm_hash(lm) {
        eprintln!(
            "warning: {} was trained under a different [lm] configuration",
            path.display()
        );
    }
    let mut ctx = BuildCtx::new(0);
    let model = CharLm::new(&mut ctx, "lm", corpus.vocab.size(), &lm.model)?;
    restore_tensors(ctx.params.iter(), &cp.params, "parameter")?;
    Ok(model)
}

pub fn train(
    corpus_dir: &Path,
    out: &Path,
    teachers_dir: Option<&Path>,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let settings = load_settings(&corpus, config, sets)?;
    let cfg = &settings.experiment;
    let teachers = if cfg.uses_teachers() {
        let dir = teachers_dir.ok_or_else(|| {
            Error::config(
                "auxiliary losses are enabled; pass --teachers DIR (from `vsr train-teachers`) \
                 or disable them with --set switches.audio_aux=false --set switches.visual_aux=false",
            )
        })?;
        Some(load_teachers(dir, cfg, &corpus)?)
    } else {
        if let Some(dir) = teachers_dir {
            eprintln!(
                "warning: --teachers {} ignored because every auxiliary task is disabled",
                dir.display()
            );
        }
        None
    };
    eprintln!(
        "training: {} epochs over {} train utterances (seed {})",
        cfg.epochs,
        corpus.split(Split::Train).len(),
        cfg.seed
    );
    let run = trainer::train(cfg, &corpus, teachers.as_ref())?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    ensure_dir(out)?;
    for (i, cp) in run.checkpoints.iter().enumerate() {
        write_checkpoint(&out.join(format!("epoch_{:03}.ckpt", i + 1)), cp)?;
    }
    let k = cfg.average_last.min(run.checkpoints.len());
    let avg = average_checkpoints(&run.checkpoints[run.checkpoints.len() - k..])?;
    write_checkpoint(&out.join(AVERAGE_FILE), &avg)?;
    write_train_log(&out.join(TRAIN_LOG_FILE), &run.logs)?;
    if settings.lm.enabled {
        save_lm(&out.join(LM_FILE), &corpus, &settings.lm, cfg.seed)?;
    }
    let last = run.logs.last();
    println!(
        "trained {} steps; wrote {} epoch checkpoints, {} (mean of last {k}){} to {}",
        last.map(|l| l.step).unwrap_or(0),
        run.checkpoints.len(),
        AVERAGE_FILE,
        if settings.lm.enabled { ", lm.ckpt" } else { "" },
        out.display()
    );
    if let Some(l) = last {
        println!(
            "final step: total {:.4} (vsr {:.4}, ctc {:.4}, att {:.4}, aux {:.4})",
            l.total, l.vsr, l.ctc, l.att, l.aux
        );
    }
    Ok(())
}

/// Build the evaluation model from one or more checkpoints (averaged when
/// several are given) under the experiment's architecture.
fn model_from_checkpoints(
    cfg: &ExperimentConfig,
    vocab_size: usize,
    paths: &[std::path::PathBuf],
) -> Result<VsrModel> {
    if paths.is_empty() {
        return Err(Error::config("at least one --checkpoint is required"));
    }
    let cps: Vec<Checkpoint> = paths.iter().map(|p| read_checkpoint(p)).collect::<Result<_>>()?;
    let avg = if cps.len() == 1 { cps.into_iter().next().unwrap() } else { average_checkpoints(&cps)? };
    let mut model_cfg = cfg.model.clone();
    let eff = cfg.effective_weights();
    model_cfg.aux_audio = eff.beta_audio > 0.0;
    model_cfg.aux_visual = eff.beta_visual > 0.0;
    let model = VsrModel::new(cfg.seed, vocab_size, &model_cfg)?;
    model.load(&avg)?;
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
pub fn decode(
    corpus_dir: &Path,
    split: &str,
    checkpoints: &[std::path::PathBuf],
    out: &Path,
    lm_path: Option<&Path>,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let settings = load_settings(&corpus, config, sets)?;
    let cfg = &settings.experiment;
    let split = parse_split(split)?;
    let model = model_from_checkpoints(cfg, corpus.vocab.size(), checkpoints)?;
    let lm = match lm_path {
        Some(p) => Some(load_lm(p, &corpus, &settings.lm)?),
        None => None,
    };
    let eval = trainer::evaluate(cfg, &model, &corpus, split, lm.as_ref())?;
    write_decodes(out, &eval.decodes)?;
    println!(
        "decoded {} {} utterances to {}",
        eval.decodes.len(),
        split.tag(),
        out.display()
    );
    if let (Some(wer), Some(cer)) = (eval.wer.rate, eval.cer.rate) {
        println!("wer {:.2}%  cer {:.2}%", wer * 100.0, cer * 100.0);
    }
    Ok(())
}

pub fn evaluate(
    corpus_dir: &Path,
    split: &str,
    decodes_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let split = parse_split(split)?;
    let records = read_decodes(decodes_path)?;
    let hyps: Vec<(String, String)> =
        records.iter().map(|r| (r.id.clone(), r.text.clone())).collect();
    let refs: Vec<(String, String)> = corpus
        .split(split)
        .iter()
        .map(|u| (u.id.clone(), u.transcript.clone()))
        .collect();
    let wer = score_corpus(&hyps, &refs, Unit::Word)?;
    let cer = score_corpus(&hyps, &refs, Unit::Char)?;
    let mut lines = String::new();
    for (name, score) in [("wer", &wer), ("cer", &cer)] {
        let rate = score.rate.map(|r| format!("{:.4}", r * 100.0)).unwrap_or_else(|| "n/a".into());
        lines.push_str(&format!(
            "{name} = {rate}% (sub {}, del {}, ins {}, n {}) over {} utterances\n",
            score.counts.substitutions,
            score.counts.deletions,
            score.counts.insertions,
            score.counts.n,
            score.utterances
        ));
    }
    print!("{lines}");
    if let Some(p) = out {
        fs::write(p, &lines).map_err(|e| Error::data(format!("writing {}: {e}", p.display())))?;
    }
    Ok(())
}

pub fn average(inputs: &[std::path::PathBuf], out: &Path) -> Result<()> {
    if inputs.len() < 2 {
        return Err(Error::config("average-checkpoints: give at least two input files"));
    }
    let cps: Vec<Checkpoint> = inputs.iter().map(|p| read_checkpoint(p)).collect::<Result<_>>()?;
    let avg = average_checkpoints(&cps)?;
    write_checkpoint(out, &avg)?;
    println!("averaged {} checkpoints (steps {:?}) into {}", inputs.len(), avg.source_steps, out.display());
    Ok(())
}

pub fn ablate(
    corpus_dir: &Path,
    out: &Path,
    seeds: &str,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let settings = load_settings(&corpus, config, sets)?;
    let seeds: Vec<u64> = seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("--seeds: bad entry {s:?}")))
        })
        .collect::<Result<_>>()?;
    eprintln!("ablation over seeds {seeds:?}");
    let rep = trainer::ablate(&settings.experiment, &corpus, &seeds)?;
    ensure_dir(out)?;
    report::write_report(&out.join(ABLATION_CSV), &out.join(ABLATION_TABLE), &rep)?;
    print!("{}", report::render_table(&rep));
    println!("wrote {} and {} to {}", ABLATION_CSV, ABLATION_TABLE, out.display());
    Ok(())
}

pub fn render_report(csv: &Path, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(csv)
        .map_err(|e| Error::data(format!("reading {}: {e}", csv.display())))?;
    let rep = report::from_csv(&text, &csv.display().to_string())?;
    let table = report::render_table(&rep);
    print!("{table}");
    if let Some(p) = out {
        fs::write(p, &table).map_err(|e| Error::data(format!("writing {}: {e}", p.display())))?;
    }
    Ok(())
}
