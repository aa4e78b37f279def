//! Experiment configuration files: an INI-style `[section] key = value`
//! format applied over the built-in desk-scale defaults, plus repeated
//! `--set section.key=value` command-line overrides.
//!
//! Each command consumes only the sections it needs (`generate-data` reads
//! `[corpus]`; training and decoding read the rest), and rejects unknown
//! keys inside the sections it consumes.

use std::collections::BTreeMap;
use std::path::Path;

use vsr_core::augment::TimeMaskCap;
use vsr_core::beam::beam_preset;
use vsr_core::data::CurriculumSchedule;
use vsr_core::frontend::FrontendConfig;
use vsr_core::lm::{LmConfig, LmTrainConfig};
use vsr_core::model::ModelConfig;
use vsr_core::synth::{ambiguous_preset, CorpusConfig, CorpusMode};
use vsr_core::trainer::{Channel, ExperimentConfig};
use vsr_core::{Error, Result};

/// Parsed key/value pairs, keyed by (section, key).  Values are consumed
/// with [`Conf::take`]; whatever remains in a consumed section at the end
/// is an unknown-key error.
#[derive(Debug, Default, Clone)]
pub struct Conf {
    values: BTreeMap<(String, String), String>,
}

impl Conf {
    pub fn parse(text: &str, origin: &str) -> Result<Conf> {
        let mut values = BTreeMap::new();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::config(format!("{origin} line {}: unterminated section {raw:?}", lineno + 1))
                })?;
                section = Some(name.trim().to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("{origin} line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let sec = section.clone().ok_or_else(|| {
                Error::config(format!(
                    "{origin} line {}: key {k:?} appears before any [section]",
                    lineno + 1
                ))
            })?;
            values.insert((sec, k.trim().to_string()), v.trim().to_string());
        }
        Ok(Conf { values })
    }

    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Conf> {
        let mut conf = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("reading config {}: {e}", p.display())))?;
                Conf::parse(&text, &p.display().to_string())?
            }
            None => Conf::default(),
        };
        for set in sets {
            conf.apply_set(set)?;
        }
        Ok(conf)
    }

    /// `--set section.key=value` overrides, last occurrence winning.
    pub fn apply_set(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set {spec:?}: expected section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::config(format!("--set {spec:?}: expected section.key=value")))?;
        self.values.insert(
            (section.trim().to_string(), key.trim().to_string()),
            value.trim().to_string(),
        );
        Ok(())
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.values.remove(&(section.to_string(), key.to_string()))
    }

    fn take_parsed<T: std::str::FromStr>(
        &mut self,
        section: &str,
        key: &str,
    ) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::config(format!("config {section}.{key}: cannot parse value {raw:?}"))
            }),
        }
    }

    fn take_bool(&mut self, section: &str, key: &str) -> Result<Option<bool>> {
        match self.take(section, key) {
            None => Ok(None),
            Some(raw) => match raw.as_str() {
                "true" | "yes" | "on" | "1" => Ok(Some(true)),
                "false" | "no" | "off" | "0" => Ok(Some(false)),
                _ => Err(Error::config(format!(
                    "config {section}.{key}: expected a boolean, got {raw:?}"
                ))),
            },
        }
    }

    /// Error if any key remains in the listed sections.
    fn finish(&self, sections: &[&str]) -> Result<()> {
        let leftover: Vec<String> = self
            .values
            .keys()
            .filter(|(s, _)| sections.contains(&s.as_str()))
            .map(|(s, k)| format!("{s}.{k}"))
            .collect();
        if leftover.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("config: unknown keys: {}", leftover.join(", "))))
        }
    }
}

macro_rules! set_if {
    ($conf:expr, $section:expr, $key:expr, $slot:expr) => {
        if let Some(v) = $conf.take_parsed($section, $key)? {
            $slot = v;
        }
    };
}

/// Language-model settings, kept beside the experiment because the
/// recognizer itself never depends on them.
#[derive(Debug, Clone)]
pub struct LmSettings {
    pub enabled: bool,
    pub model: LmConfig,
    pub train: LmTrainConfig,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            enabled: false,
            // Desk-sized language model; the library default is wider.
            model: LmConfig { num_blocks: 2, model_dim: 32, ff_dim: 128, head_dim: 16, dropout: 0.1 },
            train: LmTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub experiment: ExperimentConfig,
    pub lm: LmSettings,
}

fn parse_frontend(spec: &str) -> Result<FrontendConfig> {
    let (kind, arg) = match spec.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (spec, None),
    };
    let num = |what: &str| -> Result<f64> {
        let raw = arg.ok_or_else(|| {
            Error::config(format!("config model.frontend: {kind} needs :{what}"))
        })?;
        raw.parse()
            .map_err(|_| Error::config(format!("config model.frontend: bad {what} {raw:?}")))
    };
    match kind {
        "passthrough" => Ok(FrontendConfig::passthrough(num("dim")? as usize)),
        "visual" => Ok(FrontendConfig::visual(num("width")?)),
        "audio_res" => Ok(FrontendConfig::audio_residual(num("width")?)),
        "audio_cnn" => Ok(FrontendConfig::audio_cnn(num("width")?)),
        other => Err(Error::config(format!(
            "config model.frontend: unknown kind {other:?}; expected passthrough:<dim>, visual:<width>, audio_res:<width> or audio_cnn:<width>"
        ))),
    }
}

/// Sections consumed when building an experiment.
const EXPERIMENT_SECTIONS: [&str; 11] = [
    "experiment", "model", "loss", "decode", "curriculum", "batch", "mask", "spatial", "optim",
    "switches", "lm",
];

/// Build the experiment + LM settings from the desk defaults, the loaded
/// corpus, and the parsed overrides.
pub fn build_settings(conf: &mut Conf, corpus_cfg: &CorpusConfig) -> Result<Settings> {
    let channel = match conf.take("experiment", "channel") {
        None => Channel::Visual,
        Some(raw) => match raw.as_str() {
            "visual" => Channel::Visual,
            "audio" => Channel::Audio,
            _ => {
                return Err(Error::config(format!(
                    "config experiment.channel: expected visual or audio, got {raw:?}"
                )))
            }
        },
    };
    let default_frontend = match (corpus_cfg.mode, channel) {
        (CorpusMode::Feature, Channel::Visual) => FrontendConfig::passthrough(corpus_cfg.visual_dim),
        (CorpusMode::Feature, Channel::Audio) | (CorpusMode::Image, Channel::Audio) => {
            FrontendConfig::passthrough(corpus_cfg.audio_dim)
        }
        // Eighth-width ladder ends at 64 channels, the desk encoder width.
        (CorpusMode::Image, Channel::Visual) => FrontendConfig::visual(0.125),
    };
    let frontend = match conf.take("model", "frontend") {
        Some(spec) => parse_frontend(&spec)?,
        None => default_frontend,
    };
    let seed = conf.take_parsed("experiment", "seed")?.unwrap_or(1u64);
    let mut cfg = ExperimentConfig::desk(ModelConfig::desk(frontend), channel, seed);

    set_if!(conf, "experiment", "epochs", cfg.epochs);
    set_if!(conf, "experiment", "average_last", cfg.average_last);
    set_if!(conf, "experiment", "label_smoothing", cfg.label_smoothing);

    if let Some(dim) = conf.take_parsed::<usize>("model", "dim")? {
        cfg.model.encoder.model_dim = dim;
        cfg.model.decoder.model_dim = dim;
    }
    if let Some(ff) = conf.take_parsed::<usize>("model", "ff_dim")? {
        cfg.model.encoder.ff_dim = ff;
        cfg.model.decoder.ff_dim = ff;
    }
    if let Some(hd) = conf.take_parsed::<usize>("model", "head_dim")? {
        cfg.model.encoder.head_dim = hd;
        cfg.model.decoder.head_dim = hd;
    }
    if let Some(p) = conf.take_parsed::<f64>("model", "dropout")? {
        cfg.model.encoder.dropout = p;
        cfg.model.decoder.dropout = p;
    }
    set_if!(conf, "model", "encoder_blocks", cfg.model.encoder.num_blocks);
    set_if!(conf, "model", "decoder_blocks", cfg.model.decoder.num_blocks);
    set_if!(conf, "model", "conv_kernel", cfg.model.encoder.conv_kernel);
    set_if!(conf, "model", "tap_layer", cfg.model.encoder.tap_layer);
    set_if!(conf, "model", "rel_clip", cfg.model.encoder.rel_clip);
    set_if!(conf, "model", "aux_dim", cfg.model.aux_dim);

    set_if!(conf, "loss", "alpha", cfg.loss.alpha);
    set_if!(conf, "loss", "beta_audio", cfg.loss.beta_audio);
    set_if!(conf, "loss", "beta_visual", cfg.loss.beta_visual);

    // The preset is applied first so explicit decode keys can refine it.
    if let Some(lang) = conf.take("decode", "preset") {
        cfg.decode = beam_preset(&lang)?;
    }
    set_if!(conf, "decode", "beam_size", cfg.decode.beam_size);
    set_if!(conf, "decode", "lambda", cfg.decode.lambda);
    set_if!(conf, "decode", "beta", cfg.decode.beta);
    set_if!(conf, "decode", "max_len_ratio", cfg.decode.max_len_ratio);
    set_if!(conf, "decode", "language", cfg.decode.language);

    if let Some(raw) = conf.take("curriculum", "caps") {
        let caps: Vec<usize> = raw
            .split(',')
            .map(|p| {
                p.trim().parse().map_err(|_| {
                    Error::config(format!("config curriculum.caps: bad entry {p:?} in {raw:?}"))
                })
            })
            .collect::<Result<_>>()?;
        cfg.curriculum = CurriculumSchedule { caps };
    }

    set_if!(conf, "batch", "size", cfg.batch.batch_size);
    set_if!(conf, "batch", "halve_threshold", cfg.batch.halve_threshold);

    set_if!(conf, "mask", "frame_rate", cfg.mask.frame_rate);
    let cap_seconds = conf.take_parsed::<f64>("mask", "cap_seconds")?;
    let cap_fraction = conf.take_parsed::<f64>("mask", "cap_fraction")?;
    match (cap_seconds, cap_fraction) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "config mask: cap_seconds and cap_fraction are mutually exclusive",
            ))
        }
        (Some(s), None) => cfg.mask.cap = TimeMaskCap::Seconds(s),
        (None, Some(f)) => cfg.mask.cap = TimeMaskCap::Fraction(f),
        (None, None) => {}
    }

    set_if!(conf, "spatial", "crop_h", cfg.spatial.crop_h);
    set_if!(conf, "spatial", "crop_w", cfg.spatial.crop_w);
    set_if!(conf, "spatial", "flip_prob", cfg.spatial.flip_prob);

    set_if!(conf, "optim", "peak_lr", cfg.optim.peak_lr);
    set_if!(conf, "optim", "warmup_steps", cfg.optim.warmup_steps);
    set_if!(conf, "optim", "beta1", cfg.optim.beta1);
    set_if!(conf, "optim", "beta2", cfg.optim.beta2);
    set_if!(conf, "optim", "eps", cfg.optim.eps);

    if let Some(b) = conf.take_bool("switches", "audio_aux")? {
        cfg.switches.audio_aux = b;
    }
    if let Some(b) = conf.take_bool("switches", "visual_aux")? {
        cfg.switches.visual_aux = b;
    }
    if let Some(b) = conf.take_bool("switches", "time_masking")? {
        cfg.switches.time_masking = b;
    }

    let mut lm = LmSettings::default();
    if let Some(b) = conf.take_bool("lm", "enabled")? {
        lm.enabled = b;
    }
    set_if!(conf, "lm", "blocks", lm.model.num_blocks);
    set_if!(conf, "lm", "dim", lm.model.model_dim);
    set_if!(conf, "lm", "ff_dim", lm.model.ff_dim);
    set_if!(conf, "lm", "head_dim", lm.model.head_dim);
    set_if!(conf, "lm", "dropout", lm.model.dropout);
    set_if!(conf, "lm", "epochs", lm.train.epochs);
    set_if!(conf, "lm", "batch_size", lm.train.batch_size);
    set_if!(conf, "lm", "peak_lr", lm.train.optim.peak_lr);
    set_if!(conf, "lm", "warmup_steps", lm.train.optim.warmup_steps);

    conf.finish(&EXPERIMENT_SECTIONS)?;
    cfg.validate()?;
    Ok(Settings { experiment: cfg, lm })
}

/// Build the generation parameters from the `[corpus]` section.
pub fn build_corpus_config(conf: &mut Conf) -> Result<CorpusConfig> {
    let sigma = conf.take_parsed::<f64>("corpus", "sigma")?;
    let ambiguity = match conf.take("corpus", "preset").as_deref() {
        None | Some("injective") => vsr_core::synth::AmbiguityMap::injective(
            &vsr_core::synth::default_alphabet(),
            sigma.unwrap_or(0.0),
        )?,
        Some("ambiguous") => ambiguous_preset(sigma.unwrap_or(0.3)),
        Some(name) => {
            return Err(Error::config(format!(
                "config corpus.preset: expected injective or ambiguous, got {name:?}"
            )))
        }
    };
    let mut cfg = CorpusConfig::feature(200, 7, ambiguity);
    if let Some(raw) = conf.take("corpus", "mode") {
        cfg.mode = match raw.as_str() {
            "feature" => CorpusMode::Feature,
            "image" => CorpusMode::Image,
            _ => {
                return Err(Error::config(format!(
                    "config corpus.mode: expected feature or image, got {raw:?}"
                )))
            }
        };
    }
    set_if!(conf, "corpus", "size", cfg.size);
    set_if!(conf, "corpus", "seed", cfg.seed);
    set_if!(conf, "corpus", "visual_dim", cfg.visual_dim);
    set_if!(conf, "corpus", "audio_dim", cfg.audio_dim);
    set_if!(conf, "corpus", "language", cfg.language);
    set_if!(conf, "corpus", "lexicon_size", cfg.lexicon_size);
    conf.finish(&["corpus"])?;
    cfg.validate()?;
    Ok(cfg)
}
