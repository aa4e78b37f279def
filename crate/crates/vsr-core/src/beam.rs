//! Joint beam search over characters: CTC prefix scores, attention decoder
//! scores, and shallow language-model fusion combined as
//! `lambda * s_ctc + (1 - lambda) * s_att + beta * s_lm`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{log_add, LOG_ZERO};
use crate::tensor::Tensor;
use crate::vocab::{BLANK, EOS, SOS};

/// One decoding hypothesis with its component scores.  `tokens` starts
/// with sos and excludes eos; `combined` applies the fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub s_att: f64,
    pub s_ctc: f64,
    pub s_lm: f64,
    pub ended: bool,
}

impl BeamHypothesis {
    pub fn combined(&self, lambda: f64, beta: f64) -> f64 {
        lambda * self.s_ctc + (1.0 - lambda) * self.s_att + beta * self.s_lm
    }

    /// Character tokens without the leading sos.
    pub fn chars(&self) -> &[usize] {
        &self.tokens[1..]
    }
}

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub lambda: f64,
    pub beta: f64,
    pub max_len_ratio: f64,
    pub language: String,
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size < 1 {
            return Err(Error::config("decode: beam_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("decode: lambda {} outside [0, 1]", self.lambda)));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::config(format!("decode: beta {} must be non-negative", self.beta)));
        }
        if !(self.max_len_ratio > 0.0) {
            return Err(Error::config("decode: max_len_ratio must be positive"));
        }
        Ok(())
    }
}

/// Decoding preset for a supported language tag: beam size and fusion
/// weight tuned per language, mixing weight fixed at 0.1.
pub fn beam_preset(language: &str) -> Result<DecodeConfig> {
    let (beam_size, beta) = match language {
        "en" => (40, 0.6),
        "zh" => (20, 0.3),
        "es" => (35, 0.4),
        "it" => (25, 0.5),
        "fr" => (40, 0.3),
        "pt" => (35, 0.3),
        other => {
            return Err(Error::config(format!(
                "decode: unknown language {other:?}; supported: en, es, fr, it, pt, zh"
            )))
        }
    };
    Ok(DecodeConfig {
        beam_size,
        lambda: 0.1,
        beta,
        max_len_ratio: 1.0,
        language: String::from(language),
    })
}

/// Per-prefix state of the incremental CTC prefix scorer: probabilities of
/// the prefix over frames `0..=t` split by whether the last emission was
/// the final label or a blank.
#[derive(Debug, Clone)]
pub struct PrefixCache {
    r_nb: Vec<f64>,
    r_b: Vec<f64>,
    last: Option<usize>,
    /// Log-probability that the full emission starts with this prefix.
    prefix_score: f64,
}

impl PrefixCache {
    pub fn prefix_score(&self) -> f64 {
        self.prefix_score
    }
}

/// Incremental two-state dynamic program over per-frame CTC
/// log-probabilities `[T, V]` (blank at index 0).  Extending a cached
/// prefix by one label costs `O(T)`.
pub struct CtcPrefixScorer {
    z: Vec<f64>,
    t: usize,
    v: usize,
}

impl CtcPrefixScorer {
    pub fn new(logprobs: &Tensor) -> Result<Self> {
        let shape = logprobs.shape();
        if shape.len() != 2 {
            return Err(Error::shape(format!("ctc prefix: logprobs must be [T, V], got {shape:?}")));
        }
        Ok(CtcPrefixScorer { z: logprobs.to_vec(), t: shape[0], v: shape[1] })
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    fn z(&self, t: usize, v: usize) -> f64 {
        self.z[t * self.v + v]
    }

    /// Cache for the empty prefix: only all-blank emissions.
    pub fn root(&self) -> PrefixCache {
        let mut r_b = Vec::with_capacity(self.t);
        let mut acc = 0.0;
        for t in 0..self.t {
            acc += self.z(t, BLANK);
            r_b.push(acc);
        }
        PrefixCache { r_nb: vec![LOG_ZERO; self.t], r_b, last: None, prefix_score: 0.0 }
    }

    /// Extend a cached prefix by label `c`, returning the child cache whose
    /// `prefix_score` is the log-probability that emissions start with the
    /// extended prefix.
    pub fn extend(&self, cache: &PrefixCache, c: usize) -> Result<PrefixCache> {
        if c == BLANK || c >= self.v {
            return Err(Error::config(format!("ctc prefix: invalid extension label {c}")));
        }
        let mut r_nb = Vec::with_capacity(self.t);
        let mut r_b = Vec::with_capacity(self.t);
        let mut prev_nb = LOG_ZERO;
        let mut prev_b = LOG_ZERO;
        let mut score = LOG_ZERO;
        let clamp = |x: f64| if x <= LOG_ZERO { LOG_ZERO } else { x };
        for t in 0..self.t {
            // Mass of the parent prefix just before frame t from which `c`
            // starts a new label: blank-ended always, label-ended only when
            // the labels differ (a repeat needs a separating blank).
            let (g_b, g_nb) = if t == 0 {
                (if cache.last.is_none() { 0.0 } else { LOG_ZERO }, LOG_ZERO)
            } else {
                (cache.r_b[t - 1], cache.r_nb[t - 1])
            };
            let mut xi = g_b;
            if cache.last != Some(c) {
                xi = log_add(xi, g_nb);
            }
            let nb = clamp(log_add(prev_nb, xi) + self.z(t, c));
            let b = clamp(log_add(prev_b, prev_nb) + self.z(t, BLANK));
            score = log_add(score, clamp(xi + self.z(t, c)));
            r_nb.push(nb);
            r_b.push(b);
            prev_nb = nb;
            prev_b = b;
        }
        Ok(PrefixCache { r_nb, r_b, last: Some(c), prefix_score: clamp(score) })
    }

    /// Log-probability that the emission equals the cached prefix exactly.
    pub fn finish(&self, cache: &PrefixCache) -> f64 {
        if self.t == 0 {
            return if cache.last.is_none() { 0.0 } else { LOG_ZERO };
        }
        log_add(cache.r_nb[self.t - 1], cache.r_b[self.t - 1])
    }
}

/// Scores the next token given a sos-prefixed token prefix; implemented by
/// the attention decoder (closed over its memory) and the language model.
pub trait StepScorer {
    fn step(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

struct Active {
    hyp: BeamHypothesis,
    cache: PrefixCache,
}

fn lex_less(a: &[usize], b: &[usize]) -> bool {
    a < b
}

/// Joint beam search.  `ctc_logprobs` is `[T, V]` for one utterance;
/// `att` scores next characters from the decoder; `lm` is consulted when
/// `cfg.beta > 0`.  Returns finished hypotheses ranked by combined score,
/// ties broken by lexicographically smaller token sequence.
pub fn beam_search(
    att: &dyn StepScorer,
    lm: Option<&dyn StepScorer>,
    ctc_logprobs: &Tensor,
    cfg: &DecodeConfig,
) -> Result<Vec<BeamHypothesis>> {
    cfg.validate()?;
    if cfg.beta > 0.0 && lm.is_none() {
        return Err(Error::config("decode: beta > 0 requires a language model"));
    }
    let scorer = CtcPrefixScorer::new(ctc_logprobs)?;
    let (t_len, v) = (scorer.frames(), scorer.v);
    if t_len == 0 {
        return Ok(vec![BeamHypothesis {
            tokens: vec![SOS],
            s_att: 0.0,
            s_ctc: 0.0,
            s_lm: 0.0,
            ended: true,
        }]);
    }
    let max_chars = ((cfg.max_len_ratio * t_len as f64) as usize).max(1);
    let use_lm = cfg.beta > 0.0;
    let better = |a: &BeamHypothesis, b: &BeamHypothesis| -> bool {
        let (ca, cb) = (a.combined(cfg.lambda, cfg.beta), b.combined(cfg.lambda, cfg.beta));
        ca > cb || (ca == cb && lex_less(&a.tokens, &b.tokens))
    };

    let mut active = vec![Active {
        hyp: BeamHypothesis {
            tokens: vec![SOS],
            s_att: 0.0,
            s_ctc: 0.0,
            s_lm: 0.0,
            ended: false,
        },
        cache: scorer.root(),
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();

    while !active.is_empty() {
        let mut candidates: Vec<Active> = Vec::new();
        for parent in &active {
            let att_scores = att.step(&parent.hyp.tokens)?;
            if att_scores.len() != v {
                return Err(Error::shape(format!(
                    "decode: attention scorer returned {} scores for vocabulary of {v}",
                    att_scores.len()
                )));
            }
            let lm_scores = if use_lm {
                let s = lm.unwrap().step(&parent.hyp.tokens)?;
                if s.len() != v {
                    return Err(Error::shape(format!(
                        "decode: lm scorer returned {} scores for vocabulary of {v}",
                        s.len()
                    )));
                }
                Some(s)
            } else {
                None
            };
            let lm_at = |c: usize| lm_scores.as_ref().map_or(0.0, |s| s[c]);
            // A finished version of this hypothesis is always a candidate.
            finished.push(BeamHypothesis {
                tokens: parent.hyp.tokens.clone(),
                s_att: parent.hyp.s_att + att_scores[EOS],
                s_ctc: scorer.finish(&parent.cache),
                s_lm: parent.hyp.s_lm + lm_at(EOS),
                ended: true,
            });
            if parent.hyp.tokens.len() - 1 >= max_chars {
                continue;
            }
            for c in 0..v {
                if c == BLANK || c == SOS || c == EOS {
                    continue;
                }
                let cache = scorer.extend(&parent.cache, c)?;
                let mut tokens = parent.hyp.tokens.clone();
                tokens.push(c);
                candidates.push(Active {
                    hyp: BeamHypothesis {
                        tokens,
                        s_att: parent.hyp.s_att + att_scores[c],
                        s_ctc: cache.prefix_score(),
                        s_lm: parent.hyp.s_lm + lm_at(c),
                        ended: false,
                    },
                    cache,
                });
            }
        }
        // Deterministic beam update: best combined first, ties to the
        // lexicographically smaller sequence.
        candidates.sort_by(|a, b| {
            let (ca, cb) =
                (a.hyp.combined(cfg.lambda, cfg.beta), b.hyp.combined(cfg.lambda, cfg.beta));
            cb.partial_cmp(&ca)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then_with(|| a.hyp.tokens.cmp(&b.hyp.tokens))
        });
        candidates.truncate(cfg.beam_size);
        finished.sort_by(|a, b| {
            let (ca, cb) = (a.combined(cfg.lambda, cfg.beta), b.combined(cfg.lambda, cfg.beta));
            cb.partial_cmp(&ca)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        finished.truncate(cfg.beam_size);
        // A hypothesis only loses score as it grows, so stop once the best
        // unfinished candidate can no longer beat the best finished one.
        if let Some(best_done) = finished.first() {
            if let Some(best_active) = candidates.first() {
                if !better(&best_active.hyp, best_done) {
                    break;
                }
            }
        }
        active = candidates;
    }
    if finished.is_empty() {
        return Err(Error::numeric("decode: search ended with no finished hypothesis"));
    }
    Ok(finished)
}
