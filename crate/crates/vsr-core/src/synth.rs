//! Synthetic audio-visual corpus with controllable visual ambiguity.
//!
//! Characters map many-to-one onto visual classes (so distinct characters
//! can look identical, the way different sounds can share a lip shape)
//! while every character keeps a distinct audio prototype.  Transcripts
//! are short word sequences; each character emits a few frames of its
//! prototype plus optional Gaussian noise.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

/// Seed for prototype vectors and the lexicon, fixed so that corpora
/// generated from different seeds stay mutually intelligible.
const WORLD_SEED: u64 = 0x5653_5246;

/// Canvas edge for image-mode frames.
pub const CANVAS: usize = 24;

/// Character-to-visual-class assignment plus the noise level added to
/// every frame.  The audio side is always injective (one prototype per
/// character); ambiguity lives purely in the visual classes.
#[derive(Debug, Clone)]
pub struct AmbiguityMap {
    pub sigma: f64,
    class_of: BTreeMap<char, usize>,
    n_classes: usize,
}

impl AmbiguityMap {
    /// Every character gets its own visual class: no ambiguity.
    pub fn injective(alphabet: &[char], sigma: f64) -> Result<Self> {
        Self::with_merges(alphabet, &[], sigma)
    }

    /// Characters within one merge group share a visual class.
    pub fn with_merges(alphabet: &[char], merges: &[&[char]], sigma: f64) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(Error::config("ambiguity map: empty alphabet"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("ambiguity map: sigma {sigma} must be >= 0")));
        }
        let set: BTreeSet<char> = alphabet.iter().copied().collect();
        if set.len() != alphabet.len() {
            return Err(Error::config("ambiguity map: duplicate characters in alphabet"));
        }
        let mut class_of: BTreeMap<char, usize> = BTreeMap::new();
        let mut n_classes = 0;
        for group in merges {
            if group.len() < 2 {
                return Err(Error::config("ambiguity map: merge groups need at least 2 members"));
            }
            for c in group.iter() {
                if !set.contains(c) {
                    return Err(Error::config(format!(
                        "ambiguity map: merged character {c:?} not in alphabet"
                    )));
                }
                if class_of.insert(*c, n_classes).is_some() {
                    return Err(Error::config(format!(
                        "ambiguity map: character {c:?} in two merge groups"
                    )));
                }
            }
            n_classes += 1;
        }
        for c in alphabet {
            if !class_of.contains_key(c) {
                class_of.insert(*c, n_classes);
                n_classes += 1;
            }
        }
        Ok(AmbiguityMap { sigma, class_of, n_classes })
    }

    pub fn class_of(&self, c: char) -> Option<usize> {
        self.class_of.get(&c).copied()
    }

    pub fn class_count(&self) -> usize {
        self.n_classes
    }

    /// Number of visual classes shared by two or more characters.
    pub fn merged_class_count(&self) -> usize {
        let mut sizes = vec![0usize; self.n_classes];
        for &k in self.class_of.values() {
            sizes[k] += 1;
        }
        sizes.iter().filter(|&&s| s >= 2).count()
    }

    /// The groups of characters that share a visual class, each sorted, in
    /// class order.  Singleton classes are omitted, so this is exactly the
    /// `merges` argument that rebuilds an equivalent map.
    pub fn merge_groups(&self) -> Vec<Vec<char>> {
        let mut groups: Vec<Vec<char>> = vec![Vec::new(); self.n_classes];
        for (&c, &k) in &self.class_of {
            groups[k].push(c);
        }
        groups.retain(|g| g.len() >= 2);
        groups
    }

    /// True when every character collapses to one class: generation still
    /// works, but visually nothing is distinguishable.
    pub fn is_degenerate(&self) -> bool {
        self.n_classes == 1 && self.class_of.len() > 1
    }
}

/// The default 14-letter-plus-space alphabet shared by the presets.
pub fn default_alphabet() -> Vec<char> {
    let mut v: Vec<char> = "abdeilmnoprstu".chars().collect();
    v.push(' ');
    v
}

/// Unambiguous preset over the default alphabet.
pub fn injective_preset() -> AmbiguityMap {
    AmbiguityMap::injective(&default_alphabet(), 0.0).unwrap()
}

/// Ambiguous preset: three merged consonant pairs (b/p, d/t, m/n) with
/// the given frame noise, mimicking look-alike articulations.
pub fn ambiguous_preset(sigma: f64) -> AmbiguityMap {
    AmbiguityMap::with_merges(
        &default_alphabet(),
        &[&['b', 'p'], &['d', 't'], &['m', 'n']],
        sigma,
    )
    .unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusMode {
    /// Per-frame feature vectors `[D, T]`: exercises the whole sequence
    /// stack without convolutional front-ends.
    Feature,
    /// Glyph frames `[1, T, CANVAS, CANVAS]` for the visual front-end.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Split> {
        match tag {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::data(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub size: usize,
    pub seed: u64,
    pub mode: CorpusMode,
    pub ambiguity: AmbiguityMap,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub language: String,
    pub lexicon_size: usize,
}

impl CorpusConfig {
    pub fn feature(size: usize, seed: u64, ambiguity: AmbiguityMap) -> Self {
        CorpusConfig {
            size,
            seed,
            mode: CorpusMode::Feature,
            ambiguity,
            visual_dim: 8,
            audio_dim: 8,
            language: String::from("en"),
            lexicon_size: 40,
        }
    }

    pub fn image(size: usize, seed: u64, ambiguity: AmbiguityMap) -> Self {
        CorpusConfig { mode: CorpusMode::Image, ..Self::feature(size, seed, ambiguity) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("corpus: size must be at least 1"));
        }
        if self.visual_dim == 0 || self.audio_dim == 0 {
            return Err(Error::config("corpus: feature dimensions must be positive"));
        }
        if self.lexicon_size < 2 {
            return Err(Error::config("corpus: lexicon needs at least 2 words"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub language: String,
    pub transcript: String,
    pub split: Split,
    /// `[D_v, T]` in feature mode, `[1, T, CANVAS, CANVAS]` in image mode.
    pub visual: Tensor,
    /// `[D_a, T]`, aligned frame-for-frame with the visual channel.
    pub audio: Tensor,
    pub frames: usize,
}

pub struct SynthCorpus {
    pub cfg: CorpusConfig,
    pub vocab: Vocabulary,
    pub lexicon: Vec<String>,
    pub utterances: Vec<Utterance>,
}

impl SynthCorpus {
    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }
}

/// Deterministic prototype vector for a visual class.
pub fn visual_prototype(class: usize, dim: usize) -> Vec<f64> {
    let mut rng = StreamRng::named(WORLD_SEED, &format!("proto.visual.{class}.{dim}"));
    (0..dim).map(|_| rng.normal()).collect()
}

/// Deterministic prototype vector for a character's audio; distinct
/// characters always get distinct prototypes.
pub fn audio_prototype(c: char, dim: usize) -> Vec<f64> {
    let mut rng = StreamRng::named(WORLD_SEED, &format!("proto.audio.{}.{dim}", c as u32));
    (0..dim).map(|_| rng.normal()).collect()
}

/// Deterministic glyph for a visual class: a 4x4 grid of blocks keyed by
/// the bits of `class + 1`, drawn on a `CANVAS`-square frame.
pub fn class_glyph(class: usize) -> Vec<f64> {
    let mut frame = vec![0.0f64; CANVAS * CANVAS];
    let bits = class + 1;
    let cell = CANVAS / 4;
    for gy in 0..4 {
        for gx in 0..4 {
            if bits >> ((gy * 4 + gx) % 16) & 1 == 1 {
                for y in 0..cell {
                    for x in 0..cell {
                        frame[(gy * cell + y) * CANVAS + gx * cell + x] = 1.0;
                    }
                }
            }
        }
    }
    frame
}

/// Build the shared word list from a letter-chain sampler: 2-6 letters,
/// alternating vowel/consonant tendencies, never repeating a letter
/// twice in a row.
pub fn build_lexicon(alphabet: &[char], size: usize) -> Vec<String> {
    let vowels: Vec<char> =
        alphabet.iter().copied().filter(|c| "aeiou".contains(*c)).collect();
    let consonants: Vec<char> =
        alphabet.iter().copied().filter(|c| *c != ' ' && !"aeiou".contains(*c)).collect();
    let mut rng = StreamRng::named(WORLD_SEED, "lexicon");
    let mut words: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut guard = 0;
    while words.len() < size && guard < 100_000 {
        guard += 1;
        let len = rng.range_inclusive(2, 6);
        let mut word = String::new();
        let mut prev: Option<char> = None;
        let mut prev_vowel = rng.uniform() < 0.5;
        for _ in 0..len {
            let pool = if prev_vowel { &consonants } else { &vowels };
            let alt = if prev_vowel { &vowels } else { &consonants };
            let pick_from = if rng.uniform() < 0.8 { pool } else { alt };
            let mut c = pick_from[rng.below(pick_from.len())];
            let mut tries = 0;
            while Some(c) == prev && tries < 8 {
                c = pick_from[rng.below(pick_from.len())];
                tries += 1;
            }
            if Some(c) == prev {
                break;
            }
            prev_vowel = "aeiou".contains(c);
            word.push(c);
            prev = Some(c);
        }
        if word.len() >= 2 && seen.insert(word.clone()) {
            words.push(word);
        }
    }
    words
}

fn frames_for_char(rng: &mut StreamRng) -> usize {
    rng.range_inclusive(2, 4)
}

/// Render one transcript to aligned visual and audio frame stacks using
/// the given per-utterance stream.  Exposed so tests can compare channel
/// behaviour for chosen transcripts.
pub fn render_transcript(
    cfg: &CorpusConfig,
    transcript: &str,
    rng: &mut StreamRng,
) -> Result<(Tensor, Tensor, usize)> {
    let chars: Vec<char> = transcript.chars().collect();
    if chars.is_empty() {
        return Err(Error::data("render: empty transcript"));
    }
    let mut counts = Vec::with_capacity(chars.len());
    let mut frames = 0usize;
    for _ in &chars {
        let n = frames_for_char(rng);
        counts.push(n);
        frames += n;
    }
    let sigma = cfg.ambiguity.sigma;
    let (dv, da) = (cfg.visual_dim, cfg.audio_dim);
    // Visual channel: prototype (or glyph) per class, plus noise.
    let visual = match cfg.mode {
        CorpusMode::Feature => {
            let mut data = vec![0.0f64; dv * frames];
            let mut t0 = 0usize;
            for (ci, &c) in chars.iter().enumerate() {
                let class = cfg
                    .ambiguity
                    .class_of(c)
                    .ok_or_else(|| Error::data(format!("render: {c:?} not in ambiguity map")))?;
                let proto = visual_prototype(class, dv);
                for t in t0..t0 + counts[ci] {
                    for (d, &p) in proto.iter().enumerate() {
                        let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
                        data[d * frames + t] = p + noise;
                    }
                }
                t0 += counts[ci];
            }
            Tensor::from_vec(&[dv, frames], data)?
        }
        CorpusMode::Image => {
            let mut data = vec![0.0f64; frames * CANVAS * CANVAS];
            let mut t0 = 0usize;
            for (ci, &c) in chars.iter().enumerate() {
                let class = cfg
                    .ambiguity
                    .class_of(c)
                    .ok_or_else(|| Error::data(format!("render: {c:?} not in ambiguity map")))?;
                let glyph = class_glyph(class);
                for t in t0..t0 + counts[ci] {
                    let base = t * CANVAS * CANVAS;
                    for (i, &g) in glyph.iter().enumerate() {
                        let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
                        data[base + i] = g + noise;
                    }
                }
                t0 += counts[ci];
            }
            Tensor::from_vec(&[1, frames, CANVAS, CANVAS], data)?
        }
    };
    // Audio channel: injective per-character prototypes, same layout.
    let mut adata = vec![0.0f64; da * frames];
    let mut t0 = 0usize;
    for (ci, &c) in chars.iter().enumerate() {
        let proto = audio_prototype(c, da);
        for t in t0..t0 + counts[ci] {
            for (d, &p) in proto.iter().enumerate() {
                let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
                adata[d * frames + t] = p + noise;
            }
        }
        t0 += counts[ci];
    }
    let audio = Tensor::from_vec(&[da, frames], adata)?;
    Ok((visual, audio, frames))
}

/// Generate a corpus.  Every utterance derives its own stream from
/// `(seed, index)`, so a given utterance is identical regardless of
/// corpus size, and regeneration is byte-identical.  Returns warnings for
/// questionable-but-allowed configurations.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<(SynthCorpus, Vec<String>)> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    if cfg.ambiguity.is_degenerate() {
        warnings.push(String::from(
            "ambiguity map is degenerate: every character shares one visual class",
        ));
    }
    let alphabet: Vec<char> = cfg.ambiguity.class_of.keys().copied().collect();
    let vocab = Vocabulary::new(&cfg.language, alphabet.iter().copied())?;
    let lexicon = build_lexicon(&alphabet, cfg.lexicon_size);
    if lexicon.len() < cfg.lexicon_size {
        warnings.push(format!(
            "lexicon has only {} of {} requested words",
            lexicon.len(),
            cfg.lexicon_size
        ));
    }
    if lexicon.is_empty() {
        return Err(Error::config("corpus: alphabet cannot form any words"));
    }
    let mut utterances = Vec::with_capacity(cfg.size);
    for i in 0..cfg.size {
        let id = format!("utt{i:05}");
        let mut rng = StreamRng::named(cfg.seed, &format!("utt.{i}"));
        let n_words = rng.range_inclusive(2, 5);
        let mut transcript = String::new();
        for w in 0..n_words {
            if w > 0 {
                transcript.push(' ');
            }
            transcript.push_str(&lexicon[rng.below(lexicon.len())]);
        }
        let (visual, audio, frames) = render_transcript(cfg, &transcript, &mut rng)?;
        let r = rng.uniform();
        let split = if r < 0.8 {
            Split::Train
        } else if r < 0.9 {
            Split::Dev
        } else {
            Split::Test
        };
        utterances.push(Utterance {
            id,
            language: cfg.language.clone(),
            transcript,
            split,
            visual,
            audio,
            frames,
        });
    }
    Ok((SynthCorpus { cfg: cfg.clone(), vocab, lexicon, utterances }, warnings))
}
