//! Saving a synthetic corpus to a directory and loading it back.
//!
//! Layout:
//! ```text
//! corpus/
//!   meta.txt       key = value generation parameters
//!   vocab.txt      alphabet, one U+XXXX codepoint per line
//!   lexicon.txt    one word per line
//!   train.tsv      manifests: id, language, transcript, frames, paths
//!   dev.tsv
//!   test.tsv
//!   feat/          one .v.vsrf and one .a.vsrf per utterance
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use vsr_core::synth::{
    AmbiguityMap, CorpusConfig, CorpusMode, Split, SynthCorpus, Utterance,
};
use vsr_core::vocab::Vocabulary;
use vsr_core::{Error, Result};

use crate::formats::{
    manifest_name, read_kv, read_manifest, read_vocab, read_vsrf, write_kv, write_manifest,
    write_vocab, write_vsrf, ManifestEntry,
};

const SPLITS: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

fn merges_to_string(merges: &[Vec<char>]) -> String {
    merges
        .iter()
        .map(|g| g.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("+"))
        .collect::<Vec<_>>()
        .join(",")
}

fn merges_from_string(s: &str) -> Result<Vec<Vec<char>>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut merges = Vec::new();
    for group in s.split(',') {
        let chars: Vec<char> = group
            .split('+')
            .map(|part| {
                let mut it = part.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(Error::data(format!("corpus meta: bad merge entry {part:?}"))),
                }
            })
            .collect::<Result<_>>()?;
        if chars.len() < 2 {
            return Err(Error::data(format!("corpus meta: merge group {group:?} too small")));
        }
        merges.push(chars);
    }
    Ok(merges)
}

/// Write the corpus (features, manifests, vocabulary, metadata) under `dir`.
/// Features are stored as f32, so training on a saved corpus sees exactly
/// what a reloaded corpus sees.
pub fn save_corpus(dir: &Path, corpus: &SynthCorpus) -> Result<()> {
    let feat = dir.join("feat");
    fs::create_dir_all(&feat)
        .map_err(|e| Error::data(format!("creating {}: {e}", feat.display())))?;

    let cfg = &corpus.cfg;
    let mode = match cfg.mode {
        CorpusMode::Feature => "feature",
        CorpusMode::Image => "image",
    };
    write_kv(
        &dir.join("meta.txt"),
        &[
            ("size", cfg.size.to_string()),
            ("seed", cfg.seed.to_string()),
            ("mode", mode.to_string()),
            ("sigma", format!("{:.17e}", cfg.ambiguity.sigma)),
            ("merges", merges_to_string(&cfg.ambiguity.merge_groups())),
            ("visual_dim", cfg.visual_dim.to_string()),
            ("audio_dim", cfg.audio_dim.to_string()),
            ("language", cfg.language.clone()),
            ("lexicon_size", cfg.lexicon_size.to_string()),
        ],
    )?;
    write_vocab(&dir.join("vocab.txt"), corpus.vocab.chars())?;
    fs::write(
        dir.join("lexicon.txt"),
        corpus.lexicon.join("\n") + "\n",
    )
    .map_err(|e| Error::data(format!("writing lexicon: {e}")))?;

    for split in SPLITS {
        let mut entries = Vec::new();
        for u in corpus.split(split) {
            let v_rel = PathBuf::from(format!("feat/{}.v.vsrf", u.id));
            let a_rel = PathBuf::from(format!("feat/{}.a.vsrf", u.id));
            write_vsrf(&dir.join(&v_rel), &u.visual, false)?;
            write_vsrf(&dir.join(&a_rel), &u.audio, false)?;
            entries.push(ManifestEntry {
                id: u.id.clone(),
                language: u.language.clone(),
                transcript: u.transcript.clone(),
                frames: u.frames,
                visual_path: v_rel,
                audio_path: a_rel,
            });
        }
        write_manifest(&dir.join(manifest_name(split)), &entries)?;
    }
    Ok(())
}

fn meta_get<'a>(
    meta: &'a std::collections::BTreeMap<String, String>,
    dir: &Path,
    key: &str,
) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::data(format!("{}/meta.txt: missing key {key}", dir.display())))
}

fn meta_parse<T: std::str::FromStr>(
    meta: &std::collections::BTreeMap<String, String>,
    dir: &Path,
    key: &str,
) -> Result<T> {
    let raw = meta_get(meta, dir, key)?;
    raw.parse().map_err(|_| {
        Error::data(format!("{}/meta.txt: bad value {raw:?} for {key}", dir.display()))
    })
}

/// Load a corpus directory written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<SynthCorpus> {
    let meta = read_kv(&dir.join("meta.txt"))?;
    let alphabet = read_vocab(&dir.join("vocab.txt"))?;
    let merges = merges_from_string(meta_get(&meta, dir, "merges")?)?;
    let merge_refs: Vec<&[char]> = merges.iter().map(Vec::as_slice).collect();
    let sigma: f64 = meta_parse(&meta, dir, "sigma")?;
    let ambiguity = AmbiguityMap::with_merges(&alphabet, &merge_refs, sigma)?;
    let mode = match meta_get(&meta, dir, "mode")? {
        "feature" => CorpusMode::Feature,
        "image" => CorpusMode::Image,
        other => {
            return Err(Error::data(format!(
                "{}/meta.txt: unknown mode {other:?}",
                dir.display()
            )))
        }
    };
    let language = meta_get(&meta, dir, "language")?.to_string();
    let cfg = CorpusConfig {
        size: meta_parse(&meta, dir, "size")?,
        seed: meta_parse(&meta, dir, "seed")?,
        mode,
        ambiguity,
        visual_dim: meta_parse(&meta, dir, "visual_dim")?,
        audio_dim: meta_parse(&meta, dir, "audio_dim")?,
        language: language.clone(),
        lexicon_size: meta_parse(&meta, dir, "lexicon_size")?,
    };
    let vocab = Vocabulary::new(&language, alphabet.iter().copied())?;
    let lexicon: Vec<String> = fs::read_to_string(dir.join("lexicon.txt"))
        .map_err(|e| Error::data(format!("reading lexicon: {e}")))?
        .lines()
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();

    let mut utterances = Vec::new();
    for split in SPLITS {
        let manifest = dir.join(manifest_name(split));
        for entry in read_manifest(&manifest)? {
            let visual = read_vsrf(&dir.join(&entry.visual_path))?;
            let audio = read_vsrf(&dir.join(&entry.audio_path))?;
            for (tensor, channel) in [(&visual, "visual"), (&audio, "audio")] {
                let t = tensor.shape().get(1).copied().unwrap_or(0);
                if t != entry.frames {
                    return Err(Error::data(format!(
                        "{}: {channel} tensor has {t} frames but manifest says {}",
                        entry.id, entry.frames
                    )));
                }
            }
            utterances.push(Utterance {
                id: entry.id,
                language: entry.language,
                transcript: entry.transcript,
                split,
                visual,
                audio,
                frames: entry.frames,
            });
        }
    }
    if utterances.is_empty() {
        return Err(Error::data(format!("{}: corpus has no utterances", dir.display())));
    }
    utterances.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SynthCorpus { cfg, vocab, lexicon, utterances })
}
