//! On-disk formats: VSRF tensor files, binary checkpoints, manifests, and
//! the small text files that describe a corpus.
//!
//! Everything is little-endian and versioned.  Checkpoints store exact f64
//! bit patterns so a save/load round trip is bit-identical; feature files
//! default to f32 storage.

use std::collections::BTreeMap;
use std::fs;

use std::path::{Path, PathBuf};

use vsr_core::model::{Checkpoint, TensorSnapshot};
use vsr_core::synth::Split;
use vsr_core::tensor::Tensor;
use vsr_core::{Error, Result};

pub const VSRF_MAGIC: &[u8; 4] = b"VSRF";
pub const VSRF_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

pub const CKPT_MAGIC: &[u8; 4] = b"VSRC";
pub const CKPT_VERSION: u16 = 1;

fn io_err(path: &Path, what: &str, e: std::io::Error) -> Error {
    Error::data(format!("{what} {}: {e}", path.display()))
}

/// Write a tensor as a VSRF file.  `f64_bits` keeps full precision;
/// otherwise values are rounded to f32, the storage used for features.
pub fn write_vsrf(path: &Path, tensor: &Tensor, f64_bits: bool) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(VSRF_MAGIC);
    buf.extend_from_slice(&VSRF_VERSION.to_le_bytes());
    buf.push(if f64_bits { DTYPE_F64 } else { DTYPE_F32 });
    let shape = tensor.shape();
    if shape.len() > u8::MAX as usize {
        return Err(Error::data(format!("vsrf: rank {} is too large", shape.len())));
    }
    buf.push(shape.len() as u8);
    for &e in shape {
        buf.extend_from_slice(&(e as u64).to_le_bytes());
    }
    let data = tensor.to_vec();
    if f64_bits {
        for v in &data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    } else {
        for v in &data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, "writing", e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data(format!(
                "{}: truncated at byte {} (wanted {n} more)",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::data(format!("{}: invalid utf-8 name", self.path.display())))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::data(format!(
                "{}: {} trailing bytes",
                self.path.display(),
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn read_vsrf(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| io_err(path, "reading", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    if c.take(4)? != VSRF_MAGIC {
        return Err(Error::data(format!("{}: not a VSRF file", path.display())));
    }
    let version = c.u16()?;
    if version != VSRF_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported VSRF version {version}",
            path.display()
        )));
    }
    let dtype = c.u8()?;
    let rank = c.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(c.u64()? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    match dtype {
        DTYPE_F32 => {
            for _ in 0..numel {
                data.push(c.f32()? as f64);
            }
        }
        DTYPE_F64 => {
            for _ in 0..numel {
                data.push(c.f64()?);
            }
        }
        other => {
            return Err(Error::data(format!(
                "{}: unknown dtype code {other}",
                path.display()
            )))
        }
    }
    c.done()?;
    Tensor::from_vec(&shape, data)
}

fn write_snapshot_map(buf: &mut Vec<u8>, map: &BTreeMap<String, TensorSnapshot>) {
    buf.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (name, snap) in map {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(snap.shape.len() as u8);
        for &e in &snap.shape {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in &snap.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_snapshot_map(c: &mut Cursor) -> Result<BTreeMap<String, TensorSnapshot>> {
    let n = c.u32()? as usize;
    let mut map = BTreeMap::new();
    for _ in 0..n {
        let name = c.string()?;
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(c.f64()?);
        }
        map.insert(name, TensorSnapshot { shape, data });
    }
    Ok(map)
}

/// Serialize a checkpoint with exact f64 bit patterns.
pub fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&cp.step.to_le_bytes());
    buf.extend_from_slice(&cp.epoch.to_le_bytes());
    buf.extend_from_slice(&cp.config_hash.to_le_bytes());
    buf.extend_from_slice(&(cp.source_steps.len() as u32).to_le_bytes());
    for &s in &cp.source_steps {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    buf.extend_from_slice(&(cp.rng.len() as u32).to_le_bytes());
    for (name, state) in &cp.rng {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        for &w in state {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    write_snapshot_map(&mut buf, &cp.params);
    write_snapshot_map(&mut buf, &cp.states);
    fs::write(path, buf).map_err(|e| io_err(path, "writing", e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| io_err(path, "reading", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    if c.take(4)? != CKPT_MAGIC {
        return Err(Error::data(format!("{}: not a checkpoint file", path.display())));
    }
    let version = c.u16()?;
    if version != CKPT_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let step = c.u64()?;
    let epoch = c.u64()?;
    let config_hash = c.u64()?;
    let n_src = c.u32()? as usize;
    let mut source_steps = Vec::with_capacity(n_src);
    for _ in 0..n_src {
        source_steps.push(c.u64()?);
    }
    let n_rng = c.u32()? as usize;
    let mut rng = BTreeMap::new();
    for _ in 0..n_rng {
        let name = c.string()?;
        let mut state = [0u64; 4];
        for w in &mut state {
            *w = c.u64()?;
        }
        rng.insert(name, state);
    }
    let params = read_snapshot_map(&mut c)?;
    let states = read_snapshot_map(&mut c)?;
    c.done()?;
    Ok(Checkpoint { params, states, rng, step, epoch, config_hash, source_steps })
}

/// One manifest line: tab-separated id, language, transcript, frame count,
/// and feature paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub language: String,
    pub transcript: String,
    pub frames: usize,
    pub visual_path: PathBuf,
    pub audio_path: PathBuf,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        let visual = e.visual_path.to_str().ok_or_else(|| {
            Error::data(format!("manifest: non-utf8 path {:?}", e.visual_path))
        })?;
        let audio = e
            .audio_path
            .to_str()
            .ok_or_else(|| Error::data(format!("manifest: non-utf8 path {:?}", e.audio_path)))?;
        for (field, label) in [
            (e.id.as_str(), "id"),
            (e.language.as_str(), "language"),
            (e.transcript.as_str(), "transcript"),
            (visual, "visual path"),
            (audio, "audio path"),
        ] {
            if field.contains('\t') || field.contains('\n') {
                return Err(Error::data(format!(
                    "manifest: {label} of {} contains a tab or newline",
                    e.id
                )));
            }
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.id, e.language, e.transcript, e.frames, visual, audio
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, "writing", e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, "reading", e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::data(format!(
                "{} line {}: expected 6 tab-separated fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let frames: usize = fields[3].parse().map_err(|_| {
            Error::data(format!(
                "{} line {}: bad frame count {:?}",
                path.display(),
                lineno + 1,
                fields[3]
            ))
        })?;
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            language: fields[1].to_string(),
            transcript: fields[2].to_string(),
            frames,
            visual_path: PathBuf::from(fields[4]),
            audio_path: PathBuf::from(fields[5]),
        });
    }
    Ok(entries)
}

pub fn manifest_name(split: Split) -> String {
    format!("{}.tsv", split.tag())
}

/// Vocabulary character list, one `U+XXXX` codepoint per line so spaces
/// stay visible.
pub fn write_vocab(path: &Path, chars: &[char]) -> Result<()> {
    let mut out = String::new();
    for c in chars {
        out.push_str(&format!("U+{:04X}\n", *c as u32));
    }
    fs::write(path, out).map_err(|e| io_err(path, "writing", e))
}

pub fn read_vocab(path: &Path) -> Result<Vec<char>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, "reading", e))?;
    let mut chars = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let hex = line.strip_prefix("U+").ok_or_else(|| {
            Error::data(format!(
                "{} line {}: expected U+XXXX, got {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let cp = u32::from_str_radix(hex, 16).map_err(|_| {
            Error::data(format!("{} line {}: bad codepoint {line:?}", path.display(), lineno + 1))
        })?;
        chars.push(char::from_u32(cp).ok_or_else(|| {
            Error::data(format!(
                "{} line {}: {cp:#x} is not a character",
                path.display(),
                lineno + 1
            ))
        })?);
    }
    Ok(chars)
}

/// Plain key=value metadata file (comments with `#`).
pub fn write_kv(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(&format!("{k} = {v}\n"));
    }
    fs::write(path, out).map_err(|e| io_err(path, "writing", e))
}

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, "reading", e))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::data(format!(
                "{} line {}: expected key = value, got {raw:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Decoded transcripts with their fused scores, one utterance per line.
pub fn write_decodes(path: &Path, records: &[vsr_core::trainer::DecodeRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\n",
            r.id, r.text, r.combined, r.ctc, r.att, r.lm
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, "writing", e))
}

pub fn read_decodes(path: &Path) -> Result<Vec<vsr_core::trainer::DecodeRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, "reading", e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::data(format!(
                "{} line {}: expected 6 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| {
                Error::data(format!(
                    "{} line {}: bad score {:?}",
                    path.display(),
                    lineno + 1,
                    fields[i]
                ))
            })
        };
        records.push(vsr_core::trainer::DecodeRecord {
            id: fields[0].to_string(),
            text: fields[1].to_string(),
            combined: num(2)?,
            ctc: num(3)?,
            att: num(4)?,
            lm: num(5)?,
        });
    }
    Ok(records)
}
