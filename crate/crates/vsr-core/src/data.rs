//! Training-data scheduling: length curriculum, shuffled length-bucketed
//! batch plans with long-sequence halving, and padded batch assembly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Frame caps for staged training, shortest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurriculumSchedule {
    pub caps: Vec<usize>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule { caps: vec![100, 150, 300, 450, 600] }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.caps.is_empty() {
            return Err(Error::config("curriculum: empty schedule"));
        }
        if self.caps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "curriculum: caps {:?} must be strictly increasing",
                self.caps
            )));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.caps.len()
    }
}

/// Indices of sequences short enough for a curriculum stage.  Later
/// stages are supersets of earlier ones by construction.
pub fn curriculum_filter(
    frames: &[usize],
    schedule: &CurriculumSchedule,
    stage: usize,
) -> Result<Vec<usize>> {
    schedule.validate()?;
    if stage >= schedule.caps.len() {
        return Err(Error::config(format!(
            "curriculum: stage {stage} out of range for {} stages",
            schedule.caps.len()
        )));
    }
    let cap = schedule.caps[stage];
    let kept: Vec<usize> = (0..frames.len()).filter(|&i| frames[i] <= cap).collect();
    if kept.is_empty() {
        return Err(Error::data(format!(
            "curriculum: no sequences within {cap} frames at stage {stage}; \
             regenerate the corpus with shorter utterances"
        )));
    }
    Ok(kept)
}

#[derive(Debug, Clone, Copy)]
pub struct BatchPlanConfig {
    pub batch_size: usize,
    /// Batches containing any sequence longer than this are split in two.
    pub halve_threshold: usize,
}

impl Default for BatchPlanConfig {
    fn default() -> Self {
        BatchPlanConfig { batch_size: 16, halve_threshold: 220 }
    }
}

/// Deterministic batch plan over the selected indices: shuffle, bucket by
/// length so batches are homogeneous, halve any batch holding a sequence
/// past the threshold, then shuffle batch order.  Sequences longer than
/// `cap` (when given) are dropped with a warning.
pub fn make_batches(
    frames: &[usize],
    indices: &[usize],
    cfg: &BatchPlanConfig,
    cap: Option<usize>,
    rng: &mut StreamRng,
) -> Result<(Vec<Vec<usize>>, Vec<String>)> {
    if cfg.batch_size == 0 {
        return Err(Error::config("batch plan: batch_size must be at least 1"));
    }
    let mut warnings = Vec::new();
    let mut pool: Vec<usize> = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= frames.len() {
            return Err(Error::config(format!("batch plan: index {i} out of range")));
        }
        if let Some(c) = cap {
            if frames[i] > c {
                warnings.push(format!(
                    "sequence {i} with {} frames exceeds the {c}-frame cap; skipped",
                    frames[i]
                ));
                continue;
            }
        }
        pool.push(i);
    }
    if pool.is_empty() {
        return Err(Error::data("batch plan: nothing to batch"));
    }
    let any_long = pool.iter().any(|&i| frames[i] > cfg.halve_threshold);
    if any_long && cfg.batch_size % 2 != 0 {
        return Err(Error::config(format!(
            "batch plan: batch_size {} must be even when sequences exceed {} frames",
            cfg.batch_size, cfg.halve_threshold
        )));
    }
    rng.shuffle(&mut pool);
    // Stable sort: equal lengths keep their shuffled order.
    pool.sort_by_key(|&i| frames[i]);
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for chunk in pool.chunks(cfg.batch_size) {
        if chunk.iter().any(|&i| frames[i] > cfg.halve_threshold) && chunk.len() > 1 {
            let mid = chunk.len() / 2;
            batches.push(chunk[..mid].to_vec());
            batches.push(chunk[mid..].to_vec());
        } else {
            batches.push(chunk.to_vec());
        }
    }
    rng.shuffle(&mut batches);
    Ok((batches, warnings))
}

/// Stack variable-length sequences into one padded batch tensor along
/// `time_axis`, zero-filling the tail.  All other extents must agree.
/// Returns the `[B, ...]` tensor and per-sequence lengths.
pub fn pad_stack(seqs: &[&Tensor], time_axis: usize) -> Result<(Tensor, Vec<usize>)> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::config("pad: empty batch"))?;
    let rank = first.rank();
    if time_axis >= rank {
        return Err(Error::shape(format!("pad: axis {time_axis} out of range for rank {rank}")));
    }
    let mut lengths = Vec::with_capacity(seqs.len());
    let mut t_max = 0usize;
    for s in seqs {
        if s.rank() != rank {
            return Err(Error::shape("pad: mixed ranks in one batch"));
        }
        for a in 0..rank {
            if a != time_axis && s.shape()[a] != first.shape()[a] {
                return Err(Error::shape(format!(
                    "pad: shape {:?} disagrees with {:?} off the time axis",
                    s.shape(),
                    first.shape()
                )));
            }
        }
        let t = s.shape()[time_axis];
        lengths.push(t);
        t_max = t_max.max(t);
    }
    let mut out_shape = Vec::with_capacity(rank + 1);
    out_shape.push(seqs.len());
    out_shape.extend_from_slice(first.shape());
    out_shape[1 + time_axis] = t_max;
    let outer: usize = first.shape()[..time_axis].iter().product();
    let inner: usize = first.shape()[time_axis + 1..].iter().product();
    let mut data = vec![0.0f64; seqs.len() * outer * t_max * inner];
    for (b, s) in seqs.iter().enumerate() {
        let t = lengths[b];
        let src = s.data();
        for o in 0..outer {
            for ti in 0..t {
                let dst = ((b * outer + o) * t_max + ti) * inner;
                let from = (o * t + ti) * inner;
                data[dst..dst + inner].copy_from_slice(&src[from..from + inner]);
            }
        }
    }
    Ok((Tensor::from_vec(&out_shape, data)?, lengths))
}
