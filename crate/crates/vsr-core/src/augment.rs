//! Sequence augmentation: temporal masking with mean-frame replacement,
//! per-sequence spatial crop/flip for image stacks, and feature
//! normalization from training-set statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Upper bound on one temporal mask: a fixed duration in seconds
/// (the default, 0.4 s) or a fraction of the sequence length.
#[derive(Debug, Clone, Copy)]
pub enum TimeMaskCap {
    Seconds(f64),
    Fraction(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct TimeMaskConfig {
    pub frame_rate: usize,
    pub cap: TimeMaskCap,
}

impl Default for TimeMaskConfig {
    fn default() -> Self {
        TimeMaskConfig { frame_rate: 25, cap: TimeMaskCap::Seconds(0.4) }
    }
}

impl TimeMaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_rate == 0 {
            return Err(Error::config("time mask: frame_rate must be positive"));
        }
        let v = match self.cap {
            TimeMaskCap::Seconds(s) => s,
            TimeMaskCap::Fraction(f) => f,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(format!("time mask: cap {v} must be non-negative")));
        }
        Ok(())
    }

    fn max_len(&self, t: usize) -> usize {
        let m = match self.cap {
            TimeMaskCap::Seconds(s) => (s * self.frame_rate as f64) as usize,
            TimeMaskCap::Fraction(f) => (f * t as f64) as usize,
        };
        m.min(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpan {
    pub start: usize,
    pub len: usize,
}

/// Mask `floor(T / frame_rate)` random temporal spans (one per second of
/// sequence), replacing masked frames with the pre-mask temporal mean
/// frame.  Span lengths are uniform on `{0..=max_len}`; spans may overlap.
/// Sequences shorter than one second come back untouched.
pub fn time_mask(
    x: &Tensor,
    time_axis: usize,
    cfg: &TimeMaskConfig,
    rng: &mut StreamRng,
) -> Result<(Tensor, Vec<MaskSpan>)> {
    cfg.validate()?;
    let shape = x.shape();
    if time_axis >= shape.len() {
        return Err(Error::shape(format!(
            "time mask: axis {time_axis} out of range for shape {shape:?}"
        )));
    }
    let t = shape[time_axis];
    if t == 0 {
        return Err(Error::shape("time mask: empty time axis"));
    }
    let num_masks = t / cfg.frame_rate;
    if num_masks == 0 {
        return Ok((x.clone(), Vec::new()));
    }
    let outer: usize = shape[..time_axis].iter().product();
    let inner: usize = shape[time_axis + 1..].iter().product();
    let mut data = x.to_vec();
    // Temporal mean frame of the original sequence.
    let mut mean = vec![0.0f64; outer * inner];
    for o in 0..outer {
        for ti in 0..t {
            let base = (o * t + ti) * inner;
            for i in 0..inner {
                mean[o * inner + i] += data[base + i];
            }
        }
    }
    for v in mean.iter_mut() {
        *v /= t as f64;
    }
    let max_len = cfg.max_len(t);
    let mut spans = Vec::with_capacity(num_masks);
    for _ in 0..num_masks {
        let len = rng.below(max_len + 1);
        let start = rng.below(t - len + 1);
        spans.push(MaskSpan { start, len });
        for ti in start..start + len {
            for o in 0..outer {
                let base = (o * t + ti) * inner;
                data[base..base + inner].copy_from_slice(&mean[o * inner..(o + 1) * inner]);
            }
        }
    }
    Ok((Tensor::from_vec(shape, data)?, spans))
}

#[derive(Debug, Clone, Copy)]
pub struct SpatialConfig {
    pub crop_h: usize,
    pub crop_w: usize,
    pub flip_prob: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig { crop_h: 88, crop_w: 88, flip_prob: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialLog {
    pub offset_y: usize,
    pub offset_x: usize,
    pub flipped: bool,
}

/// Crop and optionally mirror an image stack `[C, T, H, W]`.  One offset
/// and one flip decision are drawn per sequence and applied to every
/// frame.  In eval mode the crop is the deterministic center and no flip
/// happens (the generator is untouched).
pub fn spatial_augment(
    x: &Tensor,
    cfg: &SpatialConfig,
    train: bool,
    rng: &mut StreamRng,
) -> Result<(Tensor, SpatialLog)> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(Error::shape(format!("spatial augment: need [C, T, H, W], got {shape:?}")));
    }
    let (c, t, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if cfg.crop_h > h || cfg.crop_w > w || cfg.crop_h == 0 || cfg.crop_w == 0 {
        return Err(Error::config(format!(
            "spatial augment: crop {}x{} does not fit canvas {h}x{w}",
            cfg.crop_h, cfg.crop_w
        )));
    }
    let log = if train {
        SpatialLog {
            offset_y: rng.below(h - cfg.crop_h + 1),
            offset_x: rng.below(w - cfg.crop_w + 1),
            flipped: rng.uniform() < cfg.flip_prob,
        }
    } else {
        SpatialLog { offset_y: (h - cfg.crop_h) / 2, offset_x: (w - cfg.crop_w) / 2, flipped: false }
    };
    let src = x.data();
    let mut out = Vec::with_capacity(c * t * cfg.crop_h * cfg.crop_w);
    for ci in 0..c {
        for ti in 0..t {
            let frame = (ci * t + ti) * h * w;
            for y in 0..cfg.crop_h {
                let row = frame + (log.offset_y + y) * w + log.offset_x;
                if log.flipped {
                    for xw in (0..cfg.crop_w).rev() {
                        out.push(src[row + xw]);
                    }
                } else {
                    out.extend_from_slice(&src[row..row + cfg.crop_w]);
                }
            }
        }
    }
    drop(src);
    Ok((Tensor::from_vec(&[c, t, cfg.crop_h, cfg.crop_w], out)?, log))
}

/// Normalization statistics computed from the training split.  One entry
/// per feature dimension, or a single entry applied to every element
/// (image mode).  `floored` counts dimensions whose deviation hit the
/// epsilon floor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub floored: usize,
    pub provenance: String,
}

const STD_FLOOR: f64 = 1e-8;

/// Per-dimension mean and deviation over `[D, T]` feature sequences.
pub fn feature_stats(sequences: &[&Tensor], provenance: &str) -> Result<FeatureStats> {
    let d = match sequences.first() {
        Some(s) if s.rank() == 2 => s.shape()[0],
        _ => return Err(Error::config("feature stats: need at least one [D, T] sequence")),
    };
    let mut count = vec![0usize; d];
    let mut mean = vec![0.0f64; d];
    let mut m2 = vec![0.0f64; d];
    for s in sequences {
        if s.rank() != 2 || s.shape()[0] != d {
            return Err(Error::shape(format!(
                "feature stats: inconsistent sequence shape {:?}",
                s.shape()
            )));
        }
        let t = s.shape()[1];
        let data = s.data();
        for di in 0..d {
            for ti in 0..t {
                let v = data[di * t + ti];
                count[di] += 1;
                let delta = v - mean[di];
                mean[di] += delta / count[di] as f64;
                m2[di] += delta * (v - mean[di]);
            }
        }
    }
    finish_stats(mean, m2, count, provenance)
}

/// Scalar mean and deviation over every element of image stacks.
pub fn scalar_stats(sequences: &[&Tensor], provenance: &str) -> Result<FeatureStats> {
    if sequences.is_empty() {
        return Err(Error::config("feature stats: need at least one sequence"));
    }
    let mut count = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for s in sequences {
        for &v in s.data().iter() {
            count += 1;
            let delta = v - mean;
            mean += delta / count as f64;
            m2 += delta * (v - mean);
        }
    }
    finish_stats(vec![mean], vec![m2], vec![count], provenance)
}

fn finish_stats(
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: Vec<usize>,
    provenance: &str,
) -> Result<FeatureStats> {
    let mut std = Vec::with_capacity(mean.len());
    let mut floored = 0;
    for (i, &c) in count.iter().enumerate() {
        if c == 0 {
            return Err(Error::data("feature stats: empty dimension"));
        }
        let s = crate::math::sqrt(m2[i] / c as f64);
        if s < STD_FLOOR {
            floored += 1;
            std.push(STD_FLOOR);
        } else {
            std.push(s);
        }
    }
    Ok(FeatureStats { mean, std, floored, provenance: String::from(provenance) })
}

/// `(x - mean) / std` with the training-set statistics.  Per-dimension
/// stats expect `[D, T]` input; single-entry stats apply everywhere.
pub fn normalize(x: &Tensor, stats: &FeatureStats) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    let mut data = x.to_vec();
    if stats.mean.len() == 1 {
        let (m, s) = (stats.mean[0], stats.std[0]);
        for v in data.iter_mut() {
            *v = (*v - m) / s;
        }
    } else {
        if x.rank() != 2 || x.shape()[0] != stats.mean.len() {
            return Err(Error::shape(format!(
                "normalize: stats over {} dimensions do not fit shape {:?}",
                stats.mean.len(),
                x.shape()
            )));
        }
        let t = shape[1];
        for di in 0..stats.mean.len() {
            let (m, s) = (stats.mean[di], stats.std[di]);
            for ti in 0..t {
                data[di * t + ti] = (data[di * t + ti] - m) / s;
            }
        }
    }
    Tensor::from_vec(&shape, data)
}

/// Chi-square statistic of observed counts against a uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected) * (c as f64 - expected) / expected).sum()
}
