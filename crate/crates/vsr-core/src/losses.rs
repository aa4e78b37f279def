//! Training objectives: CTC alignment loss, attention cross-entropy,
//! their hybrid combination, and the auxiliary prediction losses against
//! frozen teacher representations.

use alloc::format;
use alloc::vec;


use crate::error::{Error, Result};
use crate::math::{self, log_add, LOG_ZERO};
use crate::nn::Linear;
use crate::tape::Tape;
use crate::tensor::{Precision, Tensor};
use crate::vocab::BLANK;

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// CTC share of the hybrid recognition loss.
    pub alpha: f64,
    pub beta_audio: f64,
    pub beta_visual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.1, beta_audio: 0.4, beta_visual: 0.4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta_audio", self.beta_audio),
            ("beta_visual", self.beta_visual),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::config(format!("loss weight {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Frozen per-frame teacher representations, `[B, T, D]` each.  Must be
/// detached: no gradient may reach a teacher.
pub struct TeacherTargets {
    pub audio: Tensor,
    pub visual: Tensor,
}

/// Minimum frame count CTC needs for a target: one frame per label plus a
/// separating blank per adjacent repeat.
pub fn ctc_required_frames(target: &[usize]) -> usize {
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats
}

/// Negative log-probability that the per-frame distributions emit `target`
/// under the CTC collapse rule, summed over all alignments by a forward
/// dynamic program over the blank-interleaved state chain.  `logprobs` is
/// `[T, V]` with blank at index 0.
pub fn ctc_loss(tape: &Tape, logprobs: &Tensor, target: &[usize]) -> Result<Tensor> {
    let shape = logprobs.shape();
    if shape.len() != 2 {
        return Err(Error::shape(format!("ctc: logprobs must be [T, V], got {shape:?}")));
    }
    let (t_len, v) = (shape[0], shape[1]);
    if t_len == 0 {
        return Err(Error::shape("ctc: zero frames"));
    }
    for &label in target {
        if label == BLANK {
            return Err(Error::config("ctc: target must not contain the blank"));
        }
        if label >= v {
            return Err(Error::data(format!("ctc: label {label} outside vocabulary of {v}")));
        }
    }
    let required = ctc_required_frames(target);
    if t_len < required {
        return Err(Error::InfeasibleAlignment { frames: t_len, required });
    }

    let s_count = 2 * target.len() + 1;
    // State s emits blank when even, target[s/2] when odd.
    let lab = |s: usize| if s % 2 == 0 { BLANK } else { target[s / 2] };
    let skip_ok = |s: usize| s >= 2 && s % 2 == 1 && target[s / 2] != target[s / 2 - 1];

    let mut alpha = vec![LOG_ZERO; t_len * s_count];
    {
        let z = logprobs.data();
        alpha[0] = z[lab(0)];
        if s_count > 1 {
            alpha[1] = z[lab(1)];
        }
        for t in 1..t_len {
            for s in 0..s_count {
                let prev = &alpha[(t - 1) * s_count..t * s_count];
                let mut acc = prev[s];
                if s >= 1 {
                    acc = log_add(acc, prev[s - 1]);
                }
                if skip_ok(s) {
                    acc = log_add(acc, prev[s - 2]);
                }
                alpha[t * s_count + s] = if acc <= LOG_ZERO {
                    LOG_ZERO
                } else {
                    acc + z[t * v + lab(s)]
                };
            }
        }
    }
    let last = &alpha[(t_len - 1) * s_count..];
    let mut log_p = last[s_count - 1];
    if s_count >= 2 {
        log_p = log_add(log_p, last[s_count - 2]);
    }
    if log_p <= LOG_ZERO / 2.0 {
        return Err(Error::numeric("ctc: alignment probability underflowed"));
    }
    let prec = logprobs.precision();
    let loss = Tensor::build(vec![], vec![prec.quantize(-log_p)], prec);

    if tape.is_recording() && logprobs.wants_grad() {
        let (zc, lc) = (logprobs.clone(), loss.clone());
        let target = target.to_vec();
        tape.record_if(true, &loss, move || {
            let og = lc.grad_ref();
            let Some(g) = og.as_ref() else { return };
            let g0 = g[0];
            let lab = |s: usize| if s % 2 == 0 { BLANK } else { target[s / 2] };
            let skip_ok = |s: usize| s >= 2 && s % 2 == 1 && target[s / 2] != target[s / 2 - 1];
            let z = zc.data();
            // Backward DP; beta includes the emission at its own frame,
            // mirroring alpha.
            let mut beta = vec![LOG_ZERO; t_len * s_count];
            let base = (t_len - 1) * s_count;
            beta[base + s_count - 1] = z[(t_len - 1) * v + lab(s_count - 1)];
            if s_count >= 2 {
                beta[base + s_count - 2] = z[(t_len - 1) * v + lab(s_count - 2)];
            }
            for t in (0..t_len - 1).rev() {
                for s in 0..s_count {
                    let next = &beta[(t + 1) * s_count..(t + 2) * s_count];
                    let mut acc = next[s];
                    if s + 1 < s_count {
                        acc = log_add(acc, next[s + 1]);
                    }
                    if s + 2 < s_count && skip_ok(s + 2) {
                        acc = log_add(acc, next[s + 2]);
                    }
                    beta[t * s_count + s] =
                        if acc <= LOG_ZERO { LOG_ZERO } else { acc + z[t * v + lab(s)] };
                }
            }
            drop(z);
            let zc2 = zc.clone();
            zc2.accum_grad(|gz| {
                let z = zc.data();
                for t in 0..t_len {
                    for s in 0..s_count {
                        let a = alpha[t * s_count + s];
                        let b = beta[t * s_count + s];
                        if a <= LOG_ZERO || b <= LOG_ZERO {
                            continue;
                        }
                        let zi = t * v + lab(s);
                        // alpha and beta both carry frame t's emission, so
                        // remove one copy.
                        let occ = math::exp(a + b - z[zi] - log_p);
                        gz[zi] -= g0 * occ;
                    }
                }
            });
        });
    }
    Ok(loss)
}

/// Batch CTC: mean of per-sample losses over valid frame prefixes.
pub fn ctc_loss_batch(
    tape: &Tape,
    logprobs: &Tensor,
    lengths: &[usize],
    targets: &[&[usize]],
) -> Result<Tensor> {
    let shape = logprobs.shape();
    if shape.len() != 3 {
        return Err(Error::shape("ctc: batch logprobs must be [B, T, V]"));
    }
    let (b, t, v) = (shape[0], shape[1], shape[2]);
    if lengths.len() != b || targets.len() != b {
        return Err(Error::shape("ctc: lengths/targets do not match batch"));
    }
    let mut total: Option<Tensor> = None;
    for i in 0..b {
        if lengths[i] == 0 || lengths[i] > t {
            return Err(Error::data(format!("ctc: bad length {} for {t} frames", lengths[i])));
        }
        let row = tape.slice_axis(logprobs, 0, i, i + 1)?;
        let row = tape.reshape(&row, &[t, v])?;
        let row = tape.slice_axis(&row, 0, 0, lengths[i])?;
        let loss = ctc_loss(tape, &row, targets[i])?;
        total = Some(match total {
            Some(acc) => tape.add(&acc, &loss)?,
            None => loss,
        });
    }
    tape.scale(&total.unwrap(), 1.0 / b as f64)
}

/// Teacher-forced cross-entropy: per sample the sum of target-token
/// negative log-probabilities, averaged over the batch.  Optional label
/// smoothing spreads `smoothing` mass uniformly over the non-blank,
/// non-target vocabulary.
pub fn attention_loss(
    tape: &Tape,
    logprobs: &Tensor,
    targets: &[&[usize]],
    smoothing: f64,
) -> Result<Tensor> {
    let shape = logprobs.shape();
    if shape.len() != 3 {
        return Err(Error::shape("attention loss: logprobs must be [B, L, V]"));
    }
    let (b, l_max, v) = (shape[0], shape[1], shape[2]);
    if targets.len() != b {
        return Err(Error::config("attention loss: targets do not match batch"));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::config(format!("attention loss: smoothing {smoothing} outside [0, 1)")));
    }
    if smoothing > 0.0 && v < 3 {
        return Err(Error::config("attention loss: smoothing needs at least 3 vocab entries"));
    }
    let longest = targets.iter().map(|t| t.len()).max().unwrap_or(0);
    if longest != l_max || targets.iter().any(|t| t.is_empty()) {
        return Err(Error::config(format!(
            "attention loss: target lengths (max {longest}) disagree with {l_max} decoder steps"
        )));
    }
    let mut w = vec![0.0f64; b * l_max * v];
    let inv_b = 1.0 / b as f64;
    let off_mass = if smoothing > 0.0 { smoothing / (v - 2) as f64 } else { 0.0 };
    for (bi, row) in targets.iter().enumerate() {
        for (li, &tok) in row.iter().enumerate() {
            if tok == BLANK || tok >= v {
                return Err(Error::data(format!("attention loss: invalid target token {tok}")));
            }
            let base = (bi * l_max + li) * v;
            if smoothing > 0.0 {
                for vi in 1..v {
                    w[base + vi] = off_mass * inv_b;
                }
            }
            w[base + tok] = (1.0 - smoothing) * inv_b;
        }
    }
    let w = Tensor::build(vec![b, l_max, v], w, Precision::F64);
    let weighted = tape.mul(logprobs, &w)?;
    tape.neg(&tape.sum_all(&weighted)?)
}

/// `alpha * ctc + (1 - alpha) * attention`.
pub fn vsr_loss(tape: &Tape, l_ctc: &Tensor, l_att: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("vsr loss: alpha {alpha} outside [0, 1]")));
    }
    tape.add(&tape.scale(l_ctc, alpha)?, &tape.scale(l_att, 1.0 - alpha)?)
}

/// Weighted L1 between projected tap features and frozen teacher
/// representations.  Teacher and student may disagree by one frame (audio
/// rounding); both are truncated to the shorter length.  A predictor may be
/// absent only when its weight is zero, so a disabled task contributes no
/// parameters and no gradients at all.
pub fn aux_loss(
    tape: &Tape,
    tap: &Tensor,
    targets: &TeacherTargets,
    proj_audio: Option<&Linear>,
    proj_visual: Option<&Linear>,
    weights: &LossWeights,
    lengths: &[usize],
) -> Result<Tensor> {
    weights.validate()?;
    let mut total = Tensor::scalar(0.0);
    for (label, beta, teacher, proj) in [
        ("audio", weights.beta_audio, &targets.audio, proj_audio),
        ("visual", weights.beta_visual, &targets.visual, proj_visual),
    ] {
        if beta == 0.0 {
            continue;
        }
        let proj = proj.ok_or_else(|| {
            Error::config(format!("aux loss: {label} weight {beta} set but predictor missing"))
        })?;
        let term = one_aux_term(tape, tap, teacher, proj, lengths)?;
        total = tape.add(&total, &tape.scale(&term, beta)?)?;
    }
    Ok(total)
}

fn one_aux_term(
    tape: &Tape,
    tap: &Tensor,
    teacher: &Tensor,
    proj: &Linear,
    lengths: &[usize],
) -> Result<Tensor> {
    let (ts, tt) = (tap.shape(), teacher.shape());
    if ts.len() != 3 || tt.len() != 3 || ts[0] != tt[0] || ts[2] != tt[2] {
        return Err(Error::shape(format!(
            "aux loss: tap {ts:?} and teacher {tt:?} must be [B, T, D] with equal B and D"
        )));
    }
    if ts[1].abs_diff(tt[1]) > 1 {
        return Err(Error::data(format!(
            "aux loss: student has {} frames, teacher {}; at most one frame of drift is allowed",
            ts[1], tt[1]
        )));
    }
    let t_min = ts[1].min(tt[1]);
    let (b, d) = (ts[0], ts[2]);
    let tap = if ts[1] > t_min { tape.slice_axis(tap, 1, 0, t_min)? } else { tap.clone() };
    let teacher =
        if tt[1] > t_min { tape.slice_axis(teacher, 1, 0, t_min)? } else { teacher.clone() };
    let pred = proj.forward(tape, &tap)?;
    let mut mask = vec![0.0f64; b * t_min * d];
    for (bi, &len) in lengths.iter().enumerate() {
        for t in 0..len.min(t_min) {
            let base = (bi * t_min + t) * d;
            mask[base..base + d].fill(1.0);
        }
    }
    let mask = Tensor::build(vec![b, t_min, d], mask, Precision::F64);
    tape.l1_distance(&pred, &teacher, Some(&mask))
}

/// `recognition + auxiliary`.
pub fn total_loss(tape: &Tape, l_vsr: &Tensor, l_aux: &Tensor) -> Result<Tensor> {
    tape.add(l_vsr, l_aux)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::BuildCtx;
    use crate::rng::StreamRng;

    fn logprob_tensor(rows: &[Vec<f64>]) -> Tensor {
        let t = rows.len();
        let v = rows[0].len();
        let mut data = Vec::new();
        for r in rows {
            let total: f64 = r.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "test rows must be distributions");
            data.extend(r.iter().map(|&p| math::ln(p)));
        }
        Tensor::from_vec(&[t, v], data).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let tape = Tape::inference();
        let z = logprob_tensor(&[vec![0.3, 0.6, 0.1]]);
        let loss = ctc_loss(&tape, &z, &[1]).unwrap();
        assert!((loss.item() - (-math::ln(0.6))).abs() < 1e-12);
    }

    #[test]
    fn two_frames_uniform_sums_three_alignments() {
        let tape = Tape::inference();
        let u = 1.0 / 3.0;
        let z = logprob_tensor(&[vec![u, u, u], vec![u, u, u]]);
        let loss = ctc_loss(&tape, &z, &[1]).unwrap();
        // (a,-), (-,a), (a,a): 3/9.
        assert!((loss.item() - (-math::ln(1.0 / 3.0))).abs() < 1e-12);
    }

    #[test]
    fn repeat_without_room_is_infeasible() {
        let tape = Tape::inference();
        let u = 1.0 / 3.0;
        let z = logprob_tensor(&[vec![u, u, u], vec![u, u, u]]);
        match ctc_loss(&tape, &z, &[1, 1]) {
            Err(Error::InfeasibleAlignment { frames: 2, required: 3 }) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    /// Exhaustive reference: enumerate all V^T frame paths, collapse
    /// (merge repeats, then drop blanks), and sum matching probabilities.
    fn brute_force(probs: &[Vec<f64>], target: &[usize]) -> f64 {
        let t = probs.len();
        let v = probs[0].len();
        let mut total = 0.0;
        let paths = (v as u64).pow(t as u32);
        for code in 0..paths {
            let mut c = code;
            let mut p = 1.0;
            let mut collapsed: Vec<usize> = Vec::new();
            let mut prev = usize::MAX;
            for row in probs.iter().take(t) {
                let sym = (c % v as u64) as usize;
                c /= v as u64;
                p *= row[sym];
                if sym != prev && sym != BLANK {
                    collapsed.push(sym);
                }
                prev = sym;
            }
            if collapsed == target {
                total += p;
            }
        }
        total
    }

    fn random_distribution(rng: &mut StreamRng, v: usize) -> Vec<f64> {
        let mut row: Vec<f64> = (0..v).map(|_| rng.uniform() + 0.05).collect();
        let total: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= total;
        }
        row
    }

    #[test]
    fn dp_matches_alignment_enumeration() {
        let mut rng = StreamRng::named(100, "ctc-oracle");
        let tape = Tape::inference();
        let mut checked = 0;
        for t in 1..=6usize {
            for v in 2..=3usize {
                for case in 0..6 {
                    let probs: Vec<Vec<f64>> =
                        (0..t).map(|_| random_distribution(&mut rng, v)).collect();
                    let max_len = 3.min(t);
                    let len = case % (max_len + 1);
                    let target: Vec<usize> =
                        (0..len).map(|_| 1 + rng.below(v - 1)).collect();
                    if ctc_required_frames(&target) > t {
                        continue;
                    }
                    let z = logprob_tensor(&probs);
                    let dp = ctc_loss(&tape, &z, &target).unwrap().item();
                    let brute = brute_force(&probs, &target);
                    assert!(
                        (dp - (-math::ln(brute))).abs() < 1e-9,
                        "t={t} v={v} target={target:?}: dp {dp} vs brute {}",
                        -math::ln(brute)
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn probabilities_are_complete_over_label_sequences() {
        // exp(-loss) summed over every label sequence of length <= T must
        // be exactly one: CTC is a distribution over sequences.
        let mut rng = StreamRng::named(200, "ctc-complete");
        let tape = Tape::inference();
        let t = 4;
        let v = 3;
        let probs: Vec<Vec<f64>> = (0..t).map(|_| random_distribution(&mut rng, v)).collect();
        let z = logprob_tensor(&probs);
        let mut total = 0.0;
        // All sequences over labels {1, 2} with length 0..=4.
        for len in 0..=t {
            for code in 0..(2usize.pow(len as u32)) {
                let target: Vec<usize> = (0..len).map(|i| 1 + ((code >> i) & 1)).collect();
                match ctc_loss(&tape, &z, &target) {
                    Ok(loss) => total += math::exp(-loss.item()),
                    Err(Error::InfeasibleAlignment { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "total {total}");
    }

    #[test]
    fn ctc_gradients_match_finite_differences() {
        let mut rng = StreamRng::named(300, "ctc-grad");
        let logits = Tensor::randn(&[5, 4], 1.0, &mut rng).requires_grad();
        let report = crate::gradcheck::check_gradients(
            &|tape| {
                let z = tape.log_softmax_last(&logits)?;
                ctc_loss(tape, &z, &[1, 2, 1])
            },
            &[("logits", &logits)],
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.worst_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn batch_ctc_averages_per_sample_losses() {
        let tape = Tape::inference();
        let u = 1.0 / 3.0;
        let rows = vec![vec![0.3, 0.6, 0.1], vec![u, u, u]];
        let mut data = Vec::new();
        for r in &rows {
            data.extend(r.iter().map(|&p| math::ln(p)));
        }
        // Batch of two: first sample sees only frame 0, second both frames.
        let mut batch = data.clone();
        batch.extend(data.iter());
        let z = Tensor::from_vec(&[2, 2, 3], batch).unwrap();
        let t1: &[usize] = &[1];
        let loss = ctc_loss_batch(&tape, &z, &[1, 2], &[t1, t1]).unwrap();
        let solo1 = -math::ln(0.6);
        let solo2 = -math::ln(0.6 * u + 0.3 * u + 0.6 * u);
        assert!((loss.item() - 0.5 * (solo1 + solo2)).abs() < 1e-12);
    }

    #[test]
    fn attention_loss_perfect_predictions_are_zero() {
        let tape = Tape::inference();
        let mut data = vec![-1.0e30f64; 2 * 4];
        data[0 * 4 + 2] = 0.0;
        data[1 * 4 + 3] = 0.0;
        let z = Tensor::from_vec(&[1, 2, 4], data).unwrap();
        let tgt: &[usize] = &[2, 3];
        let loss = attention_loss(&tape, &z, &[tgt], 0.0).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn attention_loss_uniform_is_length_times_log_v() {
        let tape = Tape::inference();
        let z = Tensor::full(&[1, 3, 4], math::ln(0.25));
        let tgt: &[usize] = &[1, 2, 3];
        let loss = attention_loss(&tape, &z, &[tgt], 0.0).unwrap();
        assert!((loss.item() - 3.0 * math::ln(4.0)).abs() < 1e-12);
    }

    #[test]
    fn attention_loss_rejects_length_mismatch() {
        let tape = Tape::inference();
        let z = Tensor::full(&[1, 3, 4], math::ln(0.25));
        let short: &[usize] = &[1, 2];
        match attention_loss(&tape, &z, &[short], 0.0) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = StreamRng::named(400, "att-grad");
        let logits = Tensor::randn(&[2, 3, 5], 1.0, &mut rng).requires_grad();
        let t1: &[usize] = &[1, 2, 3];
        let t2: &[usize] = &[4, 2];
        for smoothing in [0.0, 0.1] {
            let report = crate::gradcheck::check_gradients(
                &|tape| {
                    let z = tape.log_softmax_last(&logits)?;
                    attention_loss(tape, &z, &[t1, t2], smoothing)
                },
                &[("logits", &logits)],
                1e-6,
                1e-5,
            )
            .unwrap();
            assert!(report.worst_rel_err < 1e-5, "smoothing {smoothing}: {report:?}");
        }
    }

    #[test]
    fn vsr_loss_arithmetic() {
        let tape = Tape::inference();
        let ctc = Tensor::scalar(2.0);
        let att = Tensor::scalar(1.0);
        assert!((vsr_loss(&tape, &ctc, &att, 0.1).unwrap().item() - 1.1).abs() < 1e-12);
        assert_eq!(vsr_loss(&tape, &ctc, &att, 0.0).unwrap().item(), 1.0);
        assert_eq!(vsr_loss(&tape, &ctc, &att, 1.0).unwrap().item(), 2.0);
    }

    fn aux_fixture(seed: u64) -> (BuildCtx, Linear, Linear, Tensor, TeacherTargets) {
        let mut ctx = BuildCtx::new(seed);
        let pa = Linear::new(&mut ctx, "aux.audio", 4, 4, true).unwrap();
        let pv = Linear::new(&mut ctx, "aux.visual", 4, 4, true).unwrap();
        let mut rng = StreamRng::named(seed, "tap");
        let tap = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let targets = TeacherTargets {
            audio: Tensor::randn(&[2, 3, 4], 1.0, &mut rng),
            visual: Tensor::randn(&[2, 3, 4], 1.0, &mut rng),
        };
        (ctx, pa, pv, tap, targets)
    }

    #[test]
    fn aux_loss_zero_when_predictions_match() {
        let (_, pa, pv, tap, _) = aux_fixture(1);
        let tape = Tape::inference();
        let pred_a = pa.forward(&tape, &tap).unwrap().detach();
        let pred_v = pv.forward(&tape, &tap).unwrap().detach();
        let targets = TeacherTargets { audio: pred_a, visual: pred_v };
        let w = LossWeights::default();
        let loss = aux_loss(&tape, &tap, &targets, Some(&pa), Some(&pv), &w, &[3, 3]).unwrap();
        assert!(loss.item().abs() < 1e-12);
    }

    #[test]
    fn aux_loss_weighted_arithmetic() {
        // Zeroed projections predict 0 everywhere; all-ones teachers give
        // mean absolute error 1 per term: 0.4 + 0.4 = 0.8.
        let (_, pa, pv, tap, _) = aux_fixture(2);
        pa.w.update_data(|d| d.fill(0.0));
        pv.w.update_data(|d| d.fill(0.0));
        let tape = Tape::inference();
        let targets = TeacherTargets {
            audio: Tensor::full(&[2, 3, 4], 1.0),
            visual: Tensor::full(&[2, 3, 4], 1.0),
        };
        let w = LossWeights::default();
        let loss = aux_loss(&tape, &tap, &targets, Some(&pa), Some(&pv), &w, &[3, 3]).unwrap();
        assert!((loss.item() - 0.8).abs() < 1e-12);
        let only_visual = LossWeights { beta_audio: 0.0, ..LossWeights::default() };
        let loss = aux_loss(&tape, &tap, &targets, Some(&pa), Some(&pv), &only_visual, &[3, 3]).unwrap();
        assert!((loss.item() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn aux_loss_tolerates_one_frame_drift_only() {
        let (_, pa, pv, tap, _) = aux_fixture(3);
        let tape = Tape::inference();
        let mut rng = StreamRng::named(9, "t");
        let ok = TeacherTargets {
            audio: Tensor::randn(&[2, 4, 4], 1.0, &mut rng),
            visual: Tensor::randn(&[2, 3, 4], 1.0, &mut rng),
        };
        let w = LossWeights::default();
        assert!(aux_loss(&tape, &tap, &ok, Some(&pa), Some(&pv), &w, &[3, 3]).is_ok());
        let drifted = TeacherTargets {
            audio: Tensor::randn(&[2, 5, 4], 1.0, &mut rng),
            visual: Tensor::randn(&[2, 3, 4], 1.0, &mut rng),
        };
        match aux_loss(&tape, &tap, &drifted, Some(&pa), Some(&pv), &w, &[3, 3]) {
            Err(Error::Data(_)) => {}
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn no_gradient_reaches_teachers() {
        let (_, pa, pv, tap_base, targets) = aux_fixture(4);
        let tap = tap_base.requires_grad();
        let tape = Tape::new();
        let w = LossWeights::default();
        let loss = aux_loss(&tape, &tap, &targets, Some(&pa), Some(&pv), &w, &[3, 3]).unwrap();
        tape.backward(&loss).unwrap();
        assert!(targets.audio.grad().is_none());
        assert!(targets.visual.grad().is_none());
        assert!(tap.grad().is_some());
        assert!(pa.w.grad().is_some());
    }

    #[test]
    fn total_loss_is_linear_in_components() {
        let (_, pa, pv, tap_base, targets) = aux_fixture(5);
        let tap = tap_base.requires_grad();
        let w = LossWeights::default();
        let run = |which: u8| -> Vec<f64> {
            tap.zero_grad();
            pa.w.zero_grad();
            let tape = Tape::new();
            let l_ctc = tape.scale(&tape.mean_all(&tap).unwrap(), 0.3).unwrap();
            let l_att = tape.scale(&tape.sum_all(&tap).unwrap(), 0.01).unwrap();
            let l_vsr = vsr_loss(&tape, &l_ctc, &l_att, 0.1).unwrap();
            let l_aux = aux_loss(&tape, &tap, &targets, Some(&pa), Some(&pv), &w, &[3, 3]).unwrap();
            let target = match which {
                0 => total_loss(&tape, &l_vsr, &l_aux).unwrap(),
                1 => l_vsr,
                _ => l_aux,
            };
            tape.backward(&target).unwrap();
            tap.grad().unwrap()
        };
        let g_total = run(0);
        let g_vsr = run(1);
        let g_aux = run(2);
        for i in 0..g_total.len() {
            assert!((g_total[i] - (g_vsr[i] + g_aux[i])).abs() < 1e-12);
        }
        let tape = Tape::inference();
        let total =
            total_loss(&tape, &Tensor::scalar(1.1), &Tensor::scalar(0.8)).unwrap();
        assert!((total.item() - 1.9).abs() < 1e-12);
    }
}
