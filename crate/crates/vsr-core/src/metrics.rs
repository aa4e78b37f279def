//! Error-rate metrics: minimal edit alignment with deterministic
//! tie-breaking and pooled corpus scoring over words or characters.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length.
    pub n: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; undefined for an empty reference.
    pub fn rate(&self) -> Option<f64> {
        if self.n == 0 {
            None
        } else {
            Some(self.errors() as f64 / self.n as f64)
        }
    }

    pub fn add(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.n += other.n;
    }
}

/// Minimal-cost alignment counts between a hypothesis and a reference
/// under unit costs.  Among equal-cost alignments the backtrace prefers
/// substitution over insertion over deletion, so counts are deterministic.
pub fn edit_distance_counts<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditCounts {
    let (h, r) = (hyp.len(), reference.len());
    let cols = r + 1;
    let mut cost = vec![0usize; (h + 1) * cols];
    for j in 0..=r {
        cost[j] = j;
    }
    for i in 1..=h {
        cost[i * cols] = i;
        for j in 1..=r {
            let sub = cost[(i - 1) * cols + j - 1]
                + if hyp[i - 1] == reference[j - 1] { 0 } else { 1 };
            let ins = cost[(i - 1) * cols + j] + 1;
            let del = cost[i * cols + j - 1] + 1;
            cost[i * cols + j] = sub.min(ins).min(del);
        }
    }
    let mut counts = EditCounts { n: r, ..EditCounts::default() };
    let (mut i, mut j) = (h, r);
    while i > 0 || j > 0 {
        let here = cost[i * cols + j];
        if i > 0 && j > 0 {
            let matched = hyp[i - 1] == reference[j - 1];
            let step = cost[(i - 1) * cols + j - 1] + usize::from(!matched);
            if step == here {
                if !matched {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * cols + j] + 1 == here {
            counts.insertions += 1;
            i -= 1;
            continue;
        }
        counts.deletions += 1;
        j -= 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Word,
    Char,
}

/// Split a transcript into scoring tokens.  Word mode splits on runs of
/// whitespace; character mode scores every character, spaces included.
pub fn tokenize(text: &str, unit: Unit) -> Vec<String> {
    match unit {
        Unit::Word => text.split_whitespace().map(|w| w.to_string()).collect(),
        Unit::Char => text.chars().map(|c| c.to_string()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusScore {
    pub counts: EditCounts,
    /// Pooled error rate `sum(S+D+I) / sum(N)`; `None` when the pooled
    /// reference is empty.
    pub rate: Option<f64>,
    pub utterances: usize,
}

/// Score decoded transcripts against references, joined by utterance id.
/// The rate pools error and reference counts over the corpus rather than
/// averaging per-utterance rates.
pub fn score_corpus(
    hyps: &[(String, String)],
    refs: &[(String, String)],
    unit: Unit,
) -> Result<CorpusScore> {
    let hyp_map: BTreeMap<&str, &str> =
        hyps.iter().map(|(id, text)| (id.as_str(), text.as_str())).collect();
    if hyp_map.len() != hyps.len() {
        return Err(Error::data("score: duplicate hypothesis ids"));
    }
    let ref_ids: BTreeSet<&str> = refs.iter().map(|(id, _)| id.as_str()).collect();
    if ref_ids.len() != refs.len() {
        return Err(Error::data("score: duplicate reference ids"));
    }
    let missing: Vec<&str> =
        refs.iter().map(|(id, _)| id.as_str()).filter(|id| !hyp_map.contains_key(id)).collect();
    let extra: Vec<&str> =
        hyps.iter().map(|(id, _)| id.as_str()).filter(|id| !ref_ids.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::data(format!(
            "score: ids do not align; missing decodes {missing:?}, unmatched decodes {extra:?}"
        )));
    }
    let mut counts = EditCounts::default();
    for (id, ref_text) in refs {
        let hyp_text = hyp_map[id.as_str()];
        let h = tokenize(hyp_text, unit);
        let r = tokenize(ref_text, unit);
        counts.add(&edit_distance_counts(&h, &r));
    }
    Ok(CorpusScore { counts, rate: counts.rate(), utterances: refs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        tokenize(s, Unit::Word)
    }

    fn chars(s: &str) -> Vec<String> {
        tokenize(s, Unit::Char)
    }

    #[test]
    fn identical_sequences_have_no_errors() {
        let c = edit_distance_counts(&words("the cat sat"), &words("the cat sat"));
        assert_eq!(c, EditCounts { substitutions: 0, deletions: 0, insertions: 0, n: 3 });
        assert_eq!(c.rate(), Some(0.0));
    }

    #[test]
    fn missing_tail_word_is_one_deletion() {
        let c = edit_distance_counts(&words("the cat"), &words("the cat sat"));
        assert_eq!(c.deletions, 1);
        assert_eq!(c.substitutions, 0);
        assert_eq!(c.insertions, 0);
        assert!((c.rate().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn character_mode_hand_case() {
        let c = edit_distance_counts(&chars("axcd"), &chars("abc"));
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.insertions, 1);
        assert_eq!(c.deletions, 0);
        assert_eq!(c.n, 3);
        assert!((c.rate().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_prefer_substitution_over_insertion_over_deletion() {
        // "ba" vs "ab": two substitutions, not insert+delete.
        let c = edit_distance_counts(&chars("ba"), &chars("ab"));
        assert_eq!((c.substitutions, c.insertions, c.deletions), (2, 0, 0));
        let twice = edit_distance_counts(&chars("ba"), &chars("ab"));
        assert_eq!(c, twice);
    }

    /// Independent oracle: top-down memoized recursion on the textbook
    /// definition, no backtrace.
    fn min_edits<T: PartialEq>(
        hyp: &[T],
        reference: &[T],
        memo: &mut BTreeMap<(usize, usize), usize>,
        i: usize,
        j: usize,
    ) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let sub = min_edits(hyp, reference, memo, i - 1, j - 1)
            + usize::from(hyp[i - 1] != reference[j - 1]);
        let ins = min_edits(hyp, reference, memo, i - 1, j) + 1;
        let del = min_edits(hyp, reference, memo, i, j - 1) + 1;
        let best = sub.min(ins).min(del);
        memo.insert((i, j), best);
        best
    }

    #[test]
    fn total_cost_matches_recursive_search_exhaustively() {
        // Every pair of sequences of length <= 5 over a 3-symbol alphabet.
        let mut seqs: Vec<Vec<u8>> = vec![vec![]];
        let mut frontier: Vec<Vec<u8>> = vec![vec![]];
        for _ in 0..5 {
            let mut next = Vec::new();
            for s in &frontier {
                for sym in 0..3u8 {
                    let mut s2 = s.clone();
                    s2.push(sym);
                    next.push(s2);
                }
            }
            seqs.extend(next.iter().cloned());
            frontier = next;
        }
        assert_eq!(seqs.len(), 364);
        for a in &seqs {
            for b in &seqs {
                let dp = edit_distance_counts(a, b).errors();
                let mut memo = BTreeMap::new();
                let rec = min_edits(a, b, &mut memo, a.len(), b.len());
                assert_eq!(dp, rec, "hyp {a:?} vs ref {b:?}");
            }
        }
    }

    fn pair(id: &str, text: &str) -> (String, String) {
        (id.to_string(), text.to_string())
    }

    #[test]
    fn corpus_rate_pools_counts() {
        let refs = vec![pair("a", "x y"), pair("b", "u v")];
        let hyps = vec![pair("a", "x z"), pair("b", "u v")];
        let score = score_corpus(&hyps, &refs, Unit::Word).unwrap();
        assert_eq!(score.counts.n, 4);
        assert_eq!(score.counts.errors(), 1);
        assert_eq!(score.rate, Some(0.25));
        assert_eq!(score.utterances, 2);
    }

    #[test]
    fn character_mode_counts_spaces() {
        let refs = vec![pair("a", "ab cd")];
        let hyps = vec![pair("a", "ab cd")];
        let score = score_corpus(&hyps, &refs, Unit::Char).unwrap();
        assert_eq!(score.counts.n, 5, "the space is a scored character");
    }

    #[test]
    fn empty_decode_is_all_deletions() {
        let c = edit_distance_counts(&words(""), &words("a b c"));
        assert_eq!(c.deletions, 3);
        assert_eq!(c.n, 3);
        assert_eq!(c.rate(), Some(1.0));
    }

    #[test]
    fn empty_reference_has_undefined_rate() {
        let c = edit_distance_counts(&words("a b"), &words(""));
        assert_eq!(c.insertions, 2);
        assert_eq!(c.rate(), None);
        let score = score_corpus(&[pair("a", "x")], &[pair("a", "")], Unit::Word).unwrap();
        assert_eq!(score.rate, None);
    }

    #[test]
    fn pooling_commutes_with_corpus_order() {
        let refs = vec![pair("a", "p q r"), pair("b", "s"), pair("c", "t u")];
        let hyps = vec![pair("a", "p q"), pair("b", "x"), pair("c", "t u v")];
        let forward = score_corpus(&hyps, &refs, Unit::Word).unwrap();
        let mut rh = hyps.clone();
        let mut rr = refs.clone();
        rh.reverse();
        rr.reverse();
        let backward = score_corpus(&rh, &rr, Unit::Word).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn misaligned_ids_error_names_them() {
        let refs = vec![pair("a", "x"), pair("b", "y")];
        let hyps = vec![pair("a", "x"), pair("c", "z")];
        match score_corpus(&hyps, &refs, Unit::Word) {
            Err(Error::Data(msg)) => {
                assert!(msg.contains('b') && msg.contains('c'), "{msg}");
            }
            other => panic!("expected data error, got {other:?}"),
        }
    }
}
