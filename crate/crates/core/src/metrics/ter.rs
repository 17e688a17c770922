//! Translation edit rate: word-level Levenshtein distance plus block shifts.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Longest block the greedy search will try to move.
pub const MAX_SHIFT_LEN: usize = 10;

/// Size bound for [`ter_oracle`] on both sides.
pub const ORACLE_MAX_LEN: usize = 8;

/// Shift depth explored by [`ter_oracle`].
pub const ORACLE_MAX_SHIFTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerResult {
    /// Insertions, deletions, substitutions and shifts.
    pub edits: usize,
    /// Of which block shifts.
    pub shifts: usize,
    pub ref_len: usize,
    pub score: f64,
}

impl TerResult {
    fn new(edits: usize, shifts: usize, ref_len: usize) -> Self {
        Self {
            edits,
            shifts,
            ref_len,
            score: edits as f64 / ref_len as f64,
        }
    }
}

/// Plain word-level edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance plus, for each hyp and ref position, whether the chosen
/// minimal path aligns it to an identical token.
fn aligned_levenshtein<T: PartialEq>(hyp: &[T], reference: &[T]) -> (usize, Vec<bool>, Vec<bool>) {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for (j, d) in dp.iter_mut().take(w).enumerate() {
        *d = j;
    }
    for i in 1..=n {
        dp[i * w] = i;
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            dp[i * w + j] = sub.min(dp[(i - 1) * w + j] + 1).min(dp[i * w + j - 1] + 1);
        }
    }
    let mut hyp_ok = vec![false; n];
    let mut ref_ok = vec![false; m];
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == reference[j - 1];
            if here == dp[(i - 1) * w + j - 1] + usize::from(!same) {
                if same {
                    hyp_ok[i - 1] = true;
                    ref_ok[j - 1] = true;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * w + j] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    (dp[n * w + m], hyp_ok, ref_ok)
}

/// Moves `seq[from..from + len]` so that it starts at index `to` of the result.
fn shifted<T: Clone>(seq: &[T], from: usize, len: usize, to: usize) -> Vec<T> {
    let mut rest: Vec<T> = Vec::with_capacity(seq.len());
    rest.extend_from_slice(&seq[..from]);
    rest.extend_from_slice(&seq[from + len..]);
    let block = &seq[from..from + len];
    let mut out = Vec::with_capacity(seq.len());
    out.extend_from_slice(&rest[..to]);
    out.extend_from_slice(block);
    out.extend_from_slice(&rest[to..]);
    out
}

/// Greedy-shift TER.
///
/// While some block shift lowers the total edit count, the one with the
/// largest reduction is applied (ties: longer block, then leftmost origin,
/// then leftmost destination). A candidate block must contain a token the
/// current alignment leaves unmatched and must equal a reference span that
/// also contains an unmatched token.
pub fn ter<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> Result<TerResult> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("TER reference is empty"));
    }
    let mut cur = hyp.to_vec();
    let mut shifts = 0;
    loop {
        let (dist, hyp_ok, ref_ok) = aligned_levenshtein(&cur, reference);
        let Some(next) = best_shift(&cur, reference, dist, &hyp_ok, &ref_ok) else {
            return Ok(TerResult::new(dist + shifts, shifts, reference.len()));
        };
        cur = next;
        shifts += 1;
    }
}

fn best_shift<T: PartialEq + Clone>(
    cur: &[T],
    reference: &[T],
    dist: usize,
    hyp_ok: &[bool],
    ref_ok: &[bool],
) -> Option<Vec<T>> {
    let n = cur.len();
    let mut best: Option<(usize, Vec<T>)> = None;
    for len in (1..=MAX_SHIFT_LEN.min(n)).rev() {
        for from in 0..=n - len {
            if hyp_ok[from..from + len].iter().all(|&ok| ok) {
                continue;
            }
            let block = &cur[from..from + len];
            let has_target = reference.len() >= len
                && (0..=reference.len() - len).any(|j| {
                    &reference[j..j + len] == block && !ref_ok[j..j + len].iter().all(|&ok| ok)
                });
            if !has_target {
                continue;
            }
            for to in 0..=n - len {
                if to == from {
                    continue;
                }
                let candidate = shifted(cur, from, len, to);
                let new_dist = levenshtein(&candidate, reference);
                // The shift itself costs one edit.
                if new_dist + 1 >= dist {
                    continue;
                }
                let gain = dist - new_dist;
                if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    best = Some((gain, candidate));
                }
            }
        }
    }
    best.map(|(_, seq)| seq)
}

/// Exact minimum of `shifts + levenshtein` over every sequence of at most
/// three unrestricted block moves. Only for short inputs.
pub fn ter_oracle<T: Eq + Hash + Clone>(hyp: &[T], reference: &[T]) -> Result<TerResult> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("TER reference is empty"));
    }
    if hyp.len() > ORACLE_MAX_LEN || reference.len() > ORACLE_MAX_LEN {
        return Err(Error::TooLarge(format!(
            "TER oracle supports at most {ORACLE_MAX_LEN} tokens per side (got {} and {})",
            hyp.len(),
            reference.len()
        )));
    }
    let n = hyp.len();
    let mut depth_of: HashMap<Vec<T>, usize> = HashMap::from([(hyp.to_vec(), 0)]);
    let mut frontier = vec![hyp.to_vec()];
    for depth in 1..=ORACLE_MAX_SHIFTS {
        let mut next = Vec::new();
        for seq in &frontier {
            for len in 1..=n {
                for from in 0..=n - len {
                    for to in 0..=n - len {
                        if to == from {
                            continue;
                        }
                        let cand = shifted(seq, from, len, to);
                        if !depth_of.contains_key(&cand) {
                            depth_of.insert(cand.clone(), depth);
                            next.push(cand);
                        }
                    }
                }
            }
        }
        frontier = next;
    }
    let (edits, shifts) = depth_of
        .iter()
        .map(|(seq, &d)| (d + levenshtein(seq, reference), d))
        .min()
        .expect("start state is always present");
    Ok(TerResult::new(edits, shifts, reference.len()))
}

/// Corpus TER: total edits over total reference length.
pub fn corpus_ter<T, S>(hyps: &[S], refs: &[S]) -> Result<TerResult>
where
    T: PartialEq + Clone,
    S: AsRef<[T]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            what: "hypotheses vs references",
            expected: refs.len(),
            actual: hyps.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::EmptyInput("TER needs at least one segment"));
    }
    let (mut edits, mut shifts, mut ref_len) = (0, 0, 0);
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let one = ter(h.as_ref(), r.as_ref()).map_err(|e| e.at_item(i))?;
        edits += one.edits;
        shifts += one.shifts;
        ref_len += one.ref_len;
    }
    Ok(TerResult::new(edits, shifts, ref_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_is_zero() {
        let r = ter(&toks("a b c"), &toks("a b c")).unwrap();
        assert_eq!((r.edits, r.score), (0, 0.0));
    }

    #[test]
    fn single_substitution() {
        let r = ter(&toks("a x c"), &toks("a b c")).unwrap();
        assert_eq!(r.edits, 1);
        assert_eq!(r.shifts, 0);
        assert!((r.score - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn one_shift_fixes_rotation() {
        let r = ter(&toks("c a b"), &toks("a b c")).unwrap();
        assert_eq!((r.edits, r.shifts), (1, 1));
        assert_eq!(levenshtein(&toks("c a b"), &toks("a b c")), 2);
        assert_eq!(ter_oracle(&toks("c a b"), &toks("a b c")).unwrap().edits, 1);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(ter_oracle(&["a"], &["a"]).unwrap().edits, 0);
        assert_eq!(ter_oracle(&["b", "a"], &["a", "b"]).unwrap().edits, 1);
        let empty: [&str; 0] = [];
        assert_eq!(ter_oracle(&empty, &["a"]).unwrap().edits, 1);
        assert_eq!(ter(&empty, &["a"]).unwrap().edits, 1);
    }

    #[test]
    fn oracle_size_limit() {
        let long = vec![0u8; ORACLE_MAX_LEN + 1];
        assert!(matches!(ter_oracle(&long, &[0u8]), Err(Error::TooLarge(_))));
        assert!(matches!(ter_oracle(&[0u8], &long), Err(Error::TooLarge(_))));
    }

    #[test]
    fn empty_reference_is_an_error() {
        let empty: [&str; 0] = [];
        assert!(ter(&["a"], &empty).is_err());
        assert!(ter_oracle(&["a"], &empty).is_err());
    }

    #[test]
    fn score_can_exceed_one() {
        let r = ter(&toks("v w x y z"), &toks("a b")).unwrap();
        assert_eq!(r.edits, 5);
        assert!(r.score > 1.0);
    }

    #[test]
    fn moves_multi_token_block() {
        // "d e" has to travel to the front as a unit.
        let r = ter(&toks("a b c d e"), &toks("d e a b c")).unwrap();
        assert_eq!((r.edits, r.shifts), (1, 1));
    }

    #[test]
    fn corpus_ter_pools_counts() {
        let hyps = vec![toks("a x c"), toks("d e")];
        let refs = vec![toks("a b c"), toks("d e f")];
        let r = corpus_ter(&hyps, &refs).unwrap();
        assert_eq!((r.edits, r.ref_len), (2, 6));
        assert!(corpus_ter(&hyps[..1], &refs).is_err());
    }
}
