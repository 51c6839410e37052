//! One round of fingerprint-driven LMS parsing.
//!
//! A position is L-type when its fingerprint exceeds its right neighbour's
//! (or ties with an L-type neighbour) and S-type symmetrically. The maximal
//! equal-fingerprint suffix has no type. Breaks are the LMS positions: S-type
//! with an L-type left neighbour. Equal fingerprints never break, whether the
//! symbols are equal or merely collide.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::hashing::Fingerprint;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionType {
    L,
    S,
    Lms,
    Undefined,
}

/// Start of the maximal equal-fingerprint suffix run (0-based).
#[inline]
fn suffix_run_start(fps: &[Fingerprint]) -> usize {
    let last = fps[fps.len() - 1];
    let mut start = fps.len() - 1;
    while start > 0 && fps[start - 1] == last {
        start -= 1;
    }
    start
}

/// Appends the 0-based break positions of `fps` to `breaks`, ascending.
///
/// Only two bits of state are carried through the right-to-left scan.
pub fn classify_into(fps: &[Fingerprint], breaks: &mut Vec<usize>) {
    let n = fps.len();
    if n < 2 {
        return;
    }
    let first = breaks.len();
    let run = suffix_run_start(fps);
    if run == 0 {
        return;
    }
    // run - 1 differs from run by maximality of the suffix run.
    let mut right_is_s = fps[run - 1] < fps[run];
    let mut pos = run - 1;
    while pos > 0 {
        let l = pos - 1;
        let is_s = match fps[l].cmp(&fps[pos]) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => right_is_s,
        };
        if right_is_s && !is_s {
            breaks.push(pos);
        }
        right_is_s = is_s;
        pos = l;
    }
    breaks[first..].reverse();
}

/// Break positions (0-based, ascending) of a non-empty fingerprint sequence.
pub fn classify(fps: &[Fingerprint]) -> Result<Vec<usize>> {
    if fps.is_empty() {
        return Err(Error::Domain("cannot parse an empty sequence".into()));
    }
    let mut out = Vec::new();
    classify_into(fps, &mut out);
    Ok(out)
}

/// Per-position types, for inspection and tests.
pub fn position_types(fps: &[Fingerprint]) -> Result<Vec<PositionType>> {
    if fps.is_empty() {
        return Err(Error::Domain("cannot type an empty sequence".into()));
    }
    let n = fps.len();
    let run = suffix_run_start(fps);
    let mut types = vec![PositionType::Undefined; n];
    for l in (0..run).rev() {
        let s = match fps[l].cmp(&fps[l + 1]) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => types[l + 1] != PositionType::L,
        };
        types[l] = if s { PositionType::S } else { PositionType::L };
    }
    for l in 1..run {
        if types[l] == PositionType::S && types[l - 1] == PositionType::L {
            types[l] = PositionType::Lms;
        }
    }
    Ok(types)
}

/// Phrase ranges of a sequence of length `len` cut at `breaks`.
pub fn split(len: usize, breaks: &[usize]) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(breaks.len() + 1);
    let mut start = 0;
    for &b in breaks {
        out.push(start..b);
        start = b;
    }
    out.push(start..len);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct transcription of the type rules with an explicit type array.
    fn reference_breaks(fps: &[u64]) -> Vec<usize> {
        let n = fps.len();
        let mut run = n - 1;
        while run > 0 && fps[run - 1] == fps[n - 1] {
            run -= 1;
        }
        // None = undefined, Some(true) = S, Some(false) = L
        let mut ty: Vec<Option<bool>> = vec![None; n];
        for l in (0..run).rev() {
            ty[l] = Some(if fps[l] < fps[l + 1] {
                true
            } else if fps[l] > fps[l + 1] {
                false
            } else {
                ty[l + 1].unwrap()
            });
        }
        (1..n)
            .filter(|&l| ty[l] == Some(true) && ty[l - 1] == Some(false))
            .collect()
    }

    #[test]
    fn constant_sequence_has_no_breaks() {
        assert!(classify(&[7, 7, 7, 7]).unwrap().is_empty());
        let types = position_types(&[7, 7, 7, 7]).unwrap();
        assert!(types.iter().all(|t| *t == PositionType::Undefined));
    }

    #[test]
    fn worked_example() {
        let fps = [2, 1, 2, 1, 1];
        // 1-based break {2}
        assert_eq!(classify(&fps).unwrap(), vec![1]);
        use PositionType::*;
        assert_eq!(
            position_types(&fps).unwrap(),
            vec![L, Lms, L, Undefined, Undefined]
        );
        assert_eq!(reference_breaks(&fps), vec![1]);
        assert_eq!(split(5, &[1]), vec![0..1, 1..5]);
    }

    #[test]
    fn single_symbol() {
        assert!(classify(&[5]).unwrap().is_empty());
        assert!(classify(&[]).is_err());
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split(5, &[]), vec![0..5]);
        assert_eq!(split(5, &[1, 3]), vec![0..1, 1..3, 3..5]);
    }

    proptest! {
        #[test]
        fn matches_reference(fps in prop::collection::vec(0u64..4, 1..200)) {
            prop_assert_eq!(classify(&fps).unwrap(), reference_breaks(&fps));
        }

        #[test]
        fn phrases_cover_sequence(fps in prop::collection::vec(0u64..6, 1..300)) {
            let breaks = classify(&fps).unwrap();
            let phrases = split(fps.len(), &breaks);
            prop_assert!(!phrases.is_empty());
            prop_assert_eq!(phrases.iter().map(|r| r.len()).sum::<usize>(), fps.len());
            // Interior and final phrases have length >= 2; only the first may be shorter.
            for r in phrases.iter().skip(1) {
                prop_assert!(r.len() >= 2);
            }
            // The last position is never a break.
            prop_assert!(breaks.last().is_none_or(|&b| b < fps.len() - 1));
        }

        #[test]
        fn types_agree_with_breaks(fps in prop::collection::vec(0u64..5, 1..100)) {
            let types = position_types(&fps).unwrap();
            let from_types: Vec<usize> = types
                .iter()
                .enumerate()
                .filter(|(_, t)| **t == PositionType::Lms)
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(from_types, classify(&fps).unwrap());
        }
    }
}
