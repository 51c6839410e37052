//! Level-by-level grammar merging.
//!
//! Merging absorbs `b` into `a`. At level `i`, every `b` rule whose rhs
//! (already translated into `a`'s level-`(i-1)` ranks) exists in `a` maps to
//! that rule; the rest are appended to `a`'s level `i`. The map then rewrites
//! `b`'s level-`(i+1)` right-hand sides and the level-`i` entries of `C_b`,
//! so the next level is again comparable. Ranks are stored per level, which
//! makes the global-offset bookkeeping of a flat encoding unnecessary.

use crate::builder::{BufferGrammar, IndexedGrammar};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, Level, Rank};
use crate::hashing::TERMINAL_COUNT;
use crate::phrase_index::{hash_rhs, PhraseIndex};

/// `L[i]`: number of symbols with level below `i`; `L[1]` counts the 256
/// terminal values.
pub fn level_offsets(g: &Grammar) -> Vec<u64> {
    let mut out = Vec::with_capacity(g.levels().len() + 2);
    out.push(0);
    out.push(TERMINAL_COUNT as u64);
    for level in g.levels() {
        out.push(out.last().unwrap() + level.len() as u64);
    }
    out
}

fn check_compatible(a: &Grammar, b: &Grammar) -> Result<()> {
    if a.seed() != b.seed() {
        return Err(Error::SeedMismatch(a.seed(), b.seed()));
    }
    if a.family().width() != b.family().width() {
        return Err(Error::Incompatible("fingerprint widths differ".into()));
    }
    Ok(())
}

#[inline]
fn base_at(base: &[Rank], level: u32) -> Rank {
    level
        .checked_sub(1)
        .and_then(|i| base.get(i as usize).copied())
        .unwrap_or(0)
}

/// Absorbs `b` into `a`.
///
/// Ranks at level `i` up to `b_base[i-1]` are shared: they mean the same rule
/// in both grammars and pass through unchanged. `a`'s own rules at level `i`
/// sit above `a_base[i-1]`. `a_index` is kept in step with `a`'s tables.
fn merge_into(
    a: &mut Grammar,
    a_index: &mut Vec<PhraseIndex>,
    a_base: &[Rank],
    b: Grammar,
    b_base: &[Rank],
) -> Result<()> {
    check_compatible(a, &b)?;
    *a.alphabet_mut() = a.alphabet().union(b.alphabet());

    let (_, _, mut b_levels, mut c_b) = b.into_parts();

    // E^i for C_b.
    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); b_levels.len() + 1];
    for (j, s) in c_b.iter().enumerate() {
        if s.level > 0 {
            by_level[s.level as usize].push(j);
        }
    }

    for li in 0..b_levels.len() {
        let level = li as u32 + 1;
        while a.levels().len() <= li {
            a.levels_mut().push(Level::new());
        }
        while a_index.len() <= li {
            let idx = PhraseIndex::build(&a.levels()[a_index.len()]);
            a_index.push(idx);
        }
        let ab = base_at(a_base, level);
        let bb = base_at(b_base, level);
        let target = &mut a.levels_mut()[li];
        let index = &mut a_index[li];
        let source = std::mem::take(&mut b_levels[li]);
        target.reserve(source.len(), source.rhs_total());
        index.reserve(target, source.len());

        let mut map: Vec<Rank> = Vec::with_capacity(source.len());
        for (r, rhs) in source.iter().enumerate() {
            let hash = hash_rhs(rhs);
            let rank = match index.find(target, rhs, hash) {
                Some(own) => own + ab,
                None => {
                    let own = target.push(rhs, source.fingerprints()[r])?;
                    index.insert(target, own as usize - 1, hash);
                    own.checked_add(ab)
                        .ok_or_else(|| Error::Capacity(format!("level {level} exceeds 2^32 - 1 ranks")))?
                }
            };
            map.push(rank);
        }

        let translate = |s: Rank| if s <= bb { s } else { map[(s - bb) as usize - 1] };
        if let Some(next) = b_levels.get_mut(li + 1) {
            next.map_symbols(translate);
            debug_assert!(
                next.iter()
                    .flatten()
                    .all(|&s| s >= 1 && (s as usize) <= target.len() + ab as usize),
                "level {} of b is not comparable with a",
                level + 1
            );
        }
        for &j in &by_level[level as usize] {
            c_b[j].rank = translate(c_b[j].rank);
        }
    }

    a.compressed_mut().extend(c_b);
    Ok(())
}

/// Merges `b` into `a`; the result generates `a`'s strings then `b`'s.
pub fn merge_grams(a: Grammar, b: Grammar) -> Result<Grammar> {
    check_compatible(&a, &b)?;
    a.check_structure()?;
    b.check_structure()?;
    let mut a = a;
    let mut index = Vec::new();
    merge_into(&mut a, &mut index, &[], b, &[])?;
    Ok(a)
}

/// Merges two buffers layered over the same sink state.
pub fn merge_buffers(a: BufferGrammar, b: BufferGrammar) -> Result<BufferGrammar> {
    if trimmed(a.bases()) != trimmed(b.bases()) {
        return Err(Error::Incompatible(
            "buffers were created over different sinks".into(),
        ));
    }
    let base = a.bases().to_vec();
    let (_, b_grammar) = b.into_parts();
    let (_, mut grammar) = a.into_parts();
    let mut index = Vec::new();
    merge_into(&mut grammar, &mut index, &base, b_grammar, &base)?;
    Ok(BufferGrammar::from_parts(base, grammar))
}

/// Moves a buffer's rules and strings into the sink it was built over.
pub fn absorb(sink: &mut IndexedGrammar, buffer: BufferGrammar) -> Result<()> {
    let counts: Vec<Rank> = sink.grammar().levels().iter().map(|l| l.len() as Rank).collect();
    if trimmed(&counts) != trimmed(buffer.bases()) {
        return Err(Error::Incompatible(
            "sink changed since the buffer was created".into(),
        ));
    }
    let (base, grammar) = buffer.into_parts();
    let (g, index) = sink.parts_mut();
    merge_into(g, index, &[], grammar, &base)
}

fn trimmed(base: &[Rank]) -> &[Rank] {
    let end = base.iter().rposition(|&b| b != 0).map_or(0, |p| p + 1);
    &base[..end]
}
