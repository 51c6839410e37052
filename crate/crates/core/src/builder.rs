//! Multi-round grammar construction.
//!
//! Each round parses every active string independently, gives each distinct
//! phrase a rank at the next level (first-occurrence order over strings in
//! collection order), and replaces phrases by ranks. A string leaves the
//! active set once it shrinks to one symbol, which becomes its `C` entry.
//!
//! The buffered variant consults a read-only sink grammar before its own
//! tables. Its ranks at level `i` are offset by the sink's level-`i` rule
//! count at the time the buffer was created, so ranks at or below the offset
//! name sink rules and ranks above it name the buffer's own rules.

use crate::error::{Error, Result};
use crate::grammar::{Collection, Grammar, Level, Rank, Symbol};
use crate::hashing::{Fingerprint, HashFamily};
use crate::parser::classify_into;
use crate::phrase_index::{hash_rhs, PhraseIndex};

/// A grammar together with a phrase index for every level.
#[derive(Clone, Debug)]
pub struct IndexedGrammar {
    grammar: Grammar,
    index: Vec<PhraseIndex>,
}

impl IndexedGrammar {
    pub fn new(grammar: Grammar) -> Self {
        let index = grammar.levels().iter().map(PhraseIndex::build).collect();
        IndexedGrammar { grammar, index }
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn into_grammar(self) -> Grammar {
        self.grammar
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Grammar, &mut Vec<PhraseIndex>) {
        (&mut self.grammar, &mut self.index)
    }
}

/// Grammar under construction, possibly layered over a sink.
#[derive(Clone, Debug)]
pub struct BufferGrammar {
    /// `base[i - 1]`: sink rule count at level `i` when the buffer was made.
    base: Vec<Rank>,
    grammar: Grammar,
    index: Vec<PhraseIndex>,
}

impl BufferGrammar {
    /// A standalone buffer with no sink underneath.
    pub fn standalone(family: HashFamily) -> Self {
        BufferGrammar {
            base: Vec::new(),
            grammar: Grammar::empty(family),
            index: Vec::new(),
        }
    }

    /// An empty buffer whose ranks sit above `sink`'s current counts.
    pub fn over(sink: &IndexedGrammar) -> Self {
        BufferGrammar {
            base: sink.grammar.levels().iter().map(|l| l.len() as Rank).collect(),
            grammar: Grammar::empty(sink.grammar.family().clone()),
            index: Vec::new(),
        }
    }

    pub fn family(&self) -> &HashFamily {
        self.grammar.family()
    }

    /// Sink offset of level `level >= 1` (0 past the sink's height).
    #[inline]
    pub fn base(&self, level: u32) -> Rank {
        level
            .checked_sub(1)
            .and_then(|i| self.base.get(i as usize).copied())
            .unwrap_or(0)
    }

    pub fn bases(&self) -> &[Rank] {
        &self.base
    }

    /// Own rules and `C`, in the offset rank space.
    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn is_standalone(&self) -> bool {
        self.base.iter().all(|&b| b == 0)
    }

    /// Drops the phrase index; fails if ranks still refer to a sink.
    pub fn into_grammar(self) -> Result<Grammar> {
        if !self.is_standalone() {
            return Err(Error::Incompatible(
                "buffer grammar still refers to sink rules".into(),
            ));
        }
        Ok(self.grammar)
    }

    pub(crate) fn from_parts(base: Vec<Rank>, grammar: Grammar) -> Self {
        let index = grammar.levels().iter().map(PhraseIndex::build).collect();
        BufferGrammar { base, grammar, index }
    }

    pub(crate) fn into_parts(self) -> (Vec<Rank>, Grammar) {
        (self.base, self.grammar)
    }

    /// Own rule count per level.
    pub fn own_counts(&self) -> Vec<usize> {
        self.grammar.levels().iter().map(Level::len).collect()
    }
}

/// Builds the grammar of `input` from scratch.
pub fn build_gram(input: &Collection, family: &HashFamily) -> Result<Grammar> {
    let mut buffer = BufferGrammar::standalone(family.clone());
    compress(input, &mut buffer, None)?;
    buffer.into_grammar()
}

/// Compresses `input` into `own`, reusing any phrase `sink` already has.
///
/// The new strings are appended to `own`'s `C` in input order.
pub fn build_gram_buffered(input: &Collection, own: &mut BufferGrammar, sink: &IndexedGrammar) -> Result<()> {
    if own.grammar.seed() != sink.grammar.seed() || own.family() != sink.grammar.family() {
        return Err(Error::SeedMismatch(own.grammar.seed(), sink.grammar.seed()));
    }
    for (lvl, level) in sink.grammar.levels().iter().enumerate() {
        if own.base(lvl as u32 + 1) as usize != level.len() {
            return Err(Error::Incompatible(format!(
                "sink level {} changed since the buffer was created",
                lvl + 1
            )));
        }
    }
    compress(input, own, Some(sink))
}

/// Where the fingerprints of one level's symbols live.
struct FingerprintSource<'a> {
    terminal: Option<&'a [Fingerprint]>,
    sink: &'a [Fingerprint],
    own: &'a [Fingerprint],
    base: Rank,
}

impl FingerprintSource<'_> {
    #[inline]
    fn get(&self, rank: Rank) -> Fingerprint {
        if let Some(t) = self.terminal {
            t[rank as usize - 1]
        } else if rank <= self.base {
            self.sink[rank as usize - 1]
        } else {
            self.own[(rank - self.base) as usize - 1]
        }
    }
}

fn compress(input: &Collection, own: &mut BufferGrammar, sink: Option<&IndexedGrammar>) -> Result<()> {
    let family = own.grammar.family().clone();
    *own.grammar.alphabet_mut() = own.grammar.alphabet().union(&input.alphabet());

    let mut roots: Vec<Option<Symbol>> = vec![None; input.len()];
    let mut seq: Vec<Rank> = Vec::with_capacity(input.total_len());
    let mut ends: Vec<usize> = Vec::new();
    let mut ids: Vec<usize> = Vec::new();
    for (j, s) in input.iter().enumerate() {
        if s.len() == 1 {
            roots[j] = Some(Symbol::terminal(s[0]));
        } else {
            seq.extend(s.iter().map(|&b| b as Rank + 1));
            ends.push(seq.len());
            ids.push(j);
        }
    }

    let mut next_seq: Vec<Rank> = Vec::with_capacity(seq.len() / 2);
    let mut next_ends = Vec::new();
    let mut next_ids = Vec::new();
    let mut fps: Vec<Fingerprint> = Vec::new();
    let mut breaks: Vec<usize> = Vec::new();
    let mut level: u32 = 1;

    while !ids.is_empty() {
        let li = level as usize - 1;
        let levels = own.grammar.levels_mut();
        while levels.len() <= li {
            levels.push(Level::new());
        }
        while own.index.len() <= li {
            own.index.push(PhraseIndex::default());
        }
        let (lower, upper) = levels.split_at_mut(li);
        let target = &mut upper[0];
        let target_index = &mut own.index[li];
        let base = own.base.get(li).copied().unwrap_or(0);
        let sink_level = sink.and_then(|s| s.grammar.levels().get(li).map(|l| (l, &s.index[li])));
        let source = FingerprintSource {
            terminal: (level == 1).then(|| family.terminal_fingerprints()),
            sink: match (level, sink) {
                (1, _) | (_, None) => &[],
                (_, Some(s)) => s.grammar.fingerprints(level - 1),
            },
            own: lower.last().map_or(&[][..], |l| l.fingerprints()),
            base: if level == 1 {
                0
            } else {
                own.base.get(li - 1).copied().unwrap_or(0)
            },
        };
        let h = family.level(level as usize);

        let mut start = 0;
        for (t, &end) in ends.iter().enumerate() {
            let string = &seq[start..end];
            fps.clear();
            fps.extend(string.iter().map(|&r| source.get(r)));
            breaks.clear();
            classify_into(&fps, &mut breaks);

            let produced = next_seq.len();
            let mut phrase_start = 0;
            for cut in breaks.iter().copied().chain(std::iter::once(string.len())) {
                let rhs = &string[phrase_start..cut];
                let hash = hash_rhs(rhs);
                let found = sink_level
                    .and_then(|(l, idx)| idx.find(l, rhs, hash))
                    .or_else(|| target_index.find(target, rhs, hash).map(|r| r + base));
                let rank = match found {
                    Some(r) => r,
                    None => {
                        let fp = h.sequence(fps[phrase_start..cut].iter().copied());
                        let own_rank = target.push(rhs, fp)?;
                        target_index.insert(target, own_rank as usize - 1, hash);
                        base.checked_add(own_rank)
                            .ok_or_else(|| Error::Capacity(format!("level {level} exceeds 2^32 - 1 ranks")))?
                    }
                };
                next_seq.push(rank);
                phrase_start = cut;
            }

            if next_seq.len() - produced == 1 {
                roots[ids[t]] = Some(Symbol::new(level, next_seq.pop().unwrap()));
            } else {
                next_ends.push(next_seq.len());
                next_ids.push(ids[t]);
            }
            start = end;
        }

        std::mem::swap(&mut seq, &mut next_seq);
        std::mem::swap(&mut ends, &mut next_ends);
        std::mem::swap(&mut ids, &mut next_ids);
        next_seq.clear();
        next_ends.clear();
        next_ids.clear();
        level += 1;
    }

    let compressed = own.grammar.compressed_mut();
    compressed.extend(roots.into_iter().map(|r| r.expect("every string deactivates")));
    Ok(())
}

/// Break positions of every round for one string, for stability checks.
///
/// Round `i` entries are 0-based positions in the level-`(i-1)` sequence.
pub fn parse_trace(grammar: &Grammar, root: Symbol) -> Vec<Vec<usize>> {
    let mut rounds = Vec::new();
    let mut seq = vec![root.rank];
    for level in (1..=root.level).rev() {
        let table = &grammar.levels()[level as usize - 1];
        let mut below = Vec::new();
        let mut cuts = Vec::new();
        for (j, &r) in seq.iter().enumerate() {
            if j > 0 {
                cuts.push(below.len());
            }
            below.extend_from_slice(table.rhs(r));
        }
        rounds.push(cuts);
        seq = below;
    }
    rounds.reverse();
    rounds
}
