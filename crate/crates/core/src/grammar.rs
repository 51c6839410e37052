//! Level-partitioned straight-line grammars.
//!
//! Nonterminals are ranks local to their level: a level-`i` rule has a rank
//! in `[1, |V^i|]` and a right-hand side over level `i - 1` ranks. Level 0
//! holds the terminals, numbered `byte + 1`. The start rule is the sequence
//! `C` of `(level, rank)` roots, one per input string.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::hashing::{Fingerprint, HashFamily, TERMINAL_COUNT};

/// Rank of a symbol inside its level (1-based).
pub type Rank = u32;

/// A symbol qualified by its level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol {
    pub level: u32,
    pub rank: Rank,
}

impl Symbol {
    #[inline]
    pub fn new(level: u32, rank: Rank) -> Self {
        Symbol { level, rank }
    }

    #[inline]
    pub fn terminal(byte: u8) -> Self {
        Symbol {
            level: 0,
            rank: byte as Rank + 1,
        }
    }
}

/// Set of bytes occurring in the input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Alphabet([u64; 4]);

impl Alphabet {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut a = Alphabet::default();
        for &b in bytes {
            a.insert(b);
        }
        a
    }

    pub fn from_words(words: [u64; 4]) -> Self {
        Alphabet(words)
    }

    pub fn words(&self) -> [u64; 4] {
        self.0
    }

    #[inline]
    pub fn insert(&mut self, b: u8) {
        self.0[(b >> 6) as usize] |= 1 << (b & 63);
    }

    #[inline]
    pub fn contains(&self, b: u8) -> bool {
        self.0[(b >> 6) as usize] & (1 << (b & 63)) != 0
    }

    /// σ, the number of distinct bytes.
    pub fn len(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn union(&self, other: &Alphabet) -> Alphabet {
        let mut w = self.0;
        for (x, y) in w.iter_mut().zip(other.0) {
            *x |= y;
        }
        Alphabet(w)
    }

    /// Dense rank in `[1, σ]` of a present byte.
    pub fn dense_rank(&self, b: u8) -> Option<u32> {
        if !self.contains(b) {
            return None;
        }
        let word = (b >> 6) as usize;
        let below: u32 = self.0[..word].iter().map(|w| w.count_ones()).sum();
        let mask = (1u64 << (b & 63)) - 1;
        Some(below + (self.0[word] & mask).count_ones() + 1)
    }

    /// Inverse of [`Alphabet::dense_rank`].
    pub fn byte_of(&self, dense: u32) -> Option<u8> {
        self.bytes().nth(dense.checked_sub(1)? as usize)
    }

    pub fn bytes(&self) -> impl Iterator<Item = u8> + '_ {
        (0..=255u8).filter(|&b| self.contains(b))
    }
}

/// Rule table of one level: right-hand sides stored back to back, plus the
/// fingerprint of every rule.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Level {
    offsets: Vec<usize>,
    symbols: Vec<Rank>,
    fingerprints: Vec<Fingerprint>,
}

impl Level {
    pub fn new() -> Self {
        Level {
            offsets: vec![0],
            symbols: Vec::new(),
            fingerprints: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total rhs length, `G^i`.
    #[inline]
    pub fn rhs_total(&self) -> usize {
        self.symbols.len()
    }

    /// Right-hand side of the rule with 0-based index `idx`.
    #[inline]
    pub fn rhs_at(&self, idx: usize) -> &[Rank] {
        &self.symbols[self.offsets[idx]..self.offsets[idx + 1]]
    }

    /// Right-hand side of rank `rank` (1-based).
    #[inline]
    pub fn rhs(&self, rank: Rank) -> &[Rank] {
        self.rhs_at(rank as usize - 1)
    }

    #[inline]
    pub fn fingerprints(&self) -> &[Fingerprint] {
        &self.fingerprints
    }

    #[inline]
    pub fn fingerprint(&self, rank: Rank) -> Fingerprint {
        self.fingerprints[rank as usize - 1]
    }

    /// Appends a rule and returns its rank.
    pub fn push(&mut self, rhs: &[Rank], fingerprint: Fingerprint) -> Result<Rank> {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        let rank = self.len() + 1;
        if rank > u32::MAX as usize {
            return Err(Error::Capacity(format!(
                "more than {} rules in a level",
                u32::MAX
            )));
        }
        self.symbols.extend_from_slice(rhs);
        self.offsets.push(self.symbols.len());
        self.fingerprints.push(fingerprint);
        Ok(rank as Rank)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[Rank]> + '_ {
        (0..self.len()).map(move |i| self.rhs_at(i))
    }

    /// Makes room for `rules` more rules with `symbols` rhs symbols in total.
    pub(crate) fn reserve(&mut self, rules: usize, symbols: usize) {
        self.offsets.reserve(rules);
        self.symbols.reserve(symbols);
        self.fingerprints.reserve(rules);
    }

    pub(crate) fn fingerprints_mut(&mut self) -> &mut [Fingerprint] {
        &mut self.fingerprints
    }

    /// Rewrites every rhs symbol through `f`.
    pub(crate) fn map_symbols(&mut self, mut f: impl FnMut(Rank) -> Rank) {
        for s in &mut self.symbols {
            *s = f(*s);
        }
    }

    pub(crate) fn heap_bytes(&self) -> usize {
        self.offsets.len() * std::mem::size_of::<usize>()
            + self.symbols.len() * std::mem::size_of::<Rank>()
            + self.fingerprints.len() * std::mem::size_of::<Fingerprint>()
    }
}

/// A structural problem found by [`Grammar::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// An rhs symbol is not a rank of the level below.
    LevelViolation {
        level: u32,
        rank: Rank,
        symbol: Rank,
    },
    EmptyRhs {
        level: u32,
        rank: Rank,
    },
    DuplicateRhs {
        level: u32,
        rank: Rank,
        first: Rank,
    },
    FingerprintMismatch {
        level: u32,
        rank: Rank,
    },
    /// A level-1 rule uses a byte missing from the alphabet.
    AlphabetViolation {
        rank: Rank,
        byte: u8,
    },
    DanglingRoot {
        index: usize,
        symbol: Symbol,
    },
    /// An rhs or `C` entry refers to a level with no rules.
    EmptyLevel {
        level: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LevelViolation { level, rank, symbol } => write!(
                f,
                "level-violation: rule {rank} of level {level} cites {symbol}, not a level-{} rank",
                level - 1
            ),
            Violation::EmptyRhs { level, rank } => write!(f, "empty-rhs: rule {rank} of level {level}"),
            Violation::DuplicateRhs { level, rank, first } => {
                write!(f, "duplicate-rhs: rules {first} and {rank} of level {level}")
            }
            Violation::FingerprintMismatch { level, rank } => {
                write!(f, "fingerprint-mismatch: rule {rank} of level {level}")
            }
            Violation::AlphabetViolation { rank, byte } => {
                write!(f, "alphabet-violation: level-1 rule {rank} uses byte {byte:#04x}")
            }
            Violation::DanglingRoot { index, symbol } => write!(
                f,
                "dangling-root: C[{index}] = ({}, {})",
                symbol.level, symbol.rank
            ),
            Violation::EmptyLevel { level } => write!(f, "empty-level: level {level}"),
        }
    }
}

/// Level-partitioned, fully balanced straight-line grammar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    family: HashFamily,
    alphabet: Alphabet,
    /// `levels[i - 1]` is the rule table of level `i`.
    levels: Vec<Level>,
    compressed: Vec<Symbol>,
}

impl Grammar {
    /// A grammar generating the empty collection.
    pub fn empty(family: HashFamily) -> Self {
        Grammar {
            family,
            alphabet: Alphabet::default(),
            levels: Vec::new(),
            compressed: Vec::new(),
        }
    }

    /// Assembles a grammar without checking it; see [`Grammar::validate`].
    pub fn from_parts(
        family: HashFamily,
        alphabet: Alphabet,
        levels: Vec<Level>,
        compressed: Vec<Symbol>,
    ) -> Self {
        Grammar {
            family,
            alphabet,
            levels,
            compressed,
        }
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn seed(&self) -> u64 {
        self.family.seed()
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Rule tables, level 1 first.
    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Rule table of level `i >= 1`, if the grammar has one.
    pub fn level(&self, i: u32) -> Option<&Level> {
        i.checked_sub(1).and_then(|j| self.levels.get(j as usize))
    }

    /// The start rule's right-hand side `C[1..k]`.
    pub fn compressed(&self) -> &[Symbol] {
        &self.compressed
    }

    /// Number of strings, `k`.
    pub fn string_count(&self) -> usize {
        self.compressed.len()
    }

    /// Height `l`: one above the highest level in `C`.
    pub fn height(&self) -> u32 {
        self.compressed.iter().map(|s| s.level + 1).max().unwrap_or(0)
    }

    /// Number of symbols at `level` (terminals count 256 values).
    pub fn level_size(&self, level: u32) -> usize {
        if level == 0 {
            TERMINAL_COUNT as usize
        } else {
            self.level(level).map_or(0, Level::len)
        }
    }

    /// Number of nonterminals `|V|` (excluding the start symbol).
    pub fn rule_count(&self) -> usize {
        self.levels.iter().map(Level::len).sum()
    }

    /// Total rhs length `G`, counting `C` as the start rule's rhs.
    pub fn size(&self) -> usize {
        self.levels.iter().map(Level::rhs_total).sum::<usize>() + self.compressed.len()
    }

    /// `E^i`: positions of `C` holding level-`i` symbols.
    pub fn level_index(&self, level: u32) -> Vec<usize> {
        self.compressed
            .iter()
            .enumerate()
            .filter(|(_, s)| s.level == level)
            .map(|(j, _)| j)
            .collect()
    }

    /// Fingerprint array `F^i` (terminals for `i = 0`).
    pub fn fingerprints(&self, level: u32) -> &[Fingerprint] {
        if level == 0 {
            self.family.terminal_fingerprints()
        } else {
            self.level(level).map_or(&[], Level::fingerprints)
        }
    }

    pub fn fingerprint_of(&self, sym: Symbol) -> Fingerprint {
        self.fingerprints(sym.level)[sym.rank as usize - 1]
    }

    pub(crate) fn into_parts(self) -> (HashFamily, Alphabet, Vec<Level>, Vec<Symbol>) {
        (self.family, self.alphabet, self.levels, self.compressed)
    }

    pub(crate) fn levels_mut(&mut self) -> &mut Vec<Level> {
        &mut self.levels
    }

    pub(crate) fn compressed_mut(&mut self) -> &mut Vec<Symbol> {
        &mut self.compressed
    }

    pub(crate) fn alphabet_mut(&mut self) -> &mut Alphabet {
        &mut self.alphabet
    }

    /// Recomputes every `F^i` bottom-up from the hash family.
    pub fn recompute_fingerprints(&mut self) {
        let mut prev: Vec<Fingerprint> = self.family.terminal_fingerprints().to_vec();
        for (i, level) in self.levels.iter_mut().enumerate() {
            let h = self.family.level(i + 1);
            let fresh: Vec<Fingerprint> = (0..level.len())
                .map(|r| {
                    h.sequence(
                        level
                            .rhs_at(r)
                            .iter()
                            .map(|&s| prev.get(s as usize - 1).copied().unwrap_or_default()),
                    )
                })
                .collect();
            level.fingerprints = fresh;
            prev = level.fingerprints.clone();
        }
    }

    /// Checks levels, ranks, alphabet and `C`; skips fingerprints.
    fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            let lvl = i as u32 + 1;
            let below = self.level_size(lvl - 1) as Rank;
            for (r, rhs) in level.iter().enumerate() {
                let rank = r as Rank + 1;
                if rhs.is_empty() {
                    out.push(Violation::EmptyRhs { level: lvl, rank });
                }
                for &s in rhs {
                    if s == 0 || s > below {
                        out.push(Violation::LevelViolation {
                            level: lvl,
                            rank,
                            symbol: s,
                        });
                    } else if lvl == 1 && !self.alphabet.contains((s - 1) as u8) {
                        out.push(Violation::AlphabetViolation {
                            rank,
                            byte: (s - 1) as u8,
                        });
                    }
                }
            }
        }
        for (index, &symbol) in self.compressed.iter().enumerate() {
            let size = self.level_size(symbol.level) as Rank;
            let in_alphabet = symbol.level != 0
                || (symbol.rank >= 1
                    && symbol.rank <= TERMINAL_COUNT
                    && self.alphabet.contains((symbol.rank - 1) as u8));
            if symbol.rank == 0 || symbol.rank > size || !in_alphabet {
                if size == 0 {
                    out.push(Violation::EmptyLevel { level: symbol.level });
                }
                out.push(Violation::DanglingRoot { index, symbol });
            }
        }
        out
    }

    /// Lists every invariant violation; empty iff the grammar is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.structural_violations();
        if !out.is_empty() {
            return out;
        }
        let mut prev = self.family.terminal_fingerprints();
        for (i, level) in self.levels.iter().enumerate() {
            let lvl = i as u32 + 1;
            let h = self.family.level(lvl as usize);
            let mut seen: hashbrown::HashMap<&[Rank], Rank> = hashbrown::HashMap::with_capacity(level.len());
            for (r, rhs) in level.iter().enumerate() {
                let rank = r as Rank + 1;
                if let Some(&first) = seen.get(rhs) {
                    out.push(Violation::DuplicateRhs {
                        level: lvl,
                        rank,
                        first,
                    });
                } else {
                    seen.insert(rhs, rank);
                }
                let want = h.sequence(rhs.iter().map(|&s| prev[s as usize - 1]));
                if level.fingerprints.get(r) != Some(&want) {
                    out.push(Violation::FingerprintMismatch { level: lvl, rank });
                }
            }
            prev = &level.fingerprints;
        }
        out
    }

    pub(crate) fn check_structure(&self) -> Result<()> {
        let v = self.structural_violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Structure(v))
        }
    }

    /// Renumbers every level so ranks follow the lexicographic order of the
    /// (already renumbered) right-hand sides.
    pub fn canonicalize(&self) -> Result<Grammar> {
        self.check_structure()?;
        let mut levels = Vec::with_capacity(self.levels.len());
        let mut perms: Vec<Vec<Rank>> = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            let mut rewritten = level.clone();
            if let Some(prev) = perms.last() {
                rewritten.map_symbols(|s| prev[s as usize - 1]);
            }
            let mut order: Vec<usize> = (0..rewritten.len()).collect();
            order.sort_unstable_by(|&x, &y| cmp_rhs(rewritten.rhs_at(x), rewritten.rhs_at(y)));
            let mut perm = vec![0 as Rank; rewritten.len()];
            let mut sorted = Level::new();
            for (new, &old) in order.iter().enumerate() {
                perm[old] = new as Rank + 1;
                sorted.push(rewritten.rhs_at(old), rewritten.fingerprints[old])?;
            }
            levels.push(sorted);
            perms.push(perm);
        }
        let compressed = self
            .compressed
            .iter()
            .map(|&s| match s.level {
                0 => s,
                l => Symbol::new(l, perms[l as usize - 1][s.rank as usize - 1]),
            })
            .collect();
        Ok(Grammar {
            family: self.family.clone(),
            alphabet: self.alphabet,
            levels,
            compressed,
        })
    }

    /// Expansion of one symbol, appended to `out` as raw bytes.
    pub fn expand_into(&self, sym: Symbol, out: &mut Vec<u8>) {
        let mut stack = vec![sym];
        while let Some(s) = stack.pop() {
            if s.level == 0 {
                out.push((s.rank - 1) as u8);
            } else {
                let rhs = self.levels[s.level as usize - 1].rhs(s.rank);
                stack.extend(rhs.iter().rev().map(|&r| Symbol::new(s.level - 1, r)));
            }
        }
    }

    /// `exp(C[j])`.
    pub fn expand(&self, j: usize) -> Vec<u8> {
        let mut out = Vec::new();
        self.expand_into(self.compressed[j], &mut out);
        out
    }
}

#[inline]
fn cmp_rhs(a: &[Rank], b: &[Rank]) -> Ordering {
    a.cmp(b)
}

/// True iff both grammars canonicalize to identical rule tables and `C`.
pub fn grammars_equivalent(a: &Grammar, b: &Grammar) -> Result<bool> {
    let ca = a.canonicalize()?;
    let cb = b.canonicalize()?;
    Ok(ca.levels.len() == cb.levels.len()
        && ca
            .levels
            .iter()
            .zip(&cb.levels)
            .all(|(x, y)| x.offsets == y.offsets && x.symbols == y.symbols)
        && ca.compressed == cb.compressed)
}

/// Ordered collection of non-empty byte strings, stored back to back.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Collection {
    data: Vec<u8>,
    ends: Vec<usize>,
}

impl Collection {
    pub fn new<I, S>(strings: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut c = Collection::default();
        for s in strings {
            c.push(s.as_ref())?;
        }
        if c.is_empty() {
            return Err(Error::Ingestion("empty collection".into()));
        }
        Ok(c)
    }

    /// Appends one string; empty strings are rejected.
    pub fn push(&mut self, s: &[u8]) -> Result<()> {
        if s.is_empty() {
            return Err(Error::Ingestion(format!(
                "string {} is empty",
                self.ends.len() + 1
            )));
        }
        self.data.extend_from_slice(s);
        self.ends.push(self.data.len());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    /// Total length `n`.
    pub fn total_len(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, j: usize) -> &[u8] {
        let start = if j == 0 { 0 } else { self.ends[j - 1] };
        &self.data[start..self.ends[j]]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        (0..self.len()).map(move |j| self.get(j))
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet::from_bytes(&self.data)
    }

    /// `self ∘ other`.
    pub fn concat(&self, other: &Collection) -> Collection {
        let mut c = self.clone();
        for s in other.iter() {
            c.data.extend_from_slice(s);
            c.ends.push(c.data.len());
        }
        c
    }

    /// Strings `range` as a new collection.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Collection {
        let mut c = Collection::default();
        for j in range {
            c.data.extend_from_slice(self.get(j));
            c.ends.push(c.data.len());
        }
        c
    }

    pub fn clear(&mut self) {
        self.data.clear();
        self.ends.clear();
    }
}
