//! Final-form grammars: run-length rules and single-use rule inlining.
//!
//! A [`PostGrammar`] drops the level structure. Symbols share one id space:
//! `1..=256` are terminals (`byte + 1`) and rule `j` (0-based) has id
//! `257 + j`. Rules only reference lower ids. Each string is a record whose
//! symbol sequence expands to it; right after conversion every record holds
//! one symbol, the string's root.

use std::collections::HashMap;

use crate::grammar::{Alphabet, Grammar};
use crate::hashing::{FingerprintWidth, TERMINAL_COUNT};
use crate::merger::level_offsets;

pub const FIRST_RULE_ID: u32 = TERMINAL_COUNT + 1;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PostRule {
    Seq(Vec<u32>),
    /// `base` repeated `len >= 2` times.
    Run {
        base: u32,
        len: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PostGrammar {
    seed: u64,
    width: FingerprintWidth,
    alphabet: Alphabet,
    rules: Vec<PostRule>,
    record_ends: Vec<usize>,
    record_symbols: Vec<u32>,
}

#[inline]
fn is_terminal(id: u32) -> bool {
    id < FIRST_RULE_ID
}

impl PostGrammar {
    /// Assembles a grammar without checks; see [`PostGrammar::validate`].
    pub fn from_parts(
        seed: u64,
        width: FingerprintWidth,
        alphabet: Alphabet,
        rules: Vec<PostRule>,
        records: Vec<Vec<u32>>,
    ) -> Self {
        let mut record_ends = Vec::with_capacity(records.len());
        let mut record_symbols = Vec::new();
        for r in records {
            record_symbols.extend(r);
            record_ends.push(record_symbols.len());
        }
        PostGrammar {
            seed,
            width,
            alphabet,
            rules,
            record_ends,
            record_symbols,
        }
    }

    /// Flattens the level tables into global ids, in level order.
    pub fn from_grammar(g: &Grammar) -> Self {
        let offsets = level_offsets(g);
        let global = |level: usize, rank: u32| (offsets[level] + rank as u64) as u32;
        let mut rules = Vec::with_capacity(g.rule_count());
        for (li, level) in g.levels().iter().enumerate() {
            for rhs in level.iter() {
                rules.push(PostRule::Seq(rhs.iter().map(|&s| global(li, s)).collect()));
            }
        }
        let record_symbols: Vec<u32> = g
            .compressed()
            .iter()
            .map(|s| global(s.level as usize, s.rank))
            .collect();
        PostGrammar {
            seed: g.seed(),
            width: g.family().width(),
            alphabet: *g.alphabet(),
            rules,
            record_ends: (1..=record_symbols.len()).collect(),
            record_symbols,
        }
        .reorder()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> FingerprintWidth {
        self.width
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn rules(&self) -> &[PostRule] {
        &self.rules
    }

    pub fn rule(&self, id: u32) -> &PostRule {
        &self.rules[(id - FIRST_RULE_ID) as usize]
    }

    pub fn record_count(&self) -> usize {
        self.record_ends.len()
    }

    pub fn record(&self, j: usize) -> &[u32] {
        let start = if j == 0 { 0 } else { self.record_ends[j - 1] };
        &self.record_symbols[start..self.record_ends[j]]
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        (0..self.record_count()).map(move |j| self.record(j))
    }

    /// Number of nonterminals, run rules included.
    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn run_rule_count(&self) -> usize {
        self.rules
            .iter()
            .filter(|r| matches!(r, PostRule::Run { .. }))
            .count()
    }

    /// Σ rhs lengths (records included) plus 2 per run rule.
    pub fn size(&self) -> usize {
        self.rules
            .iter()
            .map(|r| match r {
                PostRule::Seq(rhs) => rhs.len(),
                PostRule::Run { .. } => 2,
            })
            .sum::<usize>()
            + self.record_symbols.len()
    }

    /// Structural problems: forward or dangling references, bad runs, bytes
    /// outside the alphabet.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let check = |id: u32, limit: u32, what: &str, out: &mut Vec<String>| {
            if id == 0 || id >= limit {
                out.push(format!("{what}: symbol {id} out of range (< {limit})"));
            } else if is_terminal(id) && !self.alphabet.contains((id - 1) as u8) {
                out.push(format!("{what}: byte {:#04x} not in alphabet", id - 1));
            }
        };
        for (j, rule) in self.rules.iter().enumerate() {
            let id = FIRST_RULE_ID + j as u32;
            match rule {
                PostRule::Seq(rhs) => {
                    if rhs.is_empty() {
                        out.push(format!("rule {id}: empty rhs"));
                    }
                    for &s in rhs {
                        check(s, id, &format!("rule {id}"), &mut out);
                    }
                }
                PostRule::Run { base, len } => {
                    if *len < 2 {
                        out.push(format!("rule {id}: run length {len}"));
                    }
                    check(*base, id, &format!("rule {id}"), &mut out);
                }
            }
        }
        let limit = FIRST_RULE_ID + self.rules.len() as u32;
        for (j, rec) in self.records().enumerate() {
            if rec.is_empty() {
                out.push(format!("record {j}: empty"));
            }
            for &s in rec {
                check(s, limit, &format!("record {j}"), &mut out);
            }
        }
        out
    }

    /// Renumbers rules in depth-first post-order from the records, dropping
    /// unreachable ones.
    fn reorder(self) -> Self {
        const UNSEEN: u32 = 0;
        let n = self.rules.len();
        let mut new_id = vec![UNSEEN; n];
        let mut order: Vec<usize> = Vec::with_capacity(n);
        let mut stack: Vec<(u32, usize)> = Vec::new();
        let children = |rule: &PostRule, i: usize| -> Option<u32> {
            match rule {
                PostRule::Seq(rhs) => rhs.get(i).copied(),
                PostRule::Run { base, .. } => (i == 0).then_some(*base),
            }
        };
        for &root in &self.record_symbols {
            if is_terminal(root) || new_id[(root - FIRST_RULE_ID) as usize] != UNSEEN {
                continue;
            }
            stack.push((root, 0));
            // Mark on entry so shared children are visited once.
            new_id[(root - FIRST_RULE_ID) as usize] = u32::MAX;
            while let Some(&mut (id, ref mut next)) = stack.last_mut() {
                let idx = (id - FIRST_RULE_ID) as usize;
                match children(&self.rules[idx], *next) {
                    Some(child) => {
                        *next += 1;
                        if !is_terminal(child) && new_id[(child - FIRST_RULE_ID) as usize] == UNSEEN {
                            new_id[(child - FIRST_RULE_ID) as usize] = u32::MAX;
                            stack.push((child, 0));
                        }
                    }
                    None => {
                        new_id[idx] = FIRST_RULE_ID + order.len() as u32;
                        order.push(idx);
                        stack.pop();
                    }
                }
            }
        }
        let map = |s: u32| {
            if is_terminal(s) {
                s
            } else {
                new_id[(s - FIRST_RULE_ID) as usize]
            }
        };
        let mut old: Vec<Option<PostRule>> = self.rules.into_iter().map(Some).collect();
        let rules = order
            .iter()
            .map(|&idx| match old[idx].take().unwrap() {
                PostRule::Seq(rhs) => PostRule::Seq(rhs.into_iter().map(map).collect()),
                PostRule::Run { base, len } => PostRule::Run { base: map(base), len },
            })
            .collect();
        let record_symbols = self.record_symbols.iter().map(|&s| map(s)).collect();
        PostGrammar {
            rules,
            record_symbols,
            ..self
        }
    }

    /// Expansion of symbol `id`, appended to `out`.
    pub fn expand_into(&self, id: u32, out: &mut Vec<u8>) {
        let mut stack: Vec<(u32, u32)> = vec![(id, 1)];
        while let Some((s, times)) = stack.pop() {
            if times > 1 {
                stack.push((s, times - 1));
            }
            if is_terminal(s) {
                out.push((s - 1) as u8);
                continue;
            }
            match self.rule(s) {
                PostRule::Seq(rhs) => stack.extend(rhs.iter().rev().map(|&c| (c, 1))),
                PostRule::Run { base, len } => stack.push((*base, *len)),
            }
        }
    }

    /// Expansion of record `j`.
    pub fn expand(&self, j: usize) -> Vec<u8> {
        let mut out = Vec::new();
        for &s in self.record(j) {
            self.expand_into(s, &mut out);
        }
        out
    }

    fn sequences(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.rules
            .iter()
            .filter_map(|r| match r {
                PostRule::Seq(rhs) => Some(rhs.as_slice()),
                PostRule::Run { .. } => None,
            })
            .chain(self.records())
    }
}

/// Maximal equal-symbol runs of length >= 2 in `seq`, as `(start, len)`.
fn runs(seq: &[u32]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < seq.len() {
            let start = i;
            while i < seq.len() && seq[i] == seq[start] {
                i += 1;
            }
            if i - start >= 2 {
                return Some((start, i - start));
            }
        }
        None
    })
}

/// Replaces equal-symbol runs inside rule bodies and records by run rules.
///
/// Runs of length 2 are replaced only when their `(base, 2)` rule is used at
/// least twice, so the pass never grows the grammar.
pub fn run_length_compress(g: &Grammar) -> PostGrammar {
    run_length_compress_post(PostGrammar::from_grammar(g))
}

/// [`run_length_compress`] on an already flattened grammar.
pub fn run_length_compress_post(g: PostGrammar) -> PostGrammar {
    let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
    for (base, len) in g.rules.iter().filter_map(|r| match r {
        PostRule::Run { base, len } => Some((*base, *len)),
        PostRule::Seq(_) => None,
    }) {
        // Existing run rules make their length-2 twins free.
        counts.insert((base, len), usize::MAX / 2);
    }
    for seq in g.sequences() {
        for (start, len) in runs(seq) {
            *counts.entry((seq[start], len as u32)).or_default() += 1;
        }
    }
    let worth = |key: &(u32, u32)| key.1 >= 3 || counts.get(key).copied().unwrap_or(0) >= 2;

    let mut run_ids: HashMap<(u32, u32), u32> = HashMap::new();
    let mut rules = g.rules.clone();
    for (j, r) in g.rules.iter().enumerate() {
        if let PostRule::Run { base, len } = r {
            run_ids.insert((*base, *len), FIRST_RULE_ID + j as u32);
        }
    }
    let mut rewrite = |seq: &[u32], rules: &mut Vec<PostRule>| -> Vec<u32> {
        let mut out = Vec::with_capacity(seq.len());
        let mut last = 0;
        for (start, len) in runs(seq) {
            let key = (seq[start], len as u32);
            if !worth(&key) {
                continue;
            }
            out.extend_from_slice(&seq[last..start]);
            let id = *run_ids.entry(key).or_insert_with(|| {
                rules.push(PostRule::Run {
                    base: key.0,
                    len: key.1,
                });
                FIRST_RULE_ID + rules.len() as u32 - 1
            });
            out.push(id);
            last = start + len;
        }
        out.extend_from_slice(&seq[last..]);
        out
    };

    for j in 0..g.rules.len() {
        if let PostRule::Seq(rhs) = &g.rules[j] {
            let new = rewrite(rhs, &mut rules);
            rules[j] = PostRule::Seq(new);
        }
    }
    let mut record_ends = Vec::with_capacity(g.record_ends.len());
    let mut record_symbols = Vec::with_capacity(g.record_symbols.len());
    for rec in g.records() {
        record_symbols.extend(rewrite(rec, &mut rules));
        record_ends.push(record_symbols.len());
    }
    PostGrammar {
        rules,
        record_ends,
        record_symbols,
        ..g
    }
    .reorder()
}

/// Inlines every sequence rule used exactly once.
///
/// Inlining moves a rule's symbols into its single user, so no other count
/// changes and one pass reaches the fixpoint.
pub fn simplify(g: PostGrammar) -> PostGrammar {
    let n = g.rules.len();
    let mut uses = vec![0u32; n];
    let mut pinned = vec![false; n];
    let bump = |s: u32, uses: &mut Vec<u32>| {
        if !is_terminal(s) {
            let u = &mut uses[(s - FIRST_RULE_ID) as usize];
            *u = u.saturating_add(1);
        }
    };
    for r in &g.rules {
        match r {
            PostRule::Seq(rhs) => rhs.iter().for_each(|&s| bump(s, &mut uses)),
            PostRule::Run { base, .. } => {
                if !is_terminal(*base) {
                    pinned[(*base - FIRST_RULE_ID) as usize] = true;
                }
            }
        }
    }
    for &s in &g.record_symbols {
        bump(s, &mut uses);
    }
    let inline: Vec<bool> = (0..n)
        .map(|j| uses[j] == 1 && !pinned[j] && matches!(g.rules[j], PostRule::Seq(_)))
        .collect();

    let expand = |seq: &[u32], out: &mut Vec<u32>| {
        let mut stack: Vec<u32> = seq.iter().rev().copied().collect();
        while let Some(s) = stack.pop() {
            if !is_terminal(s) && inline[(s - FIRST_RULE_ID) as usize] {
                if let PostRule::Seq(rhs) = &g.rules[(s - FIRST_RULE_ID) as usize] {
                    stack.extend(rhs.iter().rev());
                }
            } else {
                out.push(s);
            }
        }
    };

    let mut rules = Vec::with_capacity(n);
    for (j, r) in g.rules.iter().enumerate() {
        match r {
            // Kept as placeholders; reorder drops them as unreachable.
            _ if inline[j] => rules.push(PostRule::Seq(Vec::new())),
            PostRule::Seq(rhs) => {
                let mut out = Vec::with_capacity(rhs.len());
                expand(rhs, &mut out);
                rules.push(PostRule::Seq(out));
            }
            PostRule::Run { .. } => rules.push(r.clone()),
        }
    }
    let mut record_ends = Vec::with_capacity(g.record_ends.len());
    let mut record_symbols = Vec::with_capacity(g.record_symbols.len());
    for rec in g.records() {
        expand(rec, &mut record_symbols);
        record_ends.push(record_symbols.len());
    }
    PostGrammar {
        rules,
        record_ends,
        record_symbols,
        ..g
    }
    .reorder()
}
