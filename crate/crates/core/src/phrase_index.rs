//! Open-addressing lookup from right-hand side to rank.
//!
//! The table stores only 32-bit rule indices; keys live in the level's rule
//! storage and are compared in place.

use std::hash::BuildHasher;

use foldhash::fast::FixedState;
use hashbrown::HashTable;

use crate::grammar::{Level, Rank};

const HASH_SEED: u64 = 0x1c9_7a3e_55d0_42b1;

#[inline]
pub(crate) fn hash_rhs(rhs: &[Rank]) -> u64 {
    FixedState::with_seed(HASH_SEED).hash_one(rhs)
}

#[derive(Clone, Debug, Default)]
pub(crate) struct PhraseIndex {
    table: HashTable<u32>,
}

impl PhraseIndex {
    pub(crate) fn build(level: &Level) -> Self {
        let mut index = PhraseIndex {
            table: HashTable::with_capacity(level.len()),
        };
        for idx in 0..level.len() {
            index.insert(level, idx, hash_rhs(level.rhs_at(idx)));
        }
        index
    }

    #[inline]
    pub(crate) fn find(&self, level: &Level, rhs: &[Rank], hash: u64) -> Option<Rank> {
        self.table
            .find(hash, |&idx| level.rhs_at(idx as usize) == rhs)
            .map(|&idx| idx + 1)
    }

    pub(crate) fn reserve(&mut self, level: &Level, additional: usize) {
        self.table
            .reserve(additional, |&i| hash_rhs(level.rhs_at(i as usize)));
    }

    /// Registers rule `idx` (0-based), which must already be in `level`.
    #[inline]
    pub(crate) fn insert(&mut self, level: &Level, idx: usize, hash: u64) {
        self.table
            .insert_unique(hash, idx as u32, |&i| hash_rhs(level.rhs_at(i as usize)));
    }
}
