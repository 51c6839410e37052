//! Seeded per-level fingerprint family.
//!
//! Level 0 hashes terminals with a universal function; every level `i >= 1`
//! hashes a right-hand side as a polynomial over the fingerprints of its
//! symbols, composed with an outer universal function:
//!
//! ```text
//! h^i(Q[1..q]) = ((a_i * (sum_j F[Q[j]] * c_i^(j-1)) + b_i) mod p) mod m
//! ```
//!
//! All arithmetic is modulo the Mersenne prime `p = 2^61 - 1`. Parameters
//! are expanded from a single master seed in counter mode, so two processes
//! holding the same seed agree on every level without coordination.

use crate::error::{Error, Result};

/// The Mersenne prime `2^61 - 1`.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// Number of distinct terminal values. Terminals are bytes shifted by one.
pub const TERMINAL_COUNT: u32 = 256;

/// Fingerprint value in `[0, m)`.
pub type Fingerprint = u64;

/// Output range of every level function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FingerprintWidth {
    /// `m = p = 2^61 - 1`.
    #[default]
    Bits61,
    /// `m = 2^32`; halves fingerprint memory at a higher collision rate.
    Bits32,
}

impl FingerprintWidth {
    #[inline]
    pub fn modulus(self) -> u64 {
        match self {
            FingerprintWidth::Bits61 => MERSENNE_61,
            FingerprintWidth::Bits32 => 1 << 32,
        }
    }
}

#[inline]
fn reduce(x: u128) -> u64 {
    // x < 2^122, so lo and hi are both at most p and s <= 2p.
    let lo = (x as u64) & MERSENNE_61;
    let hi = (x >> 61) as u64;
    let mut s = lo + hi;
    while s >= MERSENNE_61 {
        s -= MERSENNE_61;
    }
    s
}

/// `(x * y) mod p` for `x, y < 2^64`.
#[inline]
pub fn mul_mod(x: u64, y: u64) -> u64 {
    let x = x % MERSENNE_61;
    let y = y % MERSENNE_61;
    reduce(x as u128 * y as u128)
}

/// `(x + y) mod p` for `x, y < p`.
#[inline]
pub fn add_mod(x: u64, y: u64) -> u64 {
    let s = x + y;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters of one level function `h^i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LevelHash {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub modulus: u64,
}

impl LevelHash {
    /// Counter-mode expansion: word `3*level + j` of the seed's stream.
    fn derive(seed: u64, level: usize, width: FingerprintWidth) -> Self {
        let word = |j: u64| {
            let counter = (level as u64).wrapping_mul(3).wrapping_add(j);
            let z = splitmix64(seed ^ splitmix64(counter.wrapping_add(0x6C63_6772_616D)));
            z % (MERSENNE_61 - 1) + 1
        };
        LevelHash {
            a: word(0),
            b: word(1),
            c: word(2),
            modulus: width.modulus(),
        }
    }

    /// Outer universal step; `poly` must already be reduced mod p.
    #[inline]
    pub fn finish(&self, poly: u64) -> Fingerprint {
        add_mod(reduce(self.a as u128 * poly as u128), self.b) % self.modulus
    }

    /// `h^0(s)` for a terminal value.
    #[inline]
    pub fn terminal(&self, s: u32) -> Fingerprint {
        self.finish(s as u64)
    }

    /// Horner evaluation of the rhs polynomial over symbol fingerprints.
    #[inline]
    pub fn sequence<I>(&self, fingerprints: I) -> Fingerprint
    where
        I: DoubleEndedIterator<Item = Fingerprint>,
    {
        let mut acc = 0u64;
        for f in fingerprints.rev() {
            // f < m <= p
            acc = add_mod(reduce(acc as u128 * self.c as u128), f);
        }
        self.finish(acc)
    }
}

/// The family `h^0, h^1, ...` derived from one master seed.
///
/// Levels beyond the cached prefix are derived on demand; derivation of a
/// level never depends on how many levels were requested.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashFamily {
    seed: u64,
    width: FingerprintWidth,
    levels: Vec<LevelHash>,
    terminals: Vec<Fingerprint>,
}

impl HashFamily {
    pub fn new(seed: u64, width: FingerprintWidth) -> Self {
        Self::derive(seed, width, 8)
    }

    /// Expands `seed` into the first `levels` level functions.
    pub fn derive(seed: u64, width: FingerprintWidth, levels: usize) -> Self {
        let levels = levels.max(1);
        let levels: Vec<LevelHash> = (0..levels).map(|i| LevelHash::derive(seed, i, width)).collect();
        let h0 = levels[0];
        let terminals = (1..=TERMINAL_COUNT).map(|s| h0.terminal(s)).collect();
        HashFamily {
            seed,
            width,
            levels,
            terminals,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> FingerprintWidth {
        self.width
    }

    /// Cached level parameters, `h^0` first.
    pub fn cached_levels(&self) -> &[LevelHash] {
        &self.levels
    }

    #[inline]
    pub fn level(&self, i: usize) -> LevelHash {
        match self.levels.get(i) {
            Some(h) => *h,
            None => LevelHash::derive(self.seed, i, self.width),
        }
    }

    /// `F^0`; terminal `s` sits at index `s - 1`.
    #[inline]
    pub fn terminal_fingerprints(&self) -> &[Fingerprint] {
        &self.terminals
    }

    pub fn fingerprint_terminal(&self, s: u32) -> Result<Fingerprint> {
        if s == 0 || s > TERMINAL_COUNT {
            return Err(Error::Domain(format!(
                "terminal {s} outside [1, {TERMINAL_COUNT}]"
            )));
        }
        Ok(self.terminals[s as usize - 1])
    }

    /// Fingerprint of a level-`level` rhs given the level-`(level-1)` array.
    ///
    /// `prev[r - 1]` holds the fingerprint of rank `r`.
    pub fn fingerprint_rhs(&self, level: usize, rhs: &[u32], prev: &[Fingerprint]) -> Result<Fingerprint> {
        if level == 0 {
            return Err(Error::Domain("rhs fingerprints start at level 1".into()));
        }
        if let Some(&missing) = rhs.iter().find(|&&s| s == 0 || s as usize > prev.len()) {
            return Err(Error::Integrity(format!(
                "no level-{} fingerprint for symbol {missing}",
                level - 1
            )));
        }
        let h = self.level(level);
        Ok(h.sequence(rhs.iter().map(|&s| prev[s as usize - 1])))
    }
}
