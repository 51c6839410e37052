//! Stable locally consistent grammar compression.
//!
//! Strings are compressed by rounds of fingerprint-driven LMS parsing into a
//! level-partitioned straight-line grammar. Because parsing decisions depend
//! only on seeded fingerprints of expansions, grammars built independently
//! with the same seed can be merged into the grammar of the concatenated
//! input. The [`pipeline`] module uses that to compress in parallel.
//!
//! ```
//! use lcgram::{build_gram, merge_grams, grammars_equivalent, Collection, FingerprintWidth, HashFamily};
//!
//! let fam = HashFamily::new(lcgram::DEFAULT_SEED, FingerprintWidth::Bits61);
//! let a = Collection::new(["abracadabra", "cadabra"])?;
//! let b = Collection::new(["abrakadabra"])?;
//! let merged = merge_grams(build_gram(&a, &fam)?, build_gram(&b, &fam)?)?;
//! assert!(grammars_equivalent(&merged, &build_gram(&a.concat(&b), &fam)?)?);
//! # Ok::<(), lcgram::Error>(())
//! ```

pub mod builder;
pub mod codec;
mod error;
pub mod grammar;
pub mod hashing;
pub mod merger;
pub mod parser;
mod phrase_index;
pub mod pipeline;
pub mod postprocess;

pub use builder::{build_gram, build_gram_buffered, BufferGrammar, IndexedGrammar};
pub use error::{Error, Result};
pub use grammar::{grammars_equivalent, Alphabet, Collection, Grammar, Level, Rank, Symbol, Violation};
pub use hashing::{FingerprintWidth, HashFamily};
pub use merger::merge_grams;
pub use pipeline::{pbuild, PipelineConfig};
pub use postprocess::{run_length_compress, simplify, PostGrammar};

/// Seed used when none is given, so independent runs stay mergeable.
pub const DEFAULT_SEED: u64 = 0x005E_ED0F_6A4A_3A41;
