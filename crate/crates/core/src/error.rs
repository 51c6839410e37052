use std::io;

use thiserror::Error;

use crate::grammar::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("malformed grammar: {}", first_violation(.0))]
    Structure(Vec<Violation>),
    #[error("seed mismatch: {0:#x} vs {1:#x}")]
    SeedMismatch(u64, u64),
    #[error("incompatible grammars: {0}")]
    Incompatible(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn first_violation(v: &[Violation]) -> String {
    match v {
        [] => "no violations".to_string(),
        [one] => one.to_string(),
        [first, rest @ ..] => format!("{first} (+{} more)", rest.len()),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
