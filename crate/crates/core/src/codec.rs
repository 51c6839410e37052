//! Grammar files, record framing and decompression.
//!
//! Two container formats share one header layout: the mergeable format keeps
//! the level tables (and optionally the fingerprint arrays), the final format
//! stores a flattened [`PostGrammar`]. All integers are little-endian; the
//! byte-level layout is documented in `docs/format.md`.

use std::io::{self, BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::grammar::{Alphabet, Grammar, Level, Symbol};
use crate::hashing::{FingerprintWidth, HashFamily};
use crate::postprocess::{PostGrammar, PostRule, FIRST_RULE_ID};

pub const MAGIC_MERGEABLE: [u8; 4] = *b"LCGM";
pub const MAGIC_FINAL: [u8; 4] = *b"LCGF";
pub const FORMAT_VERSION: u8 = 1;

const FLAG_FINGERPRINTS: u8 = 1;
const FLAG_WIDTH_32: u8 = 2;

/// How records were delimited in the original input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordMode {
    /// Newline-terminated lines.
    Line,
    /// Records split on a separator byte.
    Raw(u8),
}

impl RecordMode {
    pub fn separator(self) -> u8 {
        match self {
            RecordMode::Line => b'\n',
            RecordMode::Raw(sep) => sep,
        }
    }
}

/// Record framing needed to reproduce the input byte for byte.
///
/// Empty records cannot be grammar strings; their positions among all
/// records are kept here instead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Framing {
    pub mode: RecordMode,
    /// Whether the input ended with a separator.
    pub trailing: bool,
    /// 0-based indices of empty records among all records, ascending.
    pub empty_records: Vec<u64>,
}

impl Framing {
    /// Newline-terminated records with no empties.
    pub fn lines() -> Self {
        Framing {
            mode: RecordMode::Line,
            trailing: true,
            empty_records: Vec::new(),
        }
    }

    /// Framing of `self`'s records followed by `other`'s.
    pub fn concat(&self, self_strings: usize, other: &Framing) -> Result<Framing> {
        if self.mode != other.mode {
            return Err(Error::Incompatible("record modes differ".into()));
        }
        let shift = (self_strings + self.empty_records.len()) as u64;
        let mut empty_records = self.empty_records.clone();
        empty_records.extend(other.empty_records.iter().map(|&e| e + shift));
        Ok(Framing {
            mode: self.mode,
            trailing: other.trailing,
            empty_records,
        })
    }
}

/// Reads records from a byte stream, skipping and recording empty ones.
pub struct RecordReader<R> {
    inner: R,
    sep: u8,
    index: u64,
    trailing: bool,
    empty_records: Vec<u64>,
    buf: Vec<u8>,
    done: bool,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R, mode: RecordMode) -> Self {
        RecordReader {
            inner,
            sep: mode.separator(),
            index: 0,
            trailing: false,
            empty_records: Vec::new(),
            buf: Vec::new(),
            done: false,
        }
    }

    /// Framing of everything read so far; complete once the reader is drained.
    pub fn framing(&self, mode: RecordMode) -> Framing {
        Framing {
            mode,
            trailing: self.trailing,
            empty_records: self.empty_records.clone(),
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.inner.read_until(self.sep, &mut self.buf) {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.trailing = self.buf.last() == Some(&self.sep);
                    if self.trailing {
                        self.buf.pop();
                    }
                    let idx = self.index;
                    self.index += 1;
                    if self.buf.is_empty() {
                        self.empty_records.push(idx);
                    } else {
                        return Some(Ok(std::mem::take(&mut self.buf)));
                    }
                }
            }
        }
        None
    }
}

/// The grammar carried by a file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Mergeable(Grammar),
    Final(PostGrammar),
}

impl Payload {
    pub fn seed(&self) -> u64 {
        match self {
            Payload::Mergeable(g) => g.seed(),
            Payload::Final(p) => p.seed(),
        }
    }

    pub fn string_count(&self) -> usize {
        match self {
            Payload::Mergeable(g) => g.string_count(),
            Payload::Final(p) => p.record_count(),
        }
    }

    /// Expansion of string `j`, appended to `out`.
    pub fn expand_into(&self, j: usize, out: &mut Vec<u8>) {
        match self {
            Payload::Mergeable(g) => g.expand_into(g.compressed()[j], out),
            Payload::Final(p) => {
                for &s in p.record(j) {
                    p.expand_into(s, out);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrammarFile {
    pub framing: Framing,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SerializeOptions {
    /// Store the fingerprint arrays of a mergeable grammar.
    pub keep_fingerprints: bool,
}

/// Bits needed to store values `0..count` (at least 1).
#[inline]
pub fn bit_width(count: u64) -> u32 {
    if count <= 1 {
        1
    } else {
        64 - (count - 1).leading_zeros()
    }
}

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u64,
    bits: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        BitWriter { out, acc: 0, bits: 0 }
    }

    /// Appends the low `width` bits of `value`, least significant first.
    #[inline]
    fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64 && (width == 64 || value >> width == 0));
        let mut value = value;
        let mut width = width;
        while width > 0 {
            let take = width.min(64 - self.bits).min(32);
            let chunk = value & ((1u64 << take) - 1);
            self.acc |= chunk << self.bits;
            self.bits += take;
            value = if take == 64 { 0 } else { value >> take };
            width -= take;
            while self.bits >= 8 {
                self.out.push(self.acc as u8);
                self.acc >>= 8;
                self.bits -= 8;
            }
        }
    }

    /// Pads to a byte boundary with zero bits.
    fn finish(mut self) {
        if self.bits > 0 {
            self.out.push(self.acc as u8);
            self.acc = 0;
            self.bits = 0;
        }
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

fn truncated() -> Error {
    Error::Format("truncated file".into())
}

impl<'a> ByteReader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(truncated)?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Format("varint longer than 10 bytes".into()))
    }

    /// A count that must fit the remaining input at `min_bytes` per item.
    fn count(&mut self, min_bits_each: u64) -> Result<usize> {
        let v = self.varint()?;
        let remaining_bits = ((self.data.len() - self.pos) as u64).saturating_mul(8);
        if v.saturating_mul(min_bits_each) > remaining_bits {
            return Err(Error::Format(format!("count {v} exceeds file size")));
        }
        Ok(v as usize)
    }

    fn bits(&mut self, total_bits: u64) -> Result<BitReader<'a>> {
        let bytes = total_bits.div_ceil(8) as usize;
        Ok(BitReader {
            data: self.bytes(bytes)?,
            pos: 0,
        })
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: u64,
}

impl BitReader<'_> {
    #[inline]
    fn read(&mut self, width: u32) -> u64 {
        let mut out = 0u64;
        let mut got = 0;
        while got < width {
            let byte = self.data[(self.pos / 8) as usize];
            let off = (self.pos % 8) as u32;
            let take = (8 - off).min(width - got);
            let bits = (byte as u64 >> off) & ((1u64 << take) - 1);
            out |= bits << got;
            got += take;
            self.pos += take as u64;
        }
        out
    }
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn write_header(
    out: &mut Vec<u8>,
    magic: [u8; 4],
    flags: u8,
    seed: u64,
    alphabet: &Alphabet,
    framing: &Framing,
) {
    out.extend_from_slice(&magic);
    out.push(FORMAT_VERSION);
    out.push(flags);
    out.extend_from_slice(&seed.to_le_bytes());
    for w in alphabet.words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let (mode, sep) = match framing.mode {
        RecordMode::Line => (0u8, b'\n'),
        RecordMode::Raw(sep) => (1u8, sep),
    };
    out.push(mode);
    out.push(sep);
    out.push(framing.trailing as u8);
    put_varint(out, framing.empty_records.len() as u64);
    let mut next = 0u64;
    for &e in &framing.empty_records {
        put_varint(out, e - next);
        next = e + 1;
    }
}

/// Dense stored value (0-based) of a level-0 symbol.
fn dense_terminal(alphabet: &Alphabet, rank: u32) -> u64 {
    alphabet.dense_rank((rank - 1) as u8).expect("validated terminal") as u64 - 1
}

fn encode_mergeable(g: &Grammar, framing: &Framing, opts: SerializeOptions, out: &mut Vec<u8>) {
    let width = g.family().width();
    let mut flags = 0;
    if opts.keep_fingerprints {
        flags |= FLAG_FINGERPRINTS;
    }
    if width == FingerprintWidth::Bits32 {
        flags |= FLAG_WIDTH_32;
    }
    let alphabet = g.alphabet();
    write_header(out, MAGIC_MERGEABLE, flags, g.seed(), alphabet, framing);

    let levels = g.levels();
    put_varint(out, g.string_count() as u64);
    put_varint(out, levels.len() as u64);
    for level in levels {
        put_varint(out, level.len() as u64);
    }
    let level_count = |i: usize| -> u64 {
        if i == 0 {
            alphabet.len() as u64
        } else {
            levels[i - 1].len() as u64
        }
    };
    for (li, level) in levels.iter().enumerate() {
        for rhs in level.iter() {
            put_varint(out, rhs.len() as u64);
        }
        let w = bit_width(level_count(li));
        let mut bits = BitWriter::new(out);
        for rhs in level.iter() {
            for &s in rhs {
                let v = if li == 0 {
                    dense_terminal(alphabet, s)
                } else {
                    s as u64 - 1
                };
                bits.write(v, w);
            }
        }
        bits.finish();
    }
    let lw = bit_width(levels.len() as u64 + 1);
    let mut bits = BitWriter::new(out);
    for s in g.compressed() {
        bits.write(s.level as u64, lw);
        let v = if s.level == 0 {
            dense_terminal(alphabet, s.rank)
        } else {
            s.rank as u64 - 1
        };
        bits.write(v, bit_width(level_count(s.level as usize)));
    }
    bits.finish();
    if opts.keep_fingerprints {
        for level in levels {
            for &f in level.fingerprints() {
                match width {
                    FingerprintWidth::Bits61 => out.extend_from_slice(&f.to_le_bytes()),
                    FingerprintWidth::Bits32 => out.extend_from_slice(&(f as u32).to_le_bytes()),
                }
            }
        }
    }
}

fn encode_final(p: &PostGrammar, framing: &Framing, out: &mut Vec<u8>) {
    let flags = if p.width() == FingerprintWidth::Bits32 {
        FLAG_WIDTH_32
    } else {
        0
    };
    let alphabet = p.alphabet();
    write_header(out, MAGIC_FINAL, flags, p.seed(), alphabet, framing);

    let sigma = alphabet.len() as u64;
    let rules = p.rules();
    let seq_total: u64 = rules
        .iter()
        .map(|r| match r {
            PostRule::Seq(rhs) => rhs.len() as u64,
            PostRule::Run { .. } => 0,
        })
        .sum::<u64>()
        + p.records().map(|r| r.len() as u64).sum::<u64>();
    let max_run = rules
        .iter()
        .filter_map(|r| match r {
            PostRule::Run { len, .. } => Some(*len as u64),
            PostRule::Seq(_) => None,
        })
        .max()
        .unwrap_or(0);
    put_varint(out, rules.len() as u64);
    put_varint(out, p.record_count() as u64);
    put_varint(out, seq_total);
    put_varint(out, max_run);

    let mut bits = BitWriter::new(out);
    for r in rules {
        bits.write(matches!(r, PostRule::Run { .. }) as u64, 1);
    }
    bits.finish();

    let w = bit_width(sigma + rules.len() as u64);
    let pw = bit_width(seq_total + 1);
    let rw = bit_width(max_run + 1);
    let encode = |s: u32| -> u64 {
        if s < FIRST_RULE_ID {
            dense_terminal(alphabet, s)
        } else {
            sigma + (s - FIRST_RULE_ID) as u64
        }
    };
    let mut bits = BitWriter::new(out);
    for r in rules {
        if let PostRule::Seq(rhs) = r {
            for &s in rhs {
                bits.write(encode(s), w);
            }
        }
    }
    for rec in p.records() {
        for &s in rec {
            bits.write(encode(s), w);
        }
    }
    let mut end = 0u64;
    for r in rules {
        if let PostRule::Seq(rhs) = r {
            end += rhs.len() as u64;
            bits.write(end, pw);
        }
    }
    for rec in p.records() {
        end += rec.len() as u64;
        bits.write(end, pw);
    }
    for r in rules {
        if let PostRule::Run { base, len } = r {
            bits.write(encode(*base), w);
            bits.write(*len as u64, rw);
        }
    }
    bits.finish();
}

/// Encodes a file to bytes.
pub fn to_bytes(file: &GrammarFile, opts: SerializeOptions) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match &file.payload {
        Payload::Mergeable(g) => {
            let v = g.validate();
            if !v.is_empty() {
                return Err(Error::Structure(v));
            }
            encode_mergeable(g, &file.framing, opts, &mut out);
        }
        Payload::Final(p) => {
            let v = p.validate();
            if !v.is_empty() {
                return Err(Error::Format(format!("invalid final grammar: {}", v[0])));
            }
            encode_final(p, &file.framing, &mut out);
        }
    }
    let sum = twox_hash::XxHash64::oneshot(0, &out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

/// Writes a file and returns the number of bytes written.
pub fn serialize<W: Write>(file: &GrammarFile, opts: SerializeOptions, mut sink: W) -> Result<u64> {
    let bytes = to_bytes(file, opts)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

struct Header {
    magic: [u8; 4],
    flags: u8,
    seed: u64,
    alphabet: Alphabet,
    framing: Framing,
}

fn read_header(r: &mut ByteReader<'_>) -> Result<Header> {
    let magic: [u8; 4] = r.bytes(4)?.try_into().unwrap();
    if magic != MAGIC_MERGEABLE && magic != MAGIC_FINAL {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let flags = r.u8()?;
    if flags & !(FLAG_FINGERPRINTS | FLAG_WIDTH_32) != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#x}")));
    }
    let seed = r.u64()?;
    let mut words = [0u64; 4];
    for w in &mut words {
        *w = r.u64()?;
    }
    let alphabet = Alphabet::from_words(words);
    let mode = r.u8()?;
    let sep = r.u8()?;
    let mode = match mode {
        0 if sep == b'\n' => RecordMode::Line,
        1 => RecordMode::Raw(sep),
        _ => return Err(Error::Format(format!("bad record mode {mode}"))),
    };
    let trailing = match r.u8()? {
        0 => false,
        1 => true,
        t => return Err(Error::Format(format!("bad trailing flag {t}"))),
    };
    let empties = r.count(8)?;
    let mut empty_records = Vec::with_capacity(empties);
    let mut next = 0u64;
    for _ in 0..empties {
        let e = next
            .checked_add(r.varint()?)
            .ok_or_else(|| Error::Format("empty-record index overflow".into()))?;
        empty_records.push(e);
        next = e + 1;
    }
    Ok(Header {
        magic,
        flags,
        seed,
        alphabet,
        framing: Framing {
            mode,
            trailing,
            empty_records,
        },
    })
}

fn decode_terminal(alphabet: &Alphabet, v: u64) -> Result<u32> {
    u32::try_from(v + 1)
        .ok()
        .and_then(|d| alphabet.byte_of(d))
        .map(|b| b as u32 + 1)
        .ok_or_else(|| Error::Format(format!("terminal {v} outside alphabet")))
}

fn decode_mergeable(r: &mut ByteReader<'_>, h: &Header, family: HashFamily) -> Result<Grammar> {
    let alphabet = h.alphabet;
    let sigma = alphabet.len() as u64;
    let k = r.count(1)?;
    let level_total = r.count(8)?;
    let mut counts = Vec::with_capacity(level_total);
    for _ in 0..level_total {
        counts.push(r.count(8)?);
    }
    // Terminal values in level-1 tables are dense; build the lookup once.
    let dense_to_rank: Vec<u32> = alphabet.bytes().map(|b| b as u32 + 1).collect();
    let mut levels = Vec::with_capacity(level_total);
    for (li, &n) in counts.iter().enumerate() {
        let mut lens = Vec::with_capacity(n);
        let mut total = 0u64;
        for _ in 0..n {
            let len = r.varint()?;
            if len == 0 {
                return Err(Error::Format(format!("empty rhs at level {}", li + 1)));
            }
            total = total.checked_add(len).ok_or_else(truncated)?;
            lens.push(len as usize);
        }
        let below = if li == 0 { sigma } else { counts[li - 1] as u64 };
        let w = bit_width(below);
        let mut bits = r.bits(total.checked_mul(w as u64).ok_or_else(truncated)?)?;
        let mut level = Level::new();
        let mut rhs = Vec::new();
        for len in lens {
            rhs.clear();
            for _ in 0..len {
                let v = bits.read(w);
                if v >= below {
                    return Err(Error::Format(format!(
                        "symbol {v} out of range at level {}",
                        li + 1
                    )));
                }
                rhs.push(if li == 0 {
                    dense_to_rank[v as usize]
                } else {
                    v as u32 + 1
                });
            }
            level.push(&rhs, 0)?;
        }
        levels.push(level);
    }
    let lw = bit_width(level_total as u64 + 1);
    let widths: Vec<u32> = (0..=level_total)
        .map(|i| bit_width(if i == 0 { sigma } else { counts[i - 1] as u64 }))
        .collect();
    // The exact size depends on the levels read, so decode from the rest.
    let rest_start = r.pos;
    let mut bits = BitReader {
        data: &r.data[rest_start..],
        pos: 0,
    };
    let available = ((r.data.len() - rest_start) as u64) * 8;
    let mut compressed = Vec::with_capacity(k);
    for _ in 0..k {
        if bits.pos + lw as u64 > available {
            return Err(truncated());
        }
        let level = bits.read(lw) as usize;
        if level > level_total {
            return Err(Error::Format(format!("C entry at level {level} above height")));
        }
        if bits.pos + widths[level] as u64 > available {
            return Err(truncated());
        }
        let v = bits.read(widths[level]);
        let rank = if level == 0 {
            decode_terminal(&alphabet, v)?
        } else {
            if v >= counts[level - 1] as u64 {
                return Err(Error::Format(format!("C entry rank {v} out of range")));
            }
            v as u32 + 1
        };
        compressed.push(Symbol::new(level as u32, rank));
    }
    r.pos = rest_start + bits.pos.div_ceil(8) as usize;

    let mut g = Grammar::from_parts(family, alphabet, levels, compressed);
    if h.flags & FLAG_FINGERPRINTS != 0 {
        for (li, &n) in counts.iter().enumerate() {
            let fps = g.levels_mut()[li].fingerprints_mut();
            for f in fps.iter_mut().take(n) {
                *f = if h.flags & FLAG_WIDTH_32 != 0 {
                    r.u32()? as u64
                } else {
                    r.u64()?
                };
            }
        }
    } else {
        g.recompute_fingerprints();
    }
    let v = g.validate();
    if !v.is_empty() {
        return Err(Error::Format(format!("grammar fails validation: {}", v[0])));
    }
    Ok(g)
}

fn decode_final(r: &mut ByteReader<'_>, h: &Header) -> Result<PostGrammar> {
    let alphabet = h.alphabet;
    let sigma = alphabet.len() as u64;
    let n = r.count(1)?;
    let k = r.count(1)?;
    let seq_total = r.varint()?;
    let max_run = r.varint()?;
    let mut kinds = r.bits(n as u64)?;
    let is_run: Vec<bool> = (0..n).map(|_| kinds.read(1) == 1).collect();
    let runs = is_run.iter().filter(|&&x| x).count() as u64;
    let seqs = n as u64 - runs;

    let w = bit_width(sigma + n as u64);
    let pw = bit_width(seq_total + 1);
    let rw = bit_width(max_run + 1);
    let total_bits = seq_total
        .checked_mul(w as u64)
        .and_then(|x| x.checked_add((seqs + k as u64) * pw as u64))
        .and_then(|x| x.checked_add(runs * (w + rw) as u64))
        .ok_or_else(truncated)?;
    let mut bits = r.bits(total_bits)?;
    let limit = sigma + n as u64;
    let decode = |v: u64| -> Result<u32> {
        if v < sigma {
            decode_terminal(&alphabet, v)
        } else if v < limit {
            Ok(FIRST_RULE_ID + (v - sigma) as u32)
        } else {
            Err(Error::Format(format!("symbol {v} out of range")))
        }
    };
    let mut symbols = Vec::with_capacity(seq_total as usize);
    for _ in 0..seq_total {
        symbols.push(decode(bits.read(w))?);
    }
    let mut ends = Vec::with_capacity(seqs as usize + k);
    let mut prev = 0u64;
    for _ in 0..seqs + k as u64 {
        let e = bits.read(pw);
        if e < prev || e > seq_total {
            return Err(Error::Format("rhs pointers not monotone".into()));
        }
        ends.push(e as usize);
        prev = e;
    }
    if prev != seq_total {
        return Err(Error::Format(
            "rhs pointers do not cover the symbol stream".into(),
        ));
    }
    let mut start = 0usize;
    let mut ends_iter = ends.into_iter();
    let mut rules = Vec::with_capacity(n);
    for &run in &is_run {
        if run {
            let base = decode(bits.read(w))?;
            let len = bits.read(rw);
            rules.push(PostRule::Run {
                base,
                len: u32::try_from(len).map_err(|_| Error::Format("run too long".into()))?,
            });
        } else {
            let end = ends_iter.next().ok_or_else(truncated)?;
            rules.push(PostRule::Seq(symbols[start..end].to_vec()));
            start = end;
        }
    }
    // Run rules were stored after all pointers; re-read them in rule order.
    let mut records = Vec::with_capacity(k);
    for end in ends_iter {
        records.push(symbols[start..end].to_vec());
        start = end;
    }
    let width = if h.flags & FLAG_WIDTH_32 != 0 {
        FingerprintWidth::Bits32
    } else {
        FingerprintWidth::Bits61
    };
    let p = PostGrammar::from_parts(h.seed, width, alphabet, rules, records);
    let v = p.validate();
    if !v.is_empty() {
        return Err(Error::Format(format!("grammar fails validation: {}", v[0])));
    }
    Ok(p)
}

/// Decodes a file from bytes, verifying the checksum first.
pub fn from_bytes(data: &[u8]) -> Result<GrammarFile> {
    if data.len() < 8 {
        return Err(truncated());
    }
    let (body, sum) = data.split_at(data.len() - 8);
    if body.len() < 4 || (body[..4] != MAGIC_MERGEABLE && body[..4] != MAGIC_FINAL) {
        return Err(Error::Format("bad magic".into()));
    }
    if twox_hash::XxHash64::oneshot(0, body) != u64::from_le_bytes(sum.try_into().unwrap()) {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut r = ByteReader { data: body, pos: 0 };
    let h = read_header(&mut r)?;
    let width = if h.flags & FLAG_WIDTH_32 != 0 {
        FingerprintWidth::Bits32
    } else {
        FingerprintWidth::Bits61
    };
    let payload = if h.magic == MAGIC_MERGEABLE {
        Payload::Mergeable(decode_mergeable(&mut r, &h, HashFamily::new(h.seed, width))?)
    } else {
        if h.flags & FLAG_FINGERPRINTS != 0 {
            return Err(Error::Format("final files carry no fingerprints".into()));
        }
        Payload::Final(decode_final(&mut r, &h)?)
    };
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(GrammarFile {
        framing: h.framing,
        payload,
    })
}

/// Reads a whole file from `source`.
pub fn deserialize<R: Read>(mut source: R) -> Result<GrammarFile> {
    let mut data = Vec::new();
    source.read_to_end(&mut data)?;
    from_bytes(&data)
}

/// Writes the original input: every string and empty record, separated
/// by the record separator. Returns the number of bytes written.
pub fn decompress<W: Write>(file: &GrammarFile, sink: W) -> Result<u64> {
    let mut sink = io::BufWriter::with_capacity(1 << 16, sink);
    let sep = file.framing.mode.separator();
    let k = file.payload.string_count();
    let total = k as u64 + file.framing.empty_records.len() as u64;
    let mut empties = file.framing.empty_records.iter().peekable();
    let mut next_string = 0usize;
    let mut written = 0u64;
    let mut buf = Vec::new();
    for idx in 0..total {
        if idx > 0 {
            sink.write_all(&[sep])?;
            written += 1;
        }
        if empties.peek() == Some(&&idx) {
            empties.next();
            continue;
        }
        if next_string >= k {
            return Err(Error::Format(
                "framing lists fewer strings than the grammar".into(),
            ));
        }
        buf.clear();
        file.payload.expand_into(next_string, &mut buf);
        next_string += 1;
        sink.write_all(&buf)?;
        written += buf.len() as u64;
    }
    if next_string != k || empties.next().is_some() {
        return Err(Error::Format(
            "framing does not match the grammar's string count".into(),
        ));
    }
    if file.framing.trailing && total > 0 {
        sink.write_all(&[sep])?;
        written += 1;
    }
    sink.flush()?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::build_gram;
    use crate::grammar::{grammars_equivalent, Collection};
    use crate::postprocess::{run_length_compress, simplify};
    use proptest::prelude::*;

    fn fam() -> HashFamily {
        HashFamily::new(1234, FingerprintWidth::Bits61)
    }

    fn mergeable(strings: &[&[u8]]) -> GrammarFile {
        GrammarFile {
            framing: Framing::lines(),
            payload: Payload::Mergeable(build_gram(&Collection::new(strings).unwrap(), &fam()).unwrap()),
        }
    }

    #[test]
    fn bit_widths() {
        assert_eq!(bit_width(0), 1);
        assert_eq!(bit_width(1), 1);
        assert_eq!(bit_width(2), 1);
        assert_eq!(bit_width(3), 2);
        assert_eq!(bit_width(256), 8);
        assert_eq!(bit_width(257), 9);
    }

    #[test]
    fn single_terminal_file_is_small() {
        let f = mergeable(&[b"a"]);
        let bytes = to_bytes(&f, SerializeOptions::default()).unwrap();
        // magic 4 + version 1 + flags 1 + seed 8 + alphabet 32 + framing 4
        // + k 1 + levels 1 + C 1 + checksum 8
        assert_eq!(bytes.len(), 61);
        assert!(bytes.len() <= 64);
        assert_eq!(from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let f = mergeable(&[b"abracadabra", b"a", b"cadabra", b"abracadabra"]);
        for keep in [false, true] {
            let opts = SerializeOptions {
                keep_fingerprints: keep,
            };
            let bytes = to_bytes(&f, opts).unwrap();
            let back = from_bytes(&bytes).unwrap();
            match (&back.payload, &f.payload) {
                (Payload::Mergeable(a), Payload::Mergeable(b)) => assert!(grammars_equivalent(a, b).unwrap()),
                _ => panic!(),
            }
            assert_eq!(to_bytes(&back, opts).unwrap(), bytes);
        }
    }

    #[test]
    fn stripped_fingerprints_are_recomputed() {
        let f = mergeable(&[b"mississippi", b"missouri"]);
        let full = from_bytes(
            &to_bytes(
                &f,
                SerializeOptions {
                    keep_fingerprints: true,
                },
            )
            .unwrap(),
        )
        .unwrap();
        let stripped = from_bytes(&to_bytes(&f, SerializeOptions::default()).unwrap()).unwrap();
        let (Payload::Mergeable(a), Payload::Mergeable(b)) = (&full.payload, &stripped.payload) else {
            panic!()
        };
        for (x, y) in a.levels().iter().zip(b.levels()) {
            assert_eq!(x.fingerprints(), y.fingerprints());
        }
    }

    #[test]
    fn corruption_is_rejected() {
        let f = mergeable(&[b"hello", b"world"]);
        let bytes = to_bytes(&f, SerializeOptions::default()).unwrap();
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0xff;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn final_format_round_trip() {
        let Payload::Mergeable(g) = mergeable(&[b"NNNNNNNNNNNNacgtNNNNNNNN", b"acgtacgtacgt", b"x"]).payload
        else {
            panic!()
        };
        let p = simplify(run_length_compress(&g));
        let f = GrammarFile {
            framing: Framing::lines(),
            payload: Payload::Final(p),
        };
        let bytes = to_bytes(&f, SerializeOptions::default()).unwrap();
        assert_eq!(&bytes[..4], b"LCGF");
        assert_eq!(from_bytes(&bytes).unwrap(), f);
        let mut out = Vec::new();
        decompress(&f, &mut out).unwrap();
        assert_eq!(out, b"NNNNNNNNNNNNacgtNNNNNNNN\nacgtacgtacgt\nx\n");
    }

    #[test]
    fn records_with_empties_round_trip() {
        for input in [&b"a\n\nb\n"[..], b"a\nb", b"\na", b"a\n\n\n", b"x", b"\n\nxy\n\n"] {
            let mut reader = RecordReader::new(input, RecordMode::Line);
            let records: Vec<Vec<u8>> = reader.by_ref().map(Result::unwrap).collect();
            let framing = reader.framing(RecordMode::Line);
            let g = build_gram(&Collection::new(&records).unwrap(), &fam()).unwrap();
            let f = GrammarFile {
                framing,
                payload: Payload::Mergeable(g),
            };
            let mut out = Vec::new();
            decompress(&f, &mut out).unwrap();
            assert_eq!(out, input);
        }
    }

    #[test]
    fn raw_mode_separator() {
        let input = b"ab\0\0cd\0";
        let mut reader = RecordReader::new(&input[..], RecordMode::Raw(0));
        let records: Vec<Vec<u8>> = reader.by_ref().map(Result::unwrap).collect();
        assert_eq!(records, vec![b"ab".to_vec(), b"cd".to_vec()]);
        let f = GrammarFile {
            framing: reader.framing(RecordMode::Raw(0)),
            payload: Payload::Mergeable(build_gram(&Collection::new(&records).unwrap(), &fam()).unwrap()),
        };
        let back = from_bytes(&to_bytes(&f, SerializeOptions::default()).unwrap()).unwrap();
        let mut out = Vec::new();
        decompress(&back, &mut out).unwrap();
        assert_eq!(out, input);
    }

    proptest! {
        #[test]
        fn bit_writer_reader_agree(values in prop::collection::vec((any::<u64>(), 1u32..=64), 0..200)) {
            let mut out = Vec::new();
            let mut w = BitWriter::new(&mut out);
            let masked: Vec<(u64, u32)> = values
                .iter()
                .map(|&(v, width)| (if width == 64 { v } else { v & ((1 << width) - 1) }, width))
                .collect();
            for &(v, width) in &masked {
                w.write(v, width);
            }
            w.finish();
            let mut r = BitReader { data: &out, pos: 0 };
            for &(v, width) in &masked {
                prop_assert_eq!(r.read(width), v);
            }
        }

        #[test]
        fn serialize_round_trips(strings in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..64), 1..12)) {
            let g = build_gram(&Collection::new(&strings).unwrap(), &fam()).unwrap();
            let f = GrammarFile { framing: Framing::lines(), payload: Payload::Mergeable(g.clone()) };
            let bytes = to_bytes(&f, SerializeOptions::default()).unwrap();
            prop_assert_eq!(from_bytes(&bytes).unwrap(), f);
            let p = GrammarFile { framing: Framing::lines(), payload: Payload::Final(simplify(run_length_compress(&g))) };
            let bytes = to_bytes(&p, SerializeOptions::default()).unwrap();
            prop_assert_eq!(from_bytes(&bytes).unwrap(), p);
        }
    }
}
