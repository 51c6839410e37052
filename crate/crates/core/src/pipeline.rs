//! Parallel compression.
//!
//! A reader fills buffers with chunks of whole strings and hands them to
//! worker threads through a ready queue; workers compress each chunk into the
//! buffer's grammar against a shared read-only sink and return the buffer on
//! a recycle queue. Once the buffers' estimated space reaches the threshold,
//! the reader stops handing out work, the buffers are merged pairwise and
//! absorbed into the sink, and compression resumes over the grown sink.
//!
//! A buffer may collect chunks that are not adjacent in the input, so each
//! one records where its strings came from. After the last merge the
//! compressed sequence is put back into input order.

use std::io;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, Sender};

use crate::builder::{build_gram_buffered, BufferGrammar, IndexedGrammar};
use crate::error::{Error, Result};
use crate::grammar::{Collection, Grammar, Level};
use crate::hashing::{FingerprintWidth, HashFamily};
use crate::merger::{absorb, merge_buffers};

/// Fixed bytes charged to every grammar.
pub const SPACE_HEADER: usize = std::mem::size_of::<Grammar>();

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub threads: usize,
    /// Buffer space, in bytes of [`space_estimate`], that triggers a merge.
    pub mem_threshold: usize,
    /// Target bytes per chunk; a chunk always holds at least one string.
    pub chunk_size: usize,
    pub seed: u64,
    pub width: FingerprintWidth,
    pub verbose: bool,
    /// Makes workers sleep a pseudo-random 0..3 ms per chunk, to shake up
    /// which buffer ends up with which chunk.
    pub schedule_jitter: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threads: thread::available_parallelism().map_or(1, |n| n.get()),
            mem_threshold: 512 << 20,
            chunk_size: 1 << 20,
            seed: crate::DEFAULT_SEED,
            width: FingerprintWidth::Bits61,
            verbose: false,
            schedule_jitter: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        if self.mem_threshold == 0 {
            return Err(Error::Config("memory threshold must be positive".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk size must be positive".into()));
        }
        Ok(())
    }
}

/// Bytes held by the rule tables, fingerprints and `C` of `g`.
pub fn space_estimate(g: &Grammar) -> usize {
    SPACE_HEADER
        + std::mem::size_of_val(g.levels())
        + g.levels().iter().map(Level::heap_bytes).sum::<usize>()
        + std::mem::size_of_val(g.compressed())
}

/// Strings `first..first + count` of the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Provenance {
    first: u64,
    count: u32,
}

struct PipelineBuffer {
    id: usize,
    chunk: Collection,
    chunk_first: u64,
    grammar: BufferGrammar,
    provenance: Vec<Provenance>,
}

impl PipelineBuffer {
    fn reset(&mut self, sink: &IndexedGrammar) {
        self.chunk.clear();
        self.grammar = BufferGrammar::over(sink);
        self.provenance.clear();
    }
}

fn jitter(seed: u64, chunk: u64) -> Duration {
    let mut z = seed ^ chunk.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 29;
    Duration::from_micros(z % 3000)
}

/// Compresses a stream of strings with `cfg.threads` workers.
///
/// The result is the grammar `build_gram` gives for the whole input, up to
/// rank order within levels.
pub fn pbuild<I>(records: I, cfg: &PipelineConfig) -> Result<Grammar>
where
    I: IntoIterator<Item = io::Result<Vec<u8>>>,
{
    cfg.validate()?;
    let family = HashFamily::new(cfg.seed, cfg.width);
    let mut records = records.into_iter().peekable();
    let mut sink = IndexedGrammar::new(Grammar::empty(family));
    let mut sink_provenance: Vec<Provenance> = Vec::new();
    let mut buffers: Vec<PipelineBuffer> = (0..cfg.threads)
        .map(|id| PipelineBuffer {
            id,
            chunk: Collection::default(),
            chunk_first: 0,
            grammar: BufferGrammar::over(&sink),
            provenance: Vec::new(),
        })
        .collect();
    let mut next_string: u64 = 0;
    let mut chunks: u64 = 0;
    let mut merges = 0usize;

    loop {
        let phase = run_phase(&mut records, &sink, buffers, cfg, &mut next_string, &mut chunks)?;
        buffers = phase.buffers;
        if cfg.verbose {
            eprintln!(
                "chunks {chunks}, strings {next_string}, buffer space {} bytes",
                phase.space
            );
        }
        if buffers.iter().any(|b| !b.provenance.is_empty()) {
            merge_into_sink(&mut sink, &mut sink_provenance, &mut buffers)?;
            merges += 1;
            if cfg.verbose {
                eprintln!(
                    "merge {merges}: sink holds {} rules, {} bytes",
                    sink.grammar().rule_count(),
                    space_estimate(sink.grammar())
                );
            }
        }
        if records.peek().is_none() {
            break;
        }
        for b in &mut buffers {
            b.reset(&sink);
        }
    }

    let mut grammar = sink.into_grammar();
    restore_order(&mut grammar, &sink_provenance);
    Ok(grammar)
}

struct Phase {
    buffers: Vec<PipelineBuffer>,
    space: usize,
}

/// Compresses chunks until the input ends or the buffers grow past the
/// threshold. Every buffer is back in the returned list.
fn run_phase<I>(
    records: &mut std::iter::Peekable<I>,
    sink: &IndexedGrammar,
    buffers: Vec<PipelineBuffer>,
    cfg: &PipelineConfig,
    next_string: &mut u64,
    chunks: &mut u64,
) -> Result<Phase>
where
    I: Iterator<Item = io::Result<Vec<u8>>>,
{
    let p = buffers.len();
    let (ready_tx, ready_rx) = bounded::<PipelineBuffer>(p);
    let (recycle_tx, recycle_rx) = bounded::<PipelineBuffer>(p);
    let space: Vec<AtomicUsize> = buffers
        .iter()
        .map(|b| AtomicUsize::new(space_estimate(b.grammar.grammar())))
        .collect();
    let failed = AtomicBool::new(false);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    for b in buffers {
        recycle_tx
            .send(b)
            .expect("recycle queue has room for every buffer");
    }

    let mut read_error: Option<Error> = None;
    let mut returned: Vec<PipelineBuffer> = Vec::with_capacity(p);
    let mut dispatched = 0usize;
    thread::scope(|s| {
        for _ in 0..p {
            let ready_rx: Receiver<PipelineBuffer> = ready_rx.clone();
            let recycle_tx: Sender<PipelineBuffer> = recycle_tx.clone();
            let (space, failed, failure) = (&space, &failed, &failure);
            s.spawn(move || {
                for mut b in ready_rx {
                    if !failed.load(Ordering::Relaxed) {
                        if let Some(seed) = cfg.schedule_jitter {
                            thread::sleep(jitter(seed, b.chunk_first));
                        }
                        match build_gram_buffered(&b.chunk, &mut b.grammar, sink) {
                            Ok(()) => {
                                space[b.id].store(space_estimate(b.grammar.grammar()), Ordering::Relaxed)
                            }
                            Err(e) => {
                                failed.store(true, Ordering::Relaxed);
                                failure.lock().unwrap().get_or_insert(e);
                            }
                        }
                    }
                    b.chunk.clear();
                    recycle_tx.send(b).expect("reader outlives workers");
                }
            });
        }
        drop(ready_rx);

        // Reader: refill returned buffers until done.
        for mut b in recycle_rx.iter() {
            let total: usize = space.iter().map(|s| s.load(Ordering::Relaxed)).sum();
            let full = total >= cfg.mem_threshold && dispatched > 0;
            if full || failed.load(Ordering::Relaxed) || read_error.is_some() {
                returned.push(b);
                break;
            }
            match read_chunk(records, &mut b.chunk, cfg.chunk_size) {
                Ok(0) => {
                    returned.push(b);
                    break;
                }
                Ok(count) => {
                    b.chunk_first = *next_string;
                    b.provenance.push(Provenance {
                        first: *next_string,
                        count: count as u32,
                    });
                    *next_string += count as u64;
                    *chunks += 1;
                    dispatched += 1;
                    ready_tx.send(b).expect("workers are alive");
                }
                Err(e) => {
                    read_error = Some(e);
                    b.chunk.clear();
                    returned.push(b);
                    break;
                }
            }
        }
        drop(ready_tx);
        drop(recycle_tx);
        while returned.len() < p {
            returned.push(recycle_rx.recv().expect("every buffer comes back"));
        }
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    if let Some(e) = read_error {
        return Err(e);
    }
    returned.sort_by_key(|b| b.id);
    let total = space.iter().map(|s| s.load(Ordering::Relaxed)).sum();
    Ok(Phase {
        buffers: returned,
        space: total,
    })
}

/// Moves whole strings into `chunk` until it holds `chunk_size` bytes or the
/// input ends. Empty strings are skipped. Returns the number of strings read.
fn read_chunk<I>(
    records: &mut std::iter::Peekable<I>,
    chunk: &mut Collection,
    chunk_size: usize,
) -> Result<usize>
where
    I: Iterator<Item = io::Result<Vec<u8>>>,
{
    chunk.clear();
    while chunk.total_len() < chunk_size {
        match records.next() {
            None => break,
            Some(Err(e)) => return Err(Error::Io(e)),
            Some(Ok(s)) if s.is_empty() => continue,
            Some(Ok(s)) => chunk.push(&s)?,
        }
    }
    // Drop empty strings ahead so `peek` tells whether input remains.
    while let Some(Ok(s)) = records.peek() {
        if !s.is_empty() {
            break;
        }
        records.next();
    }
    Ok(chunk.len())
}

/// Collapses the buffers pairwise in index order, then absorbs the result.
fn merge_into_sink(
    sink: &mut IndexedGrammar,
    sink_provenance: &mut Vec<Provenance>,
    buffers: &mut [PipelineBuffer],
) -> Result<()> {
    let mut level: Vec<(BufferGrammar, Vec<Provenance>)> = buffers
        .iter_mut()
        .map(|b| {
            let g = std::mem::replace(
                &mut b.grammar,
                BufferGrammar::standalone(sink.grammar().family().clone()),
            );
            (g, std::mem::take(&mut b.provenance))
        })
        .collect();
    while level.len() > 1 {
        let mut pairs = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            pairs.push((a, it.next()));
        }
        level = thread::scope(|s| {
            let handles: Vec<_> = pairs
                .into_iter()
                .map(|(a, b)| {
                    s.spawn(move || -> Result<(BufferGrammar, Vec<Provenance>)> {
                        match b {
                            None => Ok(a),
                            Some((gb, kb)) => {
                                let (ga, mut ka) = a;
                                ka.extend(kb);
                                Ok((merge_buffers(ga, gb)?, ka))
                            }
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("merge thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
    }
    if let Some((g, k)) = level.pop() {
        absorb(sink, g)?;
        sink_provenance.extend(k);
    }
    Ok(())
}

/// Permutes `C` so that string `j` of the input is entry `j`.
fn restore_order(grammar: &mut Grammar, provenance: &[Provenance]) {
    debug_assert_eq!(
        provenance.iter().map(|k| k.count as usize).sum::<usize>(),
        grammar.compressed().len()
    );
    if provenance.windows(2).all(|w| w[0].first < w[1].first) {
        return;
    }
    let mut starts = Vec::with_capacity(provenance.len());
    let mut at = 0usize;
    for k in provenance {
        starts.push(at);
        at += k.count as usize;
    }
    let mut order: Vec<usize> = (0..provenance.len()).collect();
    order.sort_by_key(|&i| provenance[i].first);
    let old = std::mem::take(grammar.compressed_mut());
    let c = grammar.compressed_mut();
    c.reserve(old.len());
    for i in order {
        c.extend_from_slice(&old[starts[i]..starts[i] + provenance[i].count as usize]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::build_gram;
    use crate::grammar::grammars_equivalent;
    use crate::merger::merge_grams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strings(rng: &mut ChaCha8Rng, k: usize, max_len: usize, sigma: u32) -> Vec<Vec<u8>> {
        (0..k)
            .map(|_| {
                let n = rng.random_range(1..=max_len);
                (0..n).map(|_| b'a' + rng.random_range(0..sigma) as u8).collect()
            })
            .collect()
    }

    fn stream(input: &[Vec<u8>]) -> impl Iterator<Item = io::Result<Vec<u8>>> + '_ {
        input.iter().cloned().map(Ok)
    }

    fn cfg(threads: usize, mem_threshold: usize, chunk_size: usize) -> PipelineConfig {
        PipelineConfig {
            threads,
            mem_threshold,
            chunk_size,
            seed: 99,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn rejects_bad_config() {
        for c in [cfg(0, 1, 1), cfg(1, 0, 1), cfg(1, 1, 0)] {
            assert!(matches!(pbuild(std::iter::empty(), &c), Err(Error::Config(_))));
        }
    }

    #[test]
    fn empty_input() {
        let g = pbuild(std::iter::empty(), &cfg(2, 1 << 20, 64)).unwrap();
        assert_eq!(g.string_count(), 0);
        assert_eq!(g.rule_count(), 0);
    }

    #[test]
    fn single_worker_single_chunk_matches_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = strings(&mut rng, 20, 300, 3);
        let g = pbuild(stream(&input), &cfg(1, usize::MAX, usize::MAX)).unwrap();
        let direct = build_gram(
            &Collection::new(&input).unwrap(),
            &HashFamily::new(99, FingerprintWidth::Bits61),
        )
        .unwrap();
        assert_eq!(g, direct);
    }

    #[test]
    fn parallel_matches_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fam = HashFamily::new(99, FingerprintWidth::Bits61);
        for case in 0..12 {
            let k = rng.random_range(1..60);
            let input = strings(&mut rng, k, 400, [2, 4, 26][case % 3]);
            let direct = build_gram(&Collection::new(&input).unwrap(), &fam).unwrap();
            for p in [1, 2, 4, 8] {
                let c = cfg(p, rng.random_range(200..20_000), rng.random_range(1..2_000));
                let g = pbuild(stream(&input), &c).unwrap();
                assert!(g.validate().is_empty());
                assert!(grammars_equivalent(&g, &direct).unwrap(), "case {case}, p {p}");
            }
        }
    }

    #[test]
    fn jittered_schedule_matches_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fam = HashFamily::new(99, FingerprintWidth::Bits61);
        let input = strings(&mut rng, 40, 200, 4);
        let direct = build_gram(&Collection::new(&input).unwrap(), &fam).unwrap();
        for seed in 0..3 {
            let c = PipelineConfig {
                schedule_jitter: Some(seed),
                ..cfg(4, 3_000, 150)
            };
            let g = pbuild(stream(&input), &c).unwrap();
            assert!(grammars_equivalent(&g, &direct).unwrap());
            for (j, s) in input.iter().enumerate() {
                assert_eq!(&g.expand(j), s);
            }
        }
    }

    #[test]
    fn empty_records_are_skipped() {
        let input: Vec<Vec<u8>> = vec![b"ab".to_vec(), vec![], b"abc".to_vec(), vec![], vec![]];
        let g = pbuild(stream(&input), &cfg(2, 1 << 20, 1)).unwrap();
        assert_eq!(g.string_count(), 2);
        assert_eq!(g.expand(1), b"abc");
    }

    #[test]
    fn io_error_aborts() {
        let input = vec![Ok(b"abc".to_vec()), Err(io::Error::other("boom"))];
        assert!(matches!(pbuild(input, &cfg(2, 1 << 20, 1)), Err(Error::Io(_))));
    }

    #[test]
    fn space_of_empty_is_header() {
        let g = Grammar::empty(HashFamily::new(1, FingerprintWidth::Bits61));
        assert_eq!(space_estimate(&g), SPACE_HEADER);
    }

    #[test]
    fn space_is_monotone_and_subadditive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fam = HashFamily::new(99, FingerprintWidth::Bits61);
        for _ in 0..20 {
            let a = strings(&mut rng, 10, 300, 3);
            let b = strings(&mut rng, 10, 300, 3);
            let ga = build_gram(&Collection::new(&a).unwrap(), &fam).unwrap();
            let gb = build_gram(&Collection::new(&b).unwrap(), &fam).unwrap();
            let m = merge_grams(ga.clone(), gb.clone()).unwrap();
            assert!(space_estimate(&m) <= space_estimate(&ga) + space_estimate(&gb));
            assert!(space_estimate(&m) >= space_estimate(&ga));
        }
    }
}
