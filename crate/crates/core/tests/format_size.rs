//! Final-format file sizes against the bit accounting of the layout:
//! `G` symbols of `ceil(log2 (g + sigma))` bits, one end pointer of
//! `ceil(log2 G)` bits per rule and per string.

use lcgram::codec::{to_bytes, Framing, GrammarFile, Payload, SerializeOptions};
use lcgram::postprocess::{run_length_compress, simplify};
use lcgram::{build_gram, Collection, FingerprintWidth, HashFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ceil_log2(x: usize) -> u32 {
    usize::BITS - (x.max(2) - 1).leading_zeros()
}

#[test]
fn final_size_matches_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..12 {
        let sigma = [2u32, 4, 26, 256][case % 4];
        let seed_text: Vec<u8> = (0..rng.random_range(2_000..20_000))
            .map(|_| rng.random_range(0..sigma) as u8)
            .collect();
        let strings: Vec<Vec<u8>> = (0..rng.random_range(10..80))
            .map(|_| {
                let mut s = seed_text.clone();
                for b in s.iter_mut() {
                    if rng.random_bool(0.01) {
                        *b = rng.random_range(0..sigma) as u8;
                    }
                }
                s
            })
            .collect();
        let fam = HashFamily::new(case as u64, FingerprintWidth::Bits61);
        let g = build_gram(&Collection::new(&strings).unwrap(), &fam).unwrap();
        let post = simplify(run_length_compress(&g));
        let file = GrammarFile {
            framing: Framing::lines(),
            payload: Payload::Final(post.clone()),
        };
        let bytes = to_bytes(&file, SerializeOptions::default()).unwrap().len();

        let big_g = post.size();
        let small_g = post.rule_count();
        let k = post.record_count();
        let sym = ceil_log2(small_g + post.alphabet().len() as usize) as usize;
        let ptr = ceil_log2(big_g) as usize;
        let predicted = big_g * sym + (small_g + k) * ptr;
        let actual = bytes * 8;
        let err = (actual as f64 - predicted as f64).abs() / predicted as f64;
        assert!(err <= 0.15, "case {case}: {actual} bits vs {predicted} predicted");
    }
}
