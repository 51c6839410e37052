//! `space_estimate` against bytes actually allocated for a grammar.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicIsize, Ordering};

use lcgram::pipeline::space_estimate;
use lcgram::{build_gram, Collection, FingerprintWidth, HashFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Counting;

static LIVE: AtomicIsize = AtomicIsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        LIVE.fetch_add(layout.size() as isize, Ordering::Relaxed);
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        LIVE.fetch_sub(layout.size() as isize, Ordering::Relaxed);
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        LIVE.fetch_add(new_size as isize - layout.size() as isize, Ordering::Relaxed);
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

#[test]
fn estimate_tracks_allocation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..10 {
        let sigma = [2u32, 4, 16, 256][case % 4];
        let strings: Vec<Vec<u8>> = (0..rng.random_range(5..50))
            .map(|_| {
                let n = rng.random_range(1_000..20_000);
                (0..n).map(|_| rng.random_range(0..sigma) as u8).collect()
            })
            .collect();
        let fam = HashFamily::new(case as u64, FingerprintWidth::Bits61);
        let g = build_gram(&Collection::new(&strings).unwrap(), &fam).unwrap();

        // A clone allocates exactly its length, like a freshly decoded grammar.
        let before = LIVE.load(Ordering::Relaxed);
        let copy = Box::new(g.clone());
        let measured = (LIVE.load(Ordering::Relaxed) - before) as f64;
        let estimate = space_estimate(&copy) as f64;
        let err = (estimate - measured).abs() / measured;
        assert!(
            err <= 0.25,
            "case {case}: estimate {estimate}, allocated {measured}"
        );
    }
}
