//! Thread-count plumbing.
//!
//! `NM_AST_THREADS` caps the worker count (default: all cores); work is
//! partitioned by output rows and every element is still reduced in its
//! fixed per-element order, so results are bit-identical for any thread
//! count. `NM_AST_DETERMINISTIC=1` additionally forces the reference
//! scalar kernels (see `simd.rs`) and a single worker.

use std::sync::OnceLock;

use rayon::prelude::*;

pub fn deterministic() -> bool {
    static DET: OnceLock<bool> = OnceLock::new();
    *DET.get_or_init(|| std::env::var_os("NM_AST_DETERMINISTIC").is_some_and(|v| v == "1"))
}

pub fn threads() -> usize {
    static N: OnceLock<usize> = OnceLock::new();
    *N.get_or_init(|| {
        if deterministic() {
            return 1;
        }
        match std::env::var("NM_AST_THREADS") {
            Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n >= 1).unwrap_or(1),
            Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    })
}

fn pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = threads();
        if n <= 1 {
            None
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .start_handler(|_| crate::simd::flush_denormals())
                .build()
                .ok()
        }
    })
    .as_ref()
}

/// Apply `f` to disjoint row blocks of `buf` (a row-major m×`width` matrix).
/// `f(first_row, block)` must produce the same bytes regardless of how rows
/// are grouped; blocks only ever split between rows.
pub fn for_row_blocks<T: Send>(buf: &mut [T], width: usize, f: impl Fn(usize, &mut [T]) + Sync) {
    assert!(width > 0 && buf.len() % width == 0);
    let rows = buf.len() / width;
    match pool() {
        Some(p) if rows > 1 => {
            let block_rows = rows.div_ceil(p.current_num_threads());
            p.install(|| {
                buf.par_chunks_mut(block_rows * width)
                    .enumerate()
                    .for_each(|(ci, blk)| f(ci * block_rows, blk));
            });
        }
        _ => f(0, buf),
    }
}
