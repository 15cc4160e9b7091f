//! Thin, bounds-checked wrappers around the `matrixmultiply` gemm kernels.
//!
//! Row-major products are split into fixed-size row chunks. The split does
//! not depend on the number of worker threads, so results are bitwise
//! identical whether the chunks run serially or on the pool.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::tensor::Element;

const ROW_CHUNK: usize = 64;
/// Below this many multiply-adds a product always runs on the calling thread.
const PARALLEL_MIN_WORK: usize = 1 << 18;

fn pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var("MLVC_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
        if threads <= 1 {
            return None;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .ok()
    })
    .as_ref()
}

/// Number of threads matmul may use (1 when running serially).
pub fn matmul_threads() -> usize {
    pool().map_or(1, |p| p.current_num_threads())
}

/// A strided matrix view into a slice.
#[derive(Clone, Copy, Debug)]
pub struct Strided {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Strided {
    pub fn rowmajor(offset: usize, cols: usize) -> Self {
        Strided {
            offset,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `[rows, cols]` block.
    pub fn transposed(offset: usize, cols: usize) -> Self {
        Strided {
            offset,
            rs: 1,
            cs: cols,
        }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            self.offset
        } else {
            self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
        }
    }
}

/// `c (+)= a * b` over strided views, with `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    av: Strided,
    b: &[T],
    bv: Strided,
    c: &mut [T],
    cv: Strided,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(
        av.last(m, k) < a.len().max(1) || k == 0,
        "gemm: lhs view out of bounds"
    );
    assert!(
        bv.last(k, n) < b.len().max(1) || k == 0,
        "gemm: rhs view out of bounds"
    );
    assert!(cv.last(m, n) < c.len(), "gemm: output view out of bounds");
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[cv.offset + i * cv.rs + j * cv.cs] = T::zero();
                }
            }
        }
        return;
    }
    // SAFETY: every index touched lies within the asserted bounds above and
    // `c` is a unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// Row-major product `c (+)= op(a) * op(b)` where `op` optionally transposes.
///
/// `a` is stored as `[m,k]` (or `[k,m]` when `trans_a`), `b` as `[k,n]`
/// (or `[n,k]` when `trans_b`); `c` is `[m,n]` row-major.
#[allow(clippy::too_many_arguments)]
pub fn matmul_ex<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "matmul lhs length");
    assert_eq!(b.len(), k * n, "matmul rhs length");
    assert_eq!(c.len(), m * n, "matmul output length");
    let bv = if trans_b {
        Strided::transposed(0, k)
    } else {
        Strided::rowmajor(0, n)
    };
    let a_view = |row0: usize| {
        if trans_a {
            Strided {
                offset: row0,
                rs: 1,
                cs: m,
            }
        } else {
            Strided::rowmajor(row0 * k, k)
        }
    };
    let run = |(ci, chunk): (usize, &mut [T])| {
        let row0 = ci * ROW_CHUNK;
        let rows = chunk.len() / n.max(1);
        gemm(
            rows,
            k,
            n,
            a,
            a_view(row0),
            b,
            bv,
            chunk,
            Strided::rowmajor(0, n),
            accumulate,
        );
    };
    if n == 0 {
        return;
    }
    let chunk_len = ROW_CHUNK * n;
    match pool() {
        Some(p) if m * k * n >= PARALLEL_MIN_WORK && m > ROW_CHUNK => {
            p.install(|| c.par_chunks_mut(chunk_len).enumerate().for_each(run));
        }
        _ => c.chunks_mut(chunk_len).enumerate().for_each(run),
    }
}

pub fn matmul_rowmajor<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    matmul_ex(m, k, n, a, false, b, false, c, accumulate);
}
