//! Scalar abstraction over `f32`/`f64`.
//!
//! Training runs in single precision for speed; gradient checks and the
//! numeric oracles run in double precision. Everything downstream is generic
//! over [`Real`], which is `num_traits::Float` plus a matmul kernel dispatch.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// General matrix multiply `c = alpha * a @ b + beta * c` with explicit
    /// row/column strides, in this scalar type's native precision.
    ///
    /// # Safety
    /// Pointers must be valid for the given dimensions and strides, with `c`
    /// non-overlapping `a` and `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self {
        Self::from(x).expect("f64 conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }

    /// Magnitudes at or below this floor are treated as the phase
    /// singularity: gradients through 1/|y| terms are cut there instead of
    /// overflowing. Chosen so 1/mu^3 stays finite in this precision.
    fn kink_floor() -> Self;
}

impl Real for f32 {
    fn kink_floor() -> Self {
        1e-12
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn kink_floor() -> Self {
        1e-100
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided matrix operand for [`par_gemm`].
#[derive(Clone, Copy)]
pub struct MatRef<T> {
    pub ptr: *const T,
    pub rs: isize,
    pub cs: isize,
}

unsafe impl<T: Send> Send for MatRef<T> {}
unsafe impl<T: Sync> Sync for MatRef<T> {}

impl<T> MatRef<T> {
    /// Row-major contiguous view over `data` with `cols` columns.
    pub fn row_major(data: &[T], cols: usize) -> Self {
        MatRef { ptr: data.as_ptr(), rs: cols as isize, cs: 1 }
    }

    /// Transpose of a row-major contiguous view (no copy, swapped strides).
    pub fn row_major_t(data: &[T], cols: usize) -> Self {
        MatRef { ptr: data.as_ptr(), rs: 1, cs: cols as isize }
    }
}

/// `c = a @ b` into a row-major `c`, splitting rows of `a` across the rayon
/// pool when the product is large enough to amortize it.
///
/// Every output element is produced by exactly one underlying gemm call, so
/// results are bit-identical regardless of how many threads run.
pub fn par_gemm<T: Real>(m: usize, k: usize, n: usize, a: MatRef<T>, b: MatRef<T>, c: &mut [T]) {
    assert_eq!(c.len(), m * n, "output buffer size");
    let threads = rayon::current_num_threads();
    let flops = 2.0 * m as f64 * k as f64 * n as f64;
    if threads <= 1 || flops < 2e6 || m < 2 * threads {
        unsafe {
            T::gemm(m, k, n, T::one(), a.ptr, a.rs, a.cs, b.ptr, b.rs, b.cs, T::zero(), c.as_mut_ptr(), n as isize, 1);
        }
        return;
    }
    let chunk_rows = m.div_ceil(threads);
    let chunks: Vec<(usize, &mut [T])> = c
        .chunks_mut(chunk_rows * n)
        .enumerate()
        .map(|(i, cc)| (i * chunk_rows, cc))
        .collect();
    rayon::scope(|s| {
        for (row0, cc) in chunks {
            let rows = cc.len() / n;
            s.spawn(move |_| {
                // Bind the whole structs so the closure captures the Send
                // wrappers, not their raw-pointer fields.
                let (a, b) = (a, b);
                unsafe {
                    let ap = a.ptr.offset(row0 as isize * a.rs);
                    T::gemm(rows, k, n, T::one(), ap, a.rs, a.cs, b.ptr, b.rs, b.cs, T::zero(), cc.as_mut_ptr(), n as isize, 1);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn par_gemm_matches_naive() {
        let (m, k, n) = (37, 19, 23);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut c = vec![0.0; m * n];
        par_gemm(m, k, n, MatRef::row_major(&a, k), MatRef::row_major(&b, n), &mut c);
        let want = naive(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn transposed_operand_matches() {
        // a^T supplied via swapped strides must equal materialized transpose.
        let (m, k, n) = (8, 12, 5);
        let at: Vec<f64> = (0..k * m).map(|i| (i as f64).sqrt()).collect(); // [k][m]
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let mut c = vec![0.0; m * n];
        par_gemm(m, k, n, MatRef::row_major_t(&at, m), MatRef::row_major(&b, n), &mut c);

        let mut a = vec![0.0; m * k];
        for p in 0..k {
            for i in 0..m {
                a[i * k + p] = at[p * m + i];
            }
        }
        let want = naive(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
