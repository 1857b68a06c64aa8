//! Row-major matrix multiply with a fixed accumulation order.
//!
//! Every output element is accumulated as `((c0 + a[i,0]·b[0,j]) + a[i,1]·b[1,j]) + …`
//! with `k` strictly increasing, whatever the blocking, the SIMD width picked at
//! runtime, or the number of rows/columns in the call. Multiplies and adds are
//! never fused, so results are bit-identical across CPUs with and without AVX.

use crate::scalar::Scalar;

const MR: usize = 4;
const NR: usize = 32;

/// `c = a·b` (or `c += a·b` when `accumulate`), with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx512(m, k, n, a, b, c, accumulate) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx2(m, k, n, a, b, c, accumulate) };
            return;
        }
    }
    kernel(m, k, n, a, b, c, accumulate);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_avx512<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    kernel(m, k, n, a, b, c, accumulate)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    kernel(m, k, n, a, b, c, accumulate)
}

#[inline(always)]
fn kernel<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    let mut packed = vec![T::zero(); KC.min(k) * NR];
    let mut j0 = 0;
    while j0 + NR <= n {
        panel::<T, NR>(m, k, n, j0, a, b, c, accumulate, &mut packed);
        j0 += NR;
    }
    if j0 + NR / 2 <= n {
        panel::<T, { NR / 2 }>(m, k, n, j0, a, b, c, accumulate, &mut packed);
        j0 += NR / 2;
    }
    if j0 + NR / 4 <= n {
        panel::<T, { NR / 4 }>(m, k, n, j0, a, b, c, accumulate, &mut packed);
        j0 += NR / 4;
    }
    if j0 < n {
        for i in 0..m {
            row_tail(i, j0, k, n, a, b, c, accumulate);
        }
    }
}

/// Depth of one packed slice of `b`. Splitting `k` keeps every element's sum in
/// increasing-`k` order: later slices continue from the stored partial sums.
const KC: usize = 256;

/// Columns `j0..j0 + W` of every output row.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn panel<T: Scalar, const W: usize>(
    m: usize,
    k: usize,
    n: usize,
    j0: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
    packed: &mut [T],
) {
    let mut k0 = 0;
    while k0 < k {
        let kc = KC.min(k - k0);
        // Contiguous copy of b[k0..k0+kc, j0..j0+W]: avoids cache-set conflicts from large row strides.
        for p in 0..kc {
            let src = (k0 + p) * n + j0;
            packed[p * W..(p + 1) * W].copy_from_slice(&b[src..src + W]);
        }
        let bp = &packed[..kc * W];
        let acc = accumulate || k0 > 0;
        let mut i0 = 0;
        while i0 + MR <= m {
            block_full::<T, W>(i0, j0, k0, kc, k, n, a, bp, c, acc);
            i0 += MR;
        }
        for i in i0..m {
            row_full::<T, W>(i, j0, k0, kc, k, n, a, bp, c, acc);
        }
        k0 += kc;
    }
}

/// `MR` rows of a `W`-wide panel over depth `k0..k0 + kc`; `bp` is the packed slice.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn block_full<T: Scalar, const W: usize>(
    i0: usize,
    j0: usize,
    k0: usize,
    kc: usize,
    k: usize,
    n: usize,
    a: &[T],
    bp: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let mut acc = [[T::zero(); W]; MR];
    if accumulate {
        for (r, row) in acc.iter_mut().enumerate() {
            let off = (i0 + r) * n + j0;
            row.copy_from_slice(&c[off..off + W]);
        }
    }
    let arow = |r: usize| &a[(i0 + r) * k + k0..(i0 + r) * k + k0 + kc];
    let (a0, a1, a2, a3) = (arow(0), arow(1), arow(2), arow(3));
    for p in 0..kc {
        let brow: &[T; W] = bp[p * W..(p + 1) * W].try_into().unwrap();
        let (v0, v1, v2, v3) = (a0[p], a1[p], a2[p], a3[p]);
        for j in 0..W {
            acc[0][j] += v0 * brow[j];
            acc[1][j] += v1 * brow[j];
            acc[2][j] += v2 * brow[j];
            acc[3][j] += v3 * brow[j];
        }
    }
    for (r, row) in acc.iter().enumerate() {
        let off = (i0 + r) * n + j0;
        c[off..off + W].copy_from_slice(row);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn row_full<T: Scalar, const W: usize>(
    i: usize,
    j0: usize,
    k0: usize,
    kc: usize,
    k: usize,
    n: usize,
    a: &[T],
    bp: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let off = i * n + j0;
    let mut acc = [T::zero(); W];
    if accumulate {
        acc.copy_from_slice(&c[off..off + W]);
    }
    let arow = &a[i * k + k0..i * k + k0 + kc];
    for (p, &v) in arow.iter().enumerate() {
        let brow: &[T; W] = bp[p * W..(p + 1) * W].try_into().unwrap();
        for j in 0..W {
            acc[j] += v * brow[j];
        }
    }
    c[off..off + W].copy_from_slice(&acc);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn row_tail<T: Scalar>(
    i: usize,
    j0: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let w = n - j0;
    let off = i * n + j0;
    let mut acc = [T::zero(); NR];
    if accumulate {
        acc[..w].copy_from_slice(&c[off..off + w]);
    }
    let arow = &a[i * k..(i + 1) * k];
    for (p, &v) in arow.iter().enumerate() {
        let brow = &b[p * n + j0..p * n + n];
        for j in 0..w {
            acc[j] += v * brow[j];
        }
    }
    c[off..off + w].copy_from_slice(&acc[..w]);
}

/// Reference triple loop, same accumulation order. Test-only oracle.
#[cfg(test)]
pub(crate) fn gemm_naive<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = T::zero();
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(len: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn bit_identical_to_naive_for_awkward_sizes() {
        for &(m, k, n) in &[(1, 1, 1), (3, 7, 5), (4, 9, 16), (9, 13, 37), (17, 64, 33), (5, 0, 3), (6, 600, 41), (3, 257, 70)] {
            let a = fill(m * k, 1);
            let b = fill(k * n, 2);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a, &b, &mut c, false);
            let want = gemm_naive(m, k, n, &a, &b);
            assert_eq!(c, want, "m={m} k={k} n={n}");
        }
    }

    #[test]
    fn accumulate_adds_onto_existing() {
        let (m, k, n) = (5, 4, 19);
        let a = fill(m * k, 3);
        let b = fill(k * n, 4);
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, &a, &b, &mut c, true);
        let plain = gemm_naive(m, k, n, &a, &b);
        for (got, p) in c.iter().zip(&plain) {
            assert!((got - (1.0 + p)).abs() < 1e-14);
        }
    }

    #[test]
    fn generic_kernel_matches_dispatched() {
        let (m, k, n) = (10, 33, 50);
        let a: Vec<f32> = fill(m * k, 5).into_iter().map(|v| v as f32).collect();
        let b: Vec<f32> = fill(k * n, 6).into_iter().map(|v| v as f32).collect();
        let mut fast = vec![0.0f32; m * n];
        let mut slow = vec![0.0f32; m * n];
        gemm(m, k, n, &a, &b, &mut fast, false);
        kernel(m, k, n, &a, &b, &mut slow, false);
        assert_eq!(fast, slow);
    }
}
