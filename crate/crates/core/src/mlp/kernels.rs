//! Dense row-major matrix product used by every MLP pass.
//!
//! Each output element is the sum over the inner dimension accumulated in
//! ascending index order, whatever the tile it lands in. A row evaluated alone
//! is therefore bit-identical to the same row evaluated inside any batch, and
//! the vectorized and portable paths agree bit for bit (no fused multiply-add is
//! emitted).

const TILE_ROWS: usize = 6;
const TILE_COLS: usize = 32;
/// Inner-dimension block; a `K_BLOCK × TILE_COLS` slab of `b` stays in L1
/// while every row tile passes over it.
const K_BLOCK: usize = 128;

/// Accumulates `k0..k1` of the inner sum into one `R × C` output tile. When
/// `k0 > 0` the tile resumes from the partial sums already in `out`, which
/// keeps the accumulation order identical to an unblocked loop.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile<const R: usize, const C: usize>(
    a: &[f64],
    row0: usize,
    inner: usize,
    (k0, k1): (usize, usize),
    b: &[f64],
    col0: usize,
    cols: usize,
    out: &mut [f64],
) {
    let mut acc = [[0.0f64; C]; R];
    if k0 > 0 {
        for r in 0..R {
            acc[r].copy_from_slice(&out[(row0 + r) * cols + col0..(row0 + r) * cols + col0 + C]);
        }
    }
    for k in k0..k1 {
        let bk = &b[k * cols + col0..k * cols + col0 + C];
        for r in 0..R {
            let x = a[(row0 + r) * inner + k];
            for c in 0..C {
                acc[r][c] += x * bk[c];
            }
        }
    }
    for r in 0..R {
        out[(row0 + r) * cols + col0..(row0 + r) * cols + col0 + C].copy_from_slice(&acc[r]);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn column_strip<const C: usize>(
    a: &[f64],
    rows: usize,
    inner: usize,
    ks: (usize, usize),
    b: &[f64],
    col0: usize,
    cols: usize,
    out: &mut [f64],
) {
    let mut row = 0;
    while row + TILE_ROWS <= rows {
        tile::<TILE_ROWS, C>(a, row, inner, ks, b, col0, cols, out);
        row += TILE_ROWS;
    }
    while row < rows {
        tile::<1, C>(a, row, inner, ks, b, col0, cols, out);
        row += 1;
    }
}

#[inline(always)]
fn matmul_impl(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize, out: &mut [f64]) {
    assert_eq!(a.len(), rows * inner);
    assert_eq!(b.len(), inner * cols);
    assert_eq!(out.len(), rows * cols);
    if inner == 0 {
        out.fill(0.0);
        return;
    }
    let mut k0 = 0;
    while k0 < inner {
        let ks = (k0, (k0 + K_BLOCK).min(inner));
        let mut col = 0;
        while col + TILE_COLS <= cols {
            column_strip::<TILE_COLS>(a, rows, inner, ks, b, col, cols, out);
            col += TILE_COLS;
        }
        while col + 4 <= cols {
            column_strip::<4>(a, rows, inner, ks, b, col, cols, out);
            col += 4;
        }
        while col < cols {
            column_strip::<1>(a, rows, inner, ks, b, col, cols, out);
            col += 1;
        }
        k0 = ks.1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,avx512f")]
unsafe fn matmul_wide(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize, out: &mut [f64]) {
    matmul_impl(a, rows, inner, b, cols, out)
}

#[cfg(target_arch = "x86_64")]
fn wide_available() -> bool {
    use std::sync::OnceLock;
    static WIDE: OnceLock<bool> = OnceLock::new();
    *WIDE.get_or_init(|| std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("avx512f"))
}

/// `out = a · b` with `a: rows × inner`, `b: inner × cols`, all row-major.
pub(crate) fn matmul(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if wide_available() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { matmul_wide(a, rows, inner, b, cols, out) };
    }
    matmul_impl(a, rows, inner, b, cols, out)
}

/// Row-major transpose of an `rows × cols` matrix.
pub(crate) fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = m[i * cols + j];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    fn naive(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let mut s = 0.0;
                for k in 0..inner {
                    s += a[i * inner + k] * b[k * cols + j];
                }
                out[i * cols + j] = s;
            }
        }
        out
    }

    #[test]
    fn matches_sequential_sum_bitwise() {
        for &(rows, inner, cols) in &[(7, 19, 37), (1, 3, 1), (9, 64, 509), (4, 5, 16)] {
            let a = pseudo(rows * inner, 1 + rows as u64);
            let b = pseudo(inner * cols, 2 + cols as u64);
            let mut out = vec![0.0; rows * cols];
            matmul(&a, rows, inner, &b, cols, &mut out);
            assert_eq!(out, naive(&a, rows, inner, &b, cols));
        }
    }

    #[test]
    fn single_row_equals_batched_row() {
        let (rows, inner, cols) = (11, 33, 45);
        let a = pseudo(rows * inner, 3);
        let b = pseudo(inner * cols, 4);
        let mut out = vec![0.0; rows * cols];
        matmul(&a, rows, inner, &b, cols, &mut out);
        for i in 0..rows {
            let mut single = vec![0.0; cols];
            matmul(&a[i * inner..(i + 1) * inner], 1, inner, &b, cols, &mut single);
            assert_eq!(&single[..], &out[i * cols..(i + 1) * cols]);
        }
    }

    #[test]
    fn portable_path_agrees_with_dispatched() {
        let (rows, inner, cols) = (6, 40, 70);
        let a = pseudo(rows * inner, 5);
        let b = pseudo(inner * cols, 6);
        let mut x = vec![0.0; rows * cols];
        let mut y = vec![0.0; rows * cols];
        matmul(&a, rows, inner, &b, cols, &mut x);
        matmul_impl(&a, rows, inner, &b, cols, &mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn transpose_round_trip() {
        let m = pseudo(12, 7);
        let t = transpose(&m, 3, 4);
        assert_eq!(t[1 * 3 + 2], m[2 * 4 + 1]);
        assert_eq!(transpose(&t, 4, 3), m);
    }
}
