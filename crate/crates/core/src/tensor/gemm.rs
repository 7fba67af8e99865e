use rayon::prelude::*;

/// Row block used to split large products across threads. Fixed, so the
/// per-element reduction order never depends on the thread count.
const ROW_BLOCK: usize = 64;

/// `c[m x n] = a[m x k] * b[k x n]` (or `+=` when `accumulate`), with
/// arbitrary strides on `a` and `b` and a dense row-major `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = a_strides;
    let (rsb, csb) = b_strides;
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    let beta = if accumulate { 1.0 } else { 0.0 };
    let run = |rows: usize, a_off: usize, c_block: &mut [f64]| {
        // SAFETY: the asserts above bound every index the kernel touches:
        // rows * n elements of c_block, and a/b within their strided extents.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a.as_ptr().add(a_off),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c_block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if m <= ROW_BLOCK || m * k * n < 1 << 16 {
        run(m, 0, &mut c[..m * n]);
    } else {
        c[..m * n]
            .par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(i, block)| run(block.len() / n, i * ROW_BLOCK * rsa, block));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_and_transposes() {
        let (m, k, n) = (150, 37, 23);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 5) % 11) as f64 - 5.0).collect();
        let want = naive(m, k, n, &a, &b);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, (k, 1), &b, (n, 1), &mut c, false);
        assert_eq!(c, want);
        // b stored transposed ([n x k]) and read through strides.
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut c2 = vec![1.0; m * n];
        gemm(m, k, n, &a, (k, 1), &bt, (1, k), &mut c2, true);
        for (x, y) in c2.iter().zip(&want) {
            assert_eq!(*x, y + 1.0);
        }
    }
}
