//! Thin safe layer over `matrixmultiply::dgemm`.

/// Strided matrix view: element `(i, j)` lives at `offset + i*rs + j*cs`.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Row-major `rows x cols` starting at `offset`, optionally transposed.
    pub fn dense(offset: usize, cols: usize, transposed: bool) -> Self {
        if transposed {
            View { offset, rs: 1, cs: cols }
        } else {
            View { offset, rs: cols, cs: 1 }
        }
    }

    /// Row-major block within a wider matrix of `stride` columns.
    pub fn block(offset: usize, stride: usize) -> Self {
        View { offset, rs: stride, cs: 1 }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + rows.saturating_sub(1) * self.rs + cols.saturating_sub(1) * self.cs
    }
}

/// `c = beta * c + a * b` with `a: m x k`, `b: k x n`, `c: m x n` (as views).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(cv.max_index(m, n) < c.len(), "gemm: c view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[cv.offset + i * cv.rs + j * cv.cs] *= beta;
            }
        }
        return;
    }
    assert!(av.max_index(m, k) < a.len(), "gemm: a view out of bounds");
    assert!(bv.max_index(k, n) < b.len(), "gemm: b view out of bounds");
    // SAFETY: all three views were bounds-checked above; `c` is a unique borrow
    // and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
