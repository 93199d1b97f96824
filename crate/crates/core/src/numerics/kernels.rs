//! Strided GEMM on top of `matrixmultiply`.

/// Row-major matrix view with explicit strides, so transposes cost nothing.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    pub fn normal(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `out[m×n] = a[m×k] · b[k×n] + beta · out`, with `out` dense row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, out: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(out.len() >= m * n);
    if k == 0 {
        out[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    assert!(a.max_index(m, k) < a.data.len());
    assert!(b.max_index(k, n) < b.data.len());
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `out` is a distinct exclusive borrow of at least m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
