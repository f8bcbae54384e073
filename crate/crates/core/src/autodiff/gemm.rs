/// `c = beta * c + a * b` for an `m x k` by `k x n` product with explicit
/// `(row, column)` strides, so transposed operands need no copies.
///
/// Panics if any slice is too short for the extents it is addressed with.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    c_strides: (isize, isize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(extent(m, k, a_strides) <= a.len(), "gemm: lhs too short");
    assert!(extent(k, n, b_strides) <= b.len(), "gemm: rhs too short");
    assert!(extent(m, n, c_strides) <= c.len(), "gemm: output too short");
    // SAFETY: the asserts above bound every address touched by the kernel;
    // strides are non-negative so no element precedes the slice start.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_strides.0,
            c_strides.1,
        );
    }
}

fn extent(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    debug_assert!(rs >= 0 && cs >= 0);
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}
