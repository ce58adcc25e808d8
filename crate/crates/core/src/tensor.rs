//! Dense row-major `f64` matrices and a strided GEMM wrapper.

use alloc::vec;
use alloc::vec::Vec;

/// A dense row-major matrix. Vectors are stored as `1 x n` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self { rows: 1, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.rows, other.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies rows `start..end` into a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.rows);
        Tensor::from_vec(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    /// Reinterprets the buffer with a new shape of equal size.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Tensor {
        assert_eq!(rows * cols, self.data.len());
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Adds `bias` (length `cols`) to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for row in self.data.chunks_exact_mut(self.cols) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
    }

    /// Column sums accumulated into `out`.
    pub fn accumulate_col_sums(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.cols);
        for row in self.data.chunks_exact(self.cols) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
    }

    pub fn col_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.accumulate_col_sums(&mut out);
        let n = self.rows.max(1) as f64;
        out.iter_mut().for_each(|x| *x /= n);
        out
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn view(&self) -> View<'_> {
        View { data: &self.data, offset: 0, rows: self.rows, cols: self.cols, rs: self.cols, cs: 1 }
    }

    /// The transpose as a strided view (no copy).
    pub fn view_t(&self) -> View<'_> {
        self.view().t()
    }

    pub fn view_mut(&mut self) -> ViewMut<'_> {
        ViewMut { rows: self.rows, cols: self.cols, rs: self.cols, cs: 1, offset: 0, data: &mut self.data }
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(self.rows, rhs.cols);
        gemm(1.0, self.view(), rhs.view(), 0.0, out.view_mut());
        out
    }
}

/// A read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    data: &'a [f64],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        let v = Self { data, offset, rows, cols, rs, cs };
        v.check();
        v
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view exceeds buffer");
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    /// Columns `start..start + n`.
    pub fn cols_range(self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.cols);
        Self { offset: self.offset + start * self.cs, cols: n, ..self }
    }

    /// Rows `start..start + n`.
    pub fn rows_range(self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.rows);
        Self { offset: self.offset + start * self.rs, rows: n, ..self }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[self.offset + r * self.rs + c * self.cs]
    }
}

/// A mutable strided matrix view.
#[derive(Debug)]
pub struct ViewMut<'a> {
    data: &'a mut [f64],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> ViewMut<'a> {
    pub fn new(data: &'a mut [f64], offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = offset + (rows - 1) * rs + (cols - 1) * cs;
            assert!(last < data.len(), "view exceeds buffer");
        }
        Self { data, offset, rows, cols, rs, cs }
    }

    pub fn cols_range(self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.cols);
        Self { offset: self.offset + start * self.cs, cols: n, ..self }
    }

    pub fn rows_range(self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.rows);
        Self { offset: self.offset + start * self.rs, rows: n, ..self }
    }
}

/// `c = alpha * a * b + beta * c` over strided views.
///
/// When `beta == 0` the previous contents of `c` are ignored (NaNs included).
pub fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions differ");
    assert_eq!(a.rows, c.rows, "gemm output rows differ");
    assert_eq!(b.cols, c.cols, "gemm output cols differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for col in 0..n {
                let idx = c.offset + r * c.rs + col * c.cs;
                c.data[idx] = if beta == 0.0 { 0.0 } else { beta * c.data[idx] };
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked on construction, so all element
    // addresses reachable through (rows, cols, strides) lie inside their
    // slices. `c` is uniquely borrowed and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}
