/// Row-major dense matrix of `f64`.
///
/// Batches are stored feature-major: one row per feature, one column per
/// sample, so a kept weight `W[j, k]` touches two contiguous rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    /// Single column from a sample vector.
    pub fn column(x: &[f64]) -> Self {
        Self::from_vec(x.len(), 1, x.to_vec())
    }

    /// Feature-major batch from sample-major rows.
    pub fn from_samples<'a>(dim: usize, samples: impl ExactSizeIterator<Item = &'a [f64]>) -> Self {
        let n = samples.len();
        let mut m = Self::zeros(dim, n);
        for (b, s) in samples.enumerate() {
            assert_eq!(s.len(), dim);
            for (k, &v) in s.iter().enumerate() {
                m.data[k * n + b] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Column `j` as an owned vector.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm(
            1.0,
            View::new(&self.data, self.rows, self.cols),
            View::new(&other.data, other.rows, other.cols),
            0.0,
            &mut out.data,
        );
        out
    }
}

/// Borrowed matrix with arbitrary strides, used to express transposes.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `out = alpha * a * b + beta * out`, with `out` row-major and contiguous.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, out: &mut [f64]) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(out.len(), a.rows * b.cols);
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for o in out.iter_mut() {
            *o *= beta;
        }
        return;
    }
    // SAFETY: the asserts above pin every extent; strides come from the
    // constructors and address only in-bounds elements of each slice.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes without reassociation flags
    let mut acc = [0.0f64; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += x[4 * c + l] * y[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..x.len() {
        s += x[i] * y[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn gemm_with_transposes() {
        let a = Mat::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.7).sin()).collect());
        let b = Mat::from_vec(4, 2, (0..8).map(|i| (i as f64 * 1.3).cos()).collect());
        let want = naive(&a, &b);
        let got = a.matmul(&b);
        for (x, y) in want.data().iter().zip(got.data()) {
            assert!((x - y).abs() < 1e-14);
        }
        // (b^T a^T) = (a b)^T
        let mut t = vec![0.0; 2 * 3];
        gemm(
            1.0,
            View::new(b.data(), 4, 2).t(),
            View::new(a.data(), 3, 4).t(),
            0.0,
            &mut t,
        );
        for i in 0..3 {
            for j in 0..2 {
                assert!((t[j * 3 + i] - want.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dot_matches_naive() {
        let x: Vec<f64> = (0..13).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..13).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let want: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((dot(&x, &y) - want).abs() < 1e-12);
    }

    #[test]
    fn from_samples_is_feature_major() {
        let s = [vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let m = Mat::from_samples(2, s.iter().map(|v| v.as_slice()));
        assert_eq!(m.row(0), [1.0, 3.0, 5.0]);
        assert_eq!(m.col(1), [3.0, 4.0]);
    }
}
