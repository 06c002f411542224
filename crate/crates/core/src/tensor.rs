//! Minimal row-major matrix type and the linear-algebra kernels the encoder
//! needs. Weight matrices are stored `[out, in]` so both the forward product
//! and its transpose run on contiguous rows.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Matrix<S> {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Matrix<S> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elementwise product, in place.
    pub fn hadamard_assign(&mut self, other: &Matrix<S>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a * b;
        }
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Matrix<S>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

/// Dot product with eight independent accumulators so the reduction has no
/// serial dependency chain and vectorizes. Summation order is fixed, so
/// results are deterministic run to run.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [S::zero(); 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for i in 0..8 {
            lanes[i] = lanes[i] + ca[i] * cb[i];
        }
    }
    let mut acc = S::zero();
    for (&x, &y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        acc = acc + x * y;
    }
    let pairs = [
        lanes[0] + lanes[4],
        lanes[1] + lanes[5],
        lanes[2] + lanes[6],
        lanes[3] + lanes[7],
    ];
    acc + ((pairs[0] + pairs[2]) + (pairs[1] + pairs[3]))
}

/// `out += alpha * x`.
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], out: &mut [S]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + alpha * v;
    }
}

/// `y = x · wᵀ + b`, with `x: [T, in]`, `w: [out, in]`, `b: [out]`.
pub fn linear<S: Scalar>(x: &Matrix<S>, w: &Matrix<S>, b: &[S]) -> Matrix<S> {
    debug_assert_eq!(x.cols, w.cols);
    debug_assert_eq!(w.rows, b.len());
    let mut y = Matrix::zeros(x.rows, w.rows);
    for t in 0..x.rows {
        let xr = x.row(t);
        let yr = y.row_mut(t);
        for o in 0..w.rows {
            yr[o] = dot(xr, w.row(o)) + b[o];
        }
    }
    y
}

/// Gradient of [`linear`] w.r.t. its weights and bias:
/// `dw[o] += Σ_t dy[t][o] · x[t]`, `db[o] += Σ_t dy[t][o]`.
pub fn linear_backward_params<S: Scalar>(
    dy: &Matrix<S>,
    x: &Matrix<S>,
    dw: &mut Matrix<S>,
    db: &mut [S],
) {
    debug_assert_eq!(dy.rows, x.rows);
    debug_assert_eq!(dw.rows, dy.cols);
    debug_assert_eq!(dw.cols, x.cols);
    for t in 0..dy.rows {
        let dyr = dy.row(t);
        let xr = x.row(t);
        for o in 0..dy.cols {
            let g = dyr[o];
            if g != S::zero() {
                axpy(g, xr, dw.row_mut(o));
            }
            db[o] = db[o] + g;
        }
    }
}

/// Gradient of [`linear`] w.r.t. its input: `dx[t] += Σ_o dy[t][o] · w[o]`.
pub fn linear_backward_input<S: Scalar>(dy: &Matrix<S>, w: &Matrix<S>, dx: &mut Matrix<S>) {
    debug_assert_eq!(dy.cols, w.rows);
    debug_assert_eq!(dx.cols, w.cols);
    debug_assert_eq!(dx.rows, dy.rows);
    for t in 0..dy.rows {
        let dyr = dy.row(t);
        let dxr = dx.row_mut(t);
        for o in 0..w.rows {
            let g = dyr[o];
            if g != S::zero() {
                axpy(g, w.row(o), dxr);
            }
        }
    }
}
