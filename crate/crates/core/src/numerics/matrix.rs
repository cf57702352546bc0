//! Dense row-major matrices over `f64`.
//!
//! Everything in the Q-network is small (hidden size 64, a few hundred
//! batch columns), so a plain contiguous buffer with hand-rolled kernels
//! beats pulling in a BLAS. The three kernels that dominate training
//! (`matmul_into`, `grad_weights_into`, `grad_input_into`) are written so
//! the inner loop runs over contiguous columns and vectorizes.

use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Row-major dense matrix. A vector is a single-column matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                op: "from_vec",
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Single-column matrix from a slice.
    pub fn column(values: &[f64]) -> Self {
        Matrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn add_in_place(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `out = self * x`, with `self: r×k`, `x: k×b`, `out: r×b`.
    /// Accumulates over k in blocks of four so each pass over an output
    /// row issues four fused multiply-adds per store.
    pub fn matmul_into(&self, x: &Matrix, out: &mut Matrix) {
        let (r, k) = (self.rows, self.cols);
        let b = x.cols;
        debug_assert_eq!(x.rows, k);
        debug_assert_eq!(out.shape(), (r, b));
        if b == 1 {
            // matvec: dot of contiguous rows against the vector
            for i in 0..r {
                let w_row = &self.data[i * k..(i + 1) * k];
                let (mut a0, mut a1, mut a2, mut a3) = (0.0_f64, 0.0, 0.0, 0.0);
                let mut j = 0;
                while j + 4 <= k {
                    a0 = w_row[j].mul_add(x.data[j], a0);
                    a1 = w_row[j + 1].mul_add(x.data[j + 1], a1);
                    a2 = w_row[j + 2].mul_add(x.data[j + 2], a2);
                    a3 = w_row[j + 3].mul_add(x.data[j + 3], a3);
                    j += 4;
                }
                while j < k {
                    a0 = w_row[j].mul_add(x.data[j], a0);
                    j += 1;
                }
                out.data[i] = (a0 + a1) + (a2 + a3);
            }
            return;
        }
        out.data.fill(0.0);
        let mut i = 0;
        // two output rows at a time share the loads of four x rows
        while i + 2 <= r {
            let (head, tail) = out.data.split_at_mut((i + 1) * b);
            let out0 = &mut head[i * b..];
            let out1 = &mut tail[..b];
            let w0_row = &self.data[i * k..(i + 1) * k];
            let w1_row = &self.data[(i + 1) * k..(i + 2) * k];
            let mut j = 0;
            while j + 4 <= k {
                let x0 = &x.data[j * b..(j + 1) * b];
                let x1 = &x.data[(j + 1) * b..(j + 2) * b];
                let x2 = &x.data[(j + 2) * b..(j + 3) * b];
                let x3 = &x.data[(j + 3) * b..(j + 4) * b];
                let (a0, a1, a2, a3) = (w0_row[j], w0_row[j + 1], w0_row[j + 2], w0_row[j + 3]);
                let (b0, b1, b2, b3) = (w1_row[j], w1_row[j + 1], w1_row[j + 2], w1_row[j + 3]);
                for c in 0..b {
                    let (v0, v1, v2, v3) = (x0[c], x1[c], x2[c], x3[c]);
                    let s = a0.mul_add(v0, out0[c]);
                    let s = a1.mul_add(v1, s);
                    let s = a2.mul_add(v2, s);
                    out0[c] = a3.mul_add(v3, s);
                    let t = b0.mul_add(v0, out1[c]);
                    let t = b1.mul_add(v1, t);
                    let t = b2.mul_add(v2, t);
                    out1[c] = b3.mul_add(v3, t);
                }
                j += 4;
            }
            while j < k {
                let x0 = &x.data[j * b..(j + 1) * b];
                let (a0, b0) = (w0_row[j], w1_row[j]);
                for c in 0..b {
                    out0[c] = a0.mul_add(x0[c], out0[c]);
                    out1[c] = b0.mul_add(x0[c], out1[c]);
                }
                j += 1;
            }
            i += 2;
        }
        if i < r {
            let w_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out.data[i * b..(i + 1) * b];
            for (j, &w0) in w_row.iter().enumerate() {
                let x0 = &x.data[j * b..(j + 1) * b];
                for c in 0..b {
                    out_row[c] = w0.mul_add(x0[c], out_row[c]);
                }
            }
        }
    }

    /// Accumulates `dW += dy * x^T` where `dy: r×b`, `x: k×b`, `dW: r×k`.
    /// Four output columns share one pass over the dy row so the reduction
    /// chains pipeline.
    pub fn grad_weights_into(dy: &Matrix, x: &Matrix, dw: &mut Matrix) {
        let (r, b) = (dy.rows, dy.cols);
        let k = x.rows;
        debug_assert_eq!(x.cols, b);
        debug_assert_eq!(dw.shape(), (r, k));
        if b == 1 {
            // rank-1 update dW += dy xᵀ, contiguous over each dW row
            for i in 0..r {
                let d = dy.data[i];
                let dw_row = &mut dw.data[i * k..(i + 1) * k];
                for j in 0..k {
                    dw_row[j] = d.mul_add(x.data[j], dw_row[j]);
                }
            }
            return;
        }
        // dW += dy · xᵀ runs through the wide matmul kernel against a
        // scratch transpose of x, which keeps the reduction vectorized
        TRANSPOSE_SCRATCH.with(|cell| {
            let mut scratch = cell.borrow_mut();
            scratch.clear();
            scratch.resize(b * k, 0.0);
            // 8×8 blocked transpose of x [k×b] into scratch [b×k]
            let bs = 8;
            let mut j0 = 0;
            while j0 < k {
                let jmax = (j0 + bs).min(k);
                let mut c0 = 0;
                while c0 < b {
                    let cmax = (c0 + bs).min(b);
                    for j in j0..jmax {
                        let x_row = &x.data[j * b..(j + 1) * b];
                        for c in c0..cmax {
                            scratch[c * k + j] = x_row[c];
                        }
                    }
                    c0 = cmax;
                }
                j0 = jmax;
            }
            matmul_acc(&dy.data, r, b, &scratch, k, &mut dw.data);
        });
    }

    /// Accumulates `dx += W^T * dy` where `W: r×k`, `dy: r×b`, `dx: k×b`.
    /// Two W rows are folded per pass over each dx row.
    pub fn grad_input_into(w: &Matrix, dy: &Matrix, dx: &mut Matrix) {
        let (r, k) = (w.rows, w.cols);
        let b = dy.cols;
        debug_assert_eq!(dy.rows, r);
        debug_assert_eq!(dx.shape(), (k, b));
        if b == 1 {
            // dx += Wᵀ dy as row-wise axpy over contiguous W rows
            for i in 0..r {
                let d = dy.data[i];
                let w_row = &w.data[i * k..(i + 1) * k];
                for j in 0..k {
                    dx.data[j] = d.mul_add(w_row[j], dx.data[j]);
                }
            }
            return;
        }
        let mut i = 0;
        // four W rows folded per pass over each dx row: fewer dx writes
        while i + 4 <= r {
            let w0_row = &w.data[i * k..(i + 1) * k];
            let w1_row = &w.data[(i + 1) * k..(i + 2) * k];
            let w2_row = &w.data[(i + 2) * k..(i + 3) * k];
            let w3_row = &w.data[(i + 3) * k..(i + 4) * k];
            let dy0 = &dy.data[i * b..(i + 1) * b];
            let dy1 = &dy.data[(i + 1) * b..(i + 2) * b];
            let dy2 = &dy.data[(i + 2) * b..(i + 3) * b];
            let dy3 = &dy.data[(i + 3) * b..(i + 4) * b];
            for j in 0..k {
                let (wa, wb, wc, wd) = (w0_row[j], w1_row[j], w2_row[j], w3_row[j]);
                let dx_row = &mut dx.data[j * b..(j + 1) * b];
                for c in 0..b {
                    let s = wa.mul_add(dy0[c], dx_row[c]);
                    let s = wb.mul_add(dy1[c], s);
                    let s = wc.mul_add(dy2[c], s);
                    dx_row[c] = wd.mul_add(dy3[c], s);
                }
            }
            i += 4;
        }
        while i + 2 <= r {
            let w0_row = &w.data[i * k..(i + 1) * k];
            let w1_row = &w.data[(i + 1) * k..(i + 2) * k];
            let dy0 = &dy.data[i * b..(i + 1) * b];
            let dy1 = &dy.data[(i + 1) * b..(i + 2) * b];
            for j in 0..k {
                let (wa, wb) = (w0_row[j], w1_row[j]);
                let dx_row = &mut dx.data[j * b..(j + 1) * b];
                for c in 0..b {
                    dx_row[c] = wb.mul_add(dy1[c], wa.mul_add(dy0[c], dx_row[c]));
                }
            }
            i += 2;
        }
        if i < r {
            let w_row = &w.data[i * k..(i + 1) * k];
            let dy_row = &dy.data[i * b..(i + 1) * b];
            for j in 0..k {
                let wj = w_row[j];
                let dx_row = &mut dx.data[j * b..(j + 1) * b];
                for c in 0..b {
                    dx_row[c] = wj.mul_add(dy_row[c], dx_row[c]);
                }
            }
        }
    }

    /// Adds a column vector to every column of `self`.
    pub fn add_col_broadcast(&mut self, bias: &Matrix) {
        debug_assert_eq!(bias.cols, 1);
        debug_assert_eq!(bias.rows, self.rows);
        for i in 0..self.rows {
            let bv = bias.data[i];
            for x in self.row_mut(i) {
                *x += bv;
            }
        }
    }
}


thread_local! {
    static TRANSPOSE_SCRATCH: std::cell::RefCell<Vec<f64>> =
        const { std::cell::RefCell::new(Vec::new()) };
}

/// out += a·bm, all row-major; same blocking as `matmul_into`.
fn matmul_acc(a: &[f64], r: usize, m: usize, bm: &[f64], n: usize, out: &mut [f64]) {
    let mut i = 0;
    while i + 2 <= r {
        let (head, tail) = out.split_at_mut((i + 1) * n);
        let out0 = &mut head[i * n..];
        let out1 = &mut tail[..n];
        let a0_row = &a[i * m..(i + 1) * m];
        let a1_row = &a[(i + 1) * m..(i + 2) * m];
        let mut j = 0;
        while j + 4 <= m {
            let b0 = &bm[j * n..(j + 1) * n];
            let b1 = &bm[(j + 1) * n..(j + 2) * n];
            let b2 = &bm[(j + 2) * n..(j + 3) * n];
            let b3 = &bm[(j + 3) * n..(j + 4) * n];
            let (p0, p1, p2, p3) = (a0_row[j], a0_row[j + 1], a0_row[j + 2], a0_row[j + 3]);
            let (q0, q1, q2, q3) = (a1_row[j], a1_row[j + 1], a1_row[j + 2], a1_row[j + 3]);
            for c in 0..n {
                let (v0, v1, v2, v3) = (b0[c], b1[c], b2[c], b3[c]);
                let su = p0.mul_add(v0, out0[c]);
                let su = p1.mul_add(v1, su);
                let su = p2.mul_add(v2, su);
                out0[c] = p3.mul_add(v3, su);
                let tv = q0.mul_add(v0, out1[c]);
                let tv = q1.mul_add(v1, tv);
                let tv = q2.mul_add(v2, tv);
                out1[c] = q3.mul_add(v3, tv);
            }
            j += 4;
        }
        while j < m {
            let b0 = &bm[j * n..(j + 1) * n];
            let (p0, q0) = (a0_row[j], a1_row[j]);
            for c in 0..n {
                out0[c] = p0.mul_add(b0[c], out0[c]);
                out1[c] = q0.mul_add(b0[c], out1[c]);
            }
            j += 1;
        }
        i += 2;
    }
    if i < r {
        let a_row = &a[i * m..(i + 1) * m];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, &p) in a_row.iter().enumerate() {
            let b0 = &bm[j * n..(j + 1) * n];
            for c in 0..n {
                out_row[c] = p.mul_add(b0[c], out_row[c]);
            }
        }
    }
}
