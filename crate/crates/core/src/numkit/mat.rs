//! Row-major matrices and the handful of product kernels the networks need.
//!
//! Parallel kernels split over disjoint output rows and keep a fixed
//! summation order per element, so results are bitwise identical regardless
//! of thread count.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Work threshold (multiply-adds) below which kernels stay single-threaded.
const PAR_THRESHOLD: usize = 1 << 19;

/// Rows per parallel task; keeps the task grain coarse enough that rayon
/// dispatch overhead stays negligible.
const MIN_ROWS_PER_TASK: usize = 64;

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self[r, :] += rhs` for every row.
    pub fn add_row_vector(&mut self, rhs: &[f64]) {
        debug_assert_eq!(rhs.len(), self.cols);
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (x, b) in row.iter_mut().zip(rhs) {
                *x += b;
            }
        }
    }

    /// Column sums as a vector of length `cols`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

/// Accumulation kernel shared by every product: each output row is built by
/// axpy steps over contiguous slices, so the per-element summation order is
/// fixed (ascending k) and the inner loop vectorizes without reassociating
/// any floating-point reduction.
fn transpose(a: &Mat) -> Mat {
    let mut t = Mat::zeros(a.cols, a.rows);
    for r in 0..a.rows {
        let row = a.row(r);
        for (c, v) in row.iter().enumerate() {
            t.data[c * a.rows + r] = *v;
        }
    }
    t
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Register-tile shape of the product microkernels. Accumulators live in
/// registers across the whole reduction and hit memory once per tile, with
/// the per-element summation order kept ascending in the reduction index.
const MR: usize = 4;
const NR: usize = 16;

/// `C[r0+q, jc..jc+NR] += sum_l A[r0+q, l] * B[l, jc..jc+NR]` for q < MR.
#[inline]
fn nn_tile(c_panel: &mut [f64], n: usize, a: &Mat, r0: usize, b: &Mat, jc: usize) {
    let mut acc = [[0.0f64; NR]; MR];
    let k = b.rows;
    let ar: [&[f64]; MR] =
        [&a.row(r0)[..k], &a.row(r0 + 1)[..k], &a.row(r0 + 2)[..k], &a.row(r0 + 3)[..k]];
    for l in 0..k {
        let br = &b.row(l)[jc..jc + NR];
        let avs = [ar[0][l], ar[1][l], ar[2][l], ar[3][l]];
        for q in 0..MR {
            let av = avs[q];
            for x in 0..NR {
                acc[q][x] += av * br[x];
            }
        }
    }
    for q in 0..MR {
        let dst = &mut c_panel[q * n + jc..q * n + jc + NR];
        for x in 0..NR {
            dst[x] += acc[q][x];
        }
    }
}

/// One panel of up to MR consecutive C rows.
fn nn_panel(c_panel: &mut [f64], n: usize, a: &Mat, r0: usize, rows: usize, b: &Mat) {
    let mut jc = 0;
    if rows == MR {
        while jc + NR <= n {
            nn_tile(c_panel, n, a, r0, b, jc);
            jc += NR;
        }
    }
    if jc < n {
        // Edge tiles: plain axpy accumulation, same reduction order.
        for l in 0..b.rows {
            let br = &b.row(l)[jc..];
            for r in 0..rows {
                let av = a.get(r0 + r, l);
                axpy(&mut c_panel[r * n + jc..(r + 1) * n], av, br);
            }
        }
    }
}

fn nn_into(c: &mut Mat, a: &Mat, b: &Mat) {
    let n = b.cols;
    let fill = |(blk, out): (usize, &mut [f64])| {
        nn_panel(out, n, a, blk * MR, out.len() / n, b);
    };
    if a.rows * a.cols * n >= PAR_THRESHOLD && a.rows > MR {
        c.data
            .par_chunks_mut(MR * n)
            .with_min_len((MIN_ROWS_PER_TASK / MR).max(1))
            .enumerate()
            .for_each(fill);
    } else {
        c.data.chunks_mut(MR * n).enumerate().for_each(fill);
    }
}

/// `C[m x n] = A[m x k] * B[n x k]^T`.
///
/// The layer forward shape (`Y = X W^T`). Large shapes are routed through
/// the register-tiled transposed kernel; the per-element summation order
/// (ascending k) is identical on every path.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.cols {
        return Err(Error::Shape(format!(
            "matmul_nt: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if a.rows * a.cols * b.rows >= PAR_THRESHOLD {
        Ok(tn_core(&transpose(a), &transpose(b)))
    } else {
        let bt = transpose(b);
        let mut c = Mat::zeros(a.rows, b.rows);
        nn_into(&mut c, a, &bt);
        Ok(c)
    }
}

/// `C[m x n] = A[m x k] * B[k x n]`.
pub fn matmul_nn(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul_nn: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if a.rows * a.cols * b.cols >= PAR_THRESHOLD {
        Ok(tn_core(&transpose(a), b))
    } else {
        let mut c = Mat::zeros(a.rows, b.cols);
        nn_into(&mut c, a, b);
        Ok(c)
    }
}

/// `C[n x p] = A[m x n]^T * B[m x p]`.
///
/// The weight-gradient shape (`dW = dY^T X`). Threads own disjoint row
/// ranges of `C` and scan the batch dimension in ascending order.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.rows != b.rows {
        return Err(Error::Shape(format!(
            "matmul_tn: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(tn_core(a, b))
}

fn tn_core(a: &Mat, b: &Mat) -> Mat {
    let (m, n, p) = (a.rows, a.cols, b.cols);
    let mut c = Mat::zeros(n, p);
    let work = m * n * p;
    // Same register tiling as nn_into; the reduction index is the batch
    // dimension (ascending r per element).
    let tn_panel = |out: &mut [f64], j0: usize, rows_here: usize| {
        let mut jc = 0;
        if rows_here == MR {
            while jc + NR <= p {
                let mut acc = [[0.0f64; NR]; MR];
                for r in 0..m {
                    let ar = &a.row(r)[j0..j0 + MR];
                    let br = &b.row(r)[jc..jc + NR];
                    for (q, &av) in ar.iter().enumerate() {
                        for x in 0..NR {
                            acc[q][x] += av * br[x];
                        }
                    }
                }
                for q in 0..MR {
                    let dst = &mut out[q * p + jc..q * p + jc + NR];
                    for x in 0..NR {
                        dst[x] += acc[q][x];
                    }
                }
                jc += NR;
            }
        }
        if jc < p {
            for r in 0..m {
                let br = &b.row(r)[jc..];
                for local in 0..rows_here {
                    let av = a.get(r, j0 + local);
                    axpy(&mut out[local * p + jc..(local + 1) * p], av, br);
                }
            }
        }
    };
    if work >= PAR_THRESHOLD && n > MR {
        c.data
            .par_chunks_mut(MR * p)
            .with_min_len((MIN_ROWS_PER_TASK / MR).max(1))
            .enumerate()
            .for_each(|(blk, out)| {
                let rows_here = out.len() / p;
                tn_panel(out, blk * MR, rows_here);
            });
    } else {
        for (blk, out) in c.data.chunks_mut(MR * p).enumerate() {
            let rows_here = out.len() / p;
            tn_panel(out, blk * MR, rows_here);
        }
    }
    c
}

/// `y = W x + b` for a single input vector, without scratch allocation.
/// Four-way unrolled accumulators: a fixed order that differs from the
/// batched kernels in final-ulp rounding, so single-sample and batched
/// passes should not be compared bitwise.
pub fn matvec_bias_into(w: &Mat, x: &[f64], bias: &[f64], y: &mut Vec<f64>) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, bias.len());
    y.clear();
    for (o, b) in bias.iter().enumerate() {
        let row = w.row(o);
        let mut acc = [0.0f64; 4];
        let chunks = x.len() / 4;
        for i in 0..chunks {
            let j = 4 * i;
            acc[0] += row[j] * x[j];
            acc[1] += row[j + 1] * x[j + 1];
            acc[2] += row[j + 2] * x[j + 2];
            acc[3] += row[j + 3] * x[j + 3];
        }
        let mut tail = 0.0;
        for j in 4 * chunks..x.len() {
            tail += row[j] * x[j];
        }
        y.push(((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail + b);
    }
}
