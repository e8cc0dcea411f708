//! Dense kernels over row-major `f64` buffers.
//!
//! Weight matrices are stored output-major (`out_dim x in_dim`), so each
//! output unit's weights are contiguous. All kernels parallelize over
//! independent output rows and keep a fixed summation order, which makes
//! results identical with and without the `parallel` feature.

use crate::par;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[b][o] = bias[o] + x[b] . w[o]` for `rows` input rows.
pub fn affine(x: &[f64], in_dim: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let out_dim = bias.len();
    debug_assert_eq!(w.len(), out_dim * in_dim);
    let rows = x.len() / in_dim;
    let mut out = vec![0.0; rows * out_dim];
    par::for_each_chunk_mut(&mut out, out_dim, |b, row| {
        let xb = &x[b * in_dim..(b + 1) * in_dim];
        for (o, z) in row.iter_mut().enumerate() {
            *z = bias[o] + dot(xb, &w[o * in_dim..(o + 1) * in_dim]);
        }
    });
    out
}

/// Gradient w.r.t. the layer input: `dx[b] = sum_o dz[b][o] * w[o]`.
pub fn backprop_input(dz: &[f64], out_dim: usize, w: &[f64], in_dim: usize) -> Vec<f64> {
    let rows = dz.len() / out_dim;
    let mut dx = vec![0.0; rows * in_dim];
    par::for_each_chunk_mut(&mut dx, in_dim, |b, row| {
        for (o, &g) in dz[b * out_dim..(b + 1) * out_dim].iter().enumerate() {
            if g != 0.0 {
                axpy(g, &w[o * in_dim..(o + 1) * in_dim], row);
            }
        }
    });
    dx
}

/// Weight and bias gradients: `dw[o] = sum_b dz[b][o] * x[b]`,
/// `db[o] = sum_b dz[b][o]`.
pub fn weight_grads(dz: &[f64], out_dim: usize, x: &[f64], in_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = dz.len() / out_dim;
    let mut dw = vec![0.0; out_dim * in_dim];
    par::for_each_chunk_mut(&mut dw, in_dim, |o, row| {
        for b in 0..rows {
            let g = dz[b * out_dim + o];
            if g != 0.0 {
                axpy(g, &x[b * in_dim..(b + 1) * in_dim], row);
            }
        }
    });
    let db = (0..out_dim)
        .map(|o| (0..rows).map(|b| dz[b * out_dim + o]).sum())
        .collect();
    (dw, db)
}
