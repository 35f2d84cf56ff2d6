//! Loop-only forward references for the dense kernels.

use ndarray::Array2;

pub fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[[i, l]] * b[[l, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// `x W + b` with `W` stored `(in, out)` and `b` a single row.
pub fn naive_linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = naive_matmul(x, w);
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[[i, j]] += b[[0, j]];
        }
    }
    out
}

pub fn naive_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for i in 0..x.nrows() {
        let mut max = f64::NEG_INFINITY;
        for j in 0..x.ncols() {
            max = max.max(x[[i, j]]);
        }
        let mut z = 0.0;
        for j in 0..x.ncols() {
            z += (x[[i, j]] - max).exp();
        }
        for j in 0..x.ncols() {
            out[[i, j]] = (x[[i, j]] - max).exp() / z;
        }
    }
    out
}

pub fn naive_layer_norm(x: &Array2<f64>, gamma: &Array2<f64>, beta: &Array2<f64>, eps: f64) -> Array2<f64> {
    let c = x.ncols() as f64;
    let mut out = x.clone();
    for i in 0..x.nrows() {
        let mut mean = 0.0;
        for j in 0..x.ncols() {
            mean += x[[i, j]];
        }
        mean /= c;
        let mut var = 0.0;
        for j in 0..x.ncols() {
            var += (x[[i, j]] - mean).powi(2);
        }
        var /= c;
        for j in 0..x.ncols() {
            out[[i, j]] = (x[[i, j]] - mean) / (var + eps).sqrt() * gamma[[0, j]] + beta[[0, j]];
        }
    }
    out
}

/// Single-head scaled dot-product attention. Returns `(output, weights)`.
pub fn naive_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let d = q.ncols() as f64;
    let mut scores = Array2::zeros((q.nrows(), k.nrows()));
    for i in 0..q.nrows() {
        for j in 0..k.nrows() {
            let mut s = 0.0;
            for l in 0..q.ncols() {
                s += q[[i, l]] * k[[j, l]];
            }
            scores[[i, j]] = s / d.sqrt();
        }
    }
    let weights = naive_softmax_rows(&scores);
    (naive_matmul(&weights, v), weights)
}
