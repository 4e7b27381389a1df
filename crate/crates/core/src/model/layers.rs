//! Forward and backward kernels for the network's layer types. Activations
//! are `[batch, maps, freq, time]`, row-major.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Act {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    fn plane(&self, b: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        &self.data[(b * self.c + c) * p..][..p]
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Four independent accumulators so the reduction vectorizes.
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Output indices `i` for which `i + d` stays inside `[0, len)`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// The shifted-slice pairs (input, output) touched by one kernel tap.
struct Tap {
    rows: (usize, usize),
    cols: (usize, usize),
    dy: isize,
    dx: isize,
}

fn taps(h: usize, w: usize, kh: usize, kw: usize) -> Vec<Tap> {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Vec::with_capacity(kh * kw);
    for ky in 0..kh {
        let dy = ky as isize - ph as isize;
        for kx in 0..kw {
            let dx = kx as isize - pw as isize;
            out.push(Tap {
                rows: valid_range(h, dy),
                cols: valid_range(w, dx),
                dy,
                dx,
            });
        }
    }
    out
}

/// Visits every (output slice, input slice) pair of one tap.
#[inline]
fn for_each_row(tap: &Tap, w: usize, mut f: impl FnMut(std::ops::Range<usize>, std::ops::Range<usize>)) {
    let (y0, y1) = tap.rows;
    let (x0, x1) = tap.cols;
    if y0 >= y1 || x0 >= x1 {
        return;
    }
    if x0 == 0 && x1 == w && tap.dx == 0 {
        let src0 = ((y0 as isize + tap.dy) as usize) * w;
        f(y0 * w..y1 * w, src0..src0 + (y1 - y0) * w);
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + tap.dy) as usize;
        let sx = (x0 as isize + tap.dx) as usize;
        f(y * w + x0..y * w + x1, sy * w + sx..sy * w + sx + (x1 - x0));
    }
}

/// "Same"-padded stride-1 convolution; weight is `[out, in, kh, kw]`.
/// Even kernels pad one extra row/column after the signal.
pub fn conv_forward(x: &Act, weight: &[f64], cout: usize, kh: usize, kw: usize) -> Act {
    let mut out = Act::zeros(x.n, cout, x.h, x.w);
    let p = x.plane_len();
    let taps = taps(x.h, x.w, kh, kw);
    for b in 0..x.n {
        for o in 0..cout {
            let dst = &mut out.data[(b * cout + o) * p..][..p];
            for i in 0..x.c {
                let src = x.plane(b, i);
                let wrow = &weight[(o * x.c + i) * kh * kw..][..kh * kw];
                for (tap, &wv) in taps.iter().zip(wrow) {
                    for_each_row(tap, x.w, |d, s| axpy(wv, &src[s], &mut dst[d]));
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight)`; the input gradient is skipped when not needed.
pub fn conv_backward(
    x: &Act,
    weight: &[f64],
    grad_out: &Act,
    kh: usize,
    kw: usize,
    need_input_grad: bool,
) -> (Option<Act>, Vec<f64>) {
    let cout = grad_out.c;
    let p = x.plane_len();
    let taps = taps(x.h, x.w, kh, kw);
    let mut gw = vec![0.0; weight.len()];
    let mut gx = need_input_grad.then(|| Act::zeros(x.n, x.c, x.h, x.w));
    for b in 0..x.n {
        for o in 0..cout {
            let g = grad_out.plane(b, o);
            for i in 0..x.c {
                let src = x.plane(b, i);
                let base = (o * x.c + i) * kh * kw;
                for (t, tap) in taps.iter().enumerate() {
                    let mut acc = 0.0;
                    for_each_row(tap, x.w, |d, s| acc += dot(&g[d], &src[s]));
                    gw[base + t] += acc;
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx.data[(b * x.c + i) * p..][..p];
                    for (t, tap) in taps.iter().enumerate() {
                        let wv = weight[base + t];
                        for_each_row(tap, x.w, |d, s| axpy(wv, &g[d], &mut dst[s]));
                    }
                }
            }
        }
    }
    (gx, gw)
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

/// Per-map batch statistics `(mean, biased variance)`.
pub fn batch_moments(x: &Act) -> (Vec<f64>, Vec<f64>) {
    let m = (x.n * x.plane_len()) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        let s: f64 = (0..x.n).map(|b| x.plane(b, c).iter().sum::<f64>()).sum();
        mean[c] = s / m;
        let ss: f64 = (0..x.n)
            .map(|b| x.plane(b, c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>())
            .sum();
        var[c] = ss / m;
    }
    (mean, var)
}

/// Batch norm followed by ReLU, using the given per-map statistics.
pub fn bn_relu_forward(
    x: &Act,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
    batch_stats: bool,
) -> (Act, BnCache) {
    let p = x.plane_len();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = vec![0.0; x.data.len()];
    let mut out = Act::zeros(x.n, x.c, x.h, x.w);
    for b in 0..x.n {
        for c in 0..x.c {
            let off = (b * x.c + c) * p;
            for k in off..off + p {
                let xh = (x.data[k] - mean[c]) * inv_std[c];
                x_hat[k] = xh;
                out.data[k] = (gamma[c] * xh + beta[c]).max(0.0);
            }
        }
    }
    (
        out,
        BnCache {
            x_hat,
            inv_std,
            batch_stats,
        },
    )
}

/// Backward through ReLU then batch norm. `out` is the post-ReLU activation.
/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn bn_relu_backward(
    grad_out: &Act,
    out: &Act,
    cache: &BnCache,
    gamma: &[f64],
) -> (Act, Vec<f64>, Vec<f64>) {
    let (n, cn, p) = (grad_out.n, grad_out.c, grad_out.plane_len());
    let m = (n * p) as f64;
    let mut gy = grad_out.data.clone();
    for (g, &o) in gy.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
    let mut g_gamma = vec![0.0; cn];
    let mut g_beta = vec![0.0; cn];
    for b in 0..n {
        for c in 0..cn {
            let off = (b * cn + c) * p;
            for k in off..off + p {
                g_beta[c] += gy[k];
                g_gamma[c] += gy[k] * cache.x_hat[k];
            }
        }
    }
    let mut gx = Act::zeros(n, cn, grad_out.h, grad_out.w);
    for b in 0..n {
        for c in 0..cn {
            let off = (b * cn + c) * p;
            let scale = gamma[c] * cache.inv_std[c];
            if cache.batch_stats {
                let (sb, sg) = (g_beta[c] / m, g_gamma[c] / m);
                for k in off..off + p {
                    gx.data[k] = scale * (gy[k] - sb - cache.x_hat[k] * sg);
                }
            } else {
                for k in off..off + p {
                    gx.data[k] = scale * gy[k];
                }
            }
        }
    }
    (gx, g_gamma, g_beta)
}

/// Non-overlapping max pooling of `pool` bins along frequency. Returns the
/// pooled activation and the flat input index of each maximum.
pub fn maxpool_freq_forward(x: &Act, pool: usize) -> (Act, Vec<usize>) {
    let oh = x.h / pool;
    let mut out = Act::zeros(x.n, x.c, oh, x.w);
    let mut idx = vec![0usize; out.data.len()];
    let mut k = 0;
    for b in 0..x.n {
        for c in 0..x.c {
            let base = (b * x.c + c) * x.plane_len();
            for y in 0..oh {
                for t in 0..x.w {
                    let mut best = base + (y * pool) * x.w + t;
                    for dy in 1..pool {
                        let cand = base + (y * pool + dy) * x.w + t;
                        if x.data[cand] > x.data[best] {
                            best = cand;
                        }
                    }
                    out.data[k] = x.data[best];
                    idx[k] = best;
                    k += 1;
                }
            }
        }
    }
    (out, idx)
}

pub fn scatter_backward(grad_out: &[f64], idx: &[usize], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&go, &i) in grad_out.iter().zip(idx) {
        g[i] += go;
    }
    g
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`. Returns the
/// per-unit multiplier for the backward pass.
pub fn dropout_forward<R: Rng + ?Sized>(data: &mut [f64], rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = data
        .iter()
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    for (v, m) in data.iter_mut().zip(&mask) {
        *v *= m;
    }
    mask
}

/// Max over every position of each map: `[n, c]` values and source indices.
pub fn global_max_forward(x: &Act) -> (Vec<f64>, Vec<usize>) {
    let p = x.plane_len();
    let mut vals = Vec::with_capacity(x.n * x.c);
    let mut idx = Vec::with_capacity(x.n * x.c);
    for b in 0..x.n {
        for c in 0..x.c {
            let off = (b * x.c + c) * p;
            let plane = &x.data[off..off + p];
            let mut best = 0;
            for (k, v) in plane.iter().enumerate() {
                if *v > plane[best] {
                    best = k;
                }
            }
            vals.push(plane[best]);
            idx.push(off + best);
        }
    }
    (vals, idx)
}

/// `y = x W^T + b` with `W` as `[out, in]`.
pub fn dense_forward(x: &[f64], n: usize, din: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let dout = b.len();
    let mut y = Vec::with_capacity(n * dout);
    for r in 0..n {
        let row = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            y.push(b[o] + dot(&w[o * din..(o + 1) * din], row));
        }
    }
    y
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward(x: &[f64], n: usize, din: usize, w: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dout = w.len() / din;
    let mut gx = vec![0.0; n * din];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; dout];
    for r in 0..n {
        let row = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let g = gy[r * dout + o];
            gb[o] += g;
            axpy(g, row, &mut gw[o * din..(o + 1) * din]);
            axpy(g, &w[o * din..(o + 1) * din], &mut gx[r * din..(r + 1) * din]);
        }
    }
    (gx, gw, gb)
}

/// Row-wise softmax of `[n, k]` logits.
pub fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / s));
    }
    out
}

/// Mean cross-entropy `-ln p[z]` from logits, computed via log-sum-exp.
pub fn cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &z)| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            lse - row[z]
        })
        .sum();
    total / labels.len() as f64
}
