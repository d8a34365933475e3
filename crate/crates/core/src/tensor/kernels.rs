//! Raw loops behind the volumetric and recurrent tape operations.

/// Spatial extents of one channel plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims3 {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims3 {
    pub fn volume(self) -> usize {
        self.d * self.h * self.w
    }
}

/// Copies `[batch × channels × D × H × W]` into a zero-bordered,
/// channel-major buffer `[channels × batch × (D+2) × (H+2) × (W+2)]`.
fn pad_channel_major(src: &[f64], batch: usize, channels: usize, dims: Dims3) -> Vec<f64> {
    let (hp, wp) = (dims.h + 2, dims.w + 2);
    let pp = (dims.d + 2) * hp * wp;
    let plane = dims.volume();
    let mut out = vec![0.0; channels * batch * pp];
    for n in 0..batch {
        for c in 0..channels {
            let s = &src[(n * channels + c) * plane..][..plane];
            let base = (c * batch + n) * pp;
            for z in 0..dims.d {
                for y in 0..dims.h {
                    let row = base + ((z + 1) * hp + y + 1) * wp + 1;
                    out[row..row + dims.w].copy_from_slice(&s[(z * dims.h + y) * dims.w..][..dims.w]);
                }
            }
        }
    }
    out
}

/// Flat offsets of the 27 taps inside the padded layout, and the margin
/// that keeps every shifted index in bounds.
fn tap_offsets(dims: Dims3) -> ([isize; 27], usize) {
    let (hp, wp) = ((dims.h + 2) as isize, (dims.w + 2) as isize);
    let mut offs = [0isize; 27];
    for kd in 0..3 {
        for kh in 0..3 {
            for kw in 0..3 {
                offs[kd * 9 + kh * 3 + kw] = (kd as isize - 1) * hp * wp
                    + (kh as isize - 1) * wp
                    + (kw as isize - 1);
            }
        }
    }
    (offs, (hp * wp + wp + 1) as usize)
}

fn shifted(buf: &[f64], lo: usize, hi: usize, off: isize) -> &[f64] {
    &buf[(lo as isize + off) as usize..(hi as isize + off) as usize]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn axpy(out: &mut [f64], w: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += w * v;
    }
}

/// Samples per chunk so a chunk's padded planes stay cache-resident.
fn chunk_len(dims: Dims3) -> usize {
    let pp = (dims.d + 2) * (dims.h + 2) * (dims.w + 2);
    (16_384 / pp).max(1)
}

/// 3×3×3 same-padded cross-correlation over `batch` samples.
///
/// Works on zero-bordered copies so each tap is one long shifted
/// multiply-add; outputs computed on border cells are discarded.
pub(crate) fn conv3d_forward(
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    dims: Dims3,
) -> Vec<f64> {
    let plane = dims.volume();
    let mut out = Vec::with_capacity(batch * c_out * plane);
    let step = chunk_len(dims);
    let mut n = 0;
    while n < batch {
        let b = step.min(batch - n);
        out.extend(conv3d_forward_chunk(
            &input[n * c_in * plane..(n + b) * c_in * plane],
            kernels,
            bias,
            b,
            c_in,
            c_out,
            dims,
        ));
        n += b;
    }
    out
}

/// Gradients of [`conv3d_forward`]; each target is skipped when `None`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3d_backward(
    input: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    dims: Dims3,
    mut grad_input: Option<&mut [f64]>,
    mut grad_kernels: Option<&mut [f64]>,
    mut grad_bias: Option<&mut [f64]>,
) {
    let plane = dims.volume();
    let step = chunk_len(dims);
    let mut n = 0;
    while n < batch {
        let b = step.min(batch - n);
        let (i0, i1) = (n * c_in * plane, (n + b) * c_in * plane);
        conv3d_backward_chunk(
            &input[i0..i1],
            kernels,
            &grad_out[n * c_out * plane..(n + b) * c_out * plane],
            b,
            c_in,
            c_out,
            dims,
            grad_input.as_deref_mut().map(|g| &mut g[i0..i1]),
            grad_kernels.as_deref_mut(),
            grad_bias.as_deref_mut(),
        );
        n += b;
    }
}

fn conv3d_forward_chunk(
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    dims: Dims3,
) -> Vec<f64> {
    let (hp, wp) = (dims.h + 2, dims.w + 2);
    let pp = (dims.d + 2) * hp * wp;
    let total = batch * pp;
    let xin = pad_channel_major(input, batch, c_in, dims);
    let (offs, m) = tap_offsets(dims);
    let (lo, hi) = (m, total - m);
    let mut acc = vec![0.0; c_out * total];
    for co in 0..c_out {
        let a = &mut acc[co * total..(co + 1) * total][lo..hi];
        for ci in 0..c_in {
            let x = &xin[ci * total..(ci + 1) * total];
            for (tap, &off) in offs.iter().enumerate() {
                let wv = kernels[(co * c_in + ci) * 27 + tap];
                if wv != 0.0 {
                    axpy(a, wv, shifted(x, lo, hi, off));
                }
            }
        }
    }
    let plane = dims.volume();
    let mut out = vec![0.0; batch * c_out * plane];
    for n in 0..batch {
        for co in 0..c_out {
            let src = &acc[co * total + n * pp..][..pp];
            let dst = &mut out[(n * c_out + co) * plane..][..plane];
            for z in 0..dims.d {
                for y in 0..dims.h {
                    let row = ((z + 1) * hp + y + 1) * wp + 1;
                    for (d, s) in dst[(z * dims.h + y) * dims.w..][..dims.w]
                        .iter_mut()
                        .zip(&src[row..row + dims.w])
                    {
                        *d = s + bias[co];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3d_backward_chunk(
    input: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    dims: Dims3,
    grad_input: Option<&mut [f64]>,
    grad_kernels: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let plane = dims.volume();
    if let Some(gb) = grad_bias {
        for n in 0..batch {
            for co in 0..c_out {
                gb[co] += grad_out[(n * c_out + co) * plane..][..plane].iter().sum::<f64>();
            }
        }
    }
    if grad_input.is_none() && grad_kernels.is_none() {
        return;
    }
    let (hp, wp) = (dims.h + 2, dims.w + 2);
    let pp = (dims.d + 2) * hp * wp;
    let total = batch * pp;
    let (offs, m) = tap_offsets(dims);
    let (lo, hi) = (m, total - m);
    // Border cells of the padded gradient are zero, so they contribute
    // nothing to either product below.
    let gout = pad_channel_major(grad_out, batch, c_out, dims);
    if let Some(gk) = grad_kernels {
        let xin = pad_channel_major(input, batch, c_in, dims);
        for co in 0..c_out {
            let g = &gout[co * total..(co + 1) * total][lo..hi];
            for ci in 0..c_in {
                let x = &xin[ci * total..(ci + 1) * total];
                for (tap, &off) in offs.iter().enumerate() {
                    gk[(co * c_in + ci) * 27 + tap] += dot(g, shifted(x, lo, hi, off));
                }
            }
        }
    }
    if let Some(gi) = grad_input {
        let mut gpad = vec![0.0; c_in * total];
        for ci in 0..c_in {
            let dst = &mut gpad[ci * total..(ci + 1) * total];
            for co in 0..c_out {
                let g = &gout[co * total..(co + 1) * total][lo..hi];
                for (tap, &off) in offs.iter().enumerate() {
                    let wv = kernels[(co * c_in + ci) * 27 + tap];
                    if wv != 0.0 {
                        let start = (lo as isize + off) as usize;
                        axpy(&mut dst[start..start + g.len()], wv, g);
                    }
                }
            }
        }
        for n in 0..batch {
            for ci in 0..c_in {
                let src = &gpad[ci * total + n * pp..][..pp];
                let dst = &mut gi[(n * c_in + ci) * plane..][..plane];
                for z in 0..dims.d {
                    for y in 0..dims.h {
                        let row = ((z + 1) * hp + y + 1) * wp + 1;
                        for (d, s) in dst[(z * dims.h + y) * dims.w..][..dims.w]
                            .iter_mut()
                            .zip(&src[row..row + dims.w])
                        {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping 2×2×2 max pooling. Returns the pooled values and, per
/// output cell, the flat input index of the first maximum in scan order.
pub(crate) fn maxpool3d_forward(
    input: &[f64],
    channels: usize,
    dims: Dims3,
) -> (Vec<f64>, Vec<usize>) {
    let od = Dims3 {
        d: dims.d / 2,
        h: dims.h / 2,
        w: dims.w / 2,
    };
    let plane_in = dims.volume();
    let plane_out = od.volume();
    let mut out = vec![0.0; channels * plane_out];
    let mut arg = vec![0usize; channels * plane_out];
    for c in 0..channels {
        for z in 0..od.d {
            for y in 0..od.h {
                for x in 0..od.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = c * plane_in
                                    + ((2 * z + dz) * dims.h + 2 * y + dy) * dims.w
                                    + 2 * x
                                    + dx;
                                let v = input[idx];
                                if best_idx == usize::MAX || v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let o = c * plane_out + (z * od.h + y) * od.w + x;
                    out[o] = best;
                    arg[o] = best_idx;
                }
            }
        }
    }
    (out, arg)
}

/// Cached gate activations of one LSTM step, laid out `[batch × 4k]` as i, f, g, o.
pub(crate) struct LstmCache {
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Applies gate nonlinearities to pre-activations in place and returns
/// `[h | c]` per row together with the cache needed for backward.
pub(crate) fn lstm_activate(
    pre: &mut [f64],
    c_prev: &[f64],
    batch: usize,
    hidden: usize,
) -> (Vec<f64>, LstmCache) {
    let k = hidden;
    let mut out = vec![0.0; batch * 2 * k];
    let mut tanh_c = vec![0.0; batch * k];
    for b in 0..batch {
        let g = &mut pre[b * 4 * k..(b + 1) * 4 * k];
        for j in 0..k {
            g[j] = sigmoid(g[j]);
            g[k + j] = sigmoid(g[k + j]);
            g[2 * k + j] = g[2 * k + j].tanh();
            g[3 * k + j] = sigmoid(g[3 * k + j]);
        }
        for j in 0..k {
            let c = g[k + j] * c_prev[b * k + j] + g[j] * g[2 * k + j];
            let tc = c.tanh();
            out[b * 2 * k + j] = g[3 * k + j] * tc;
            out[b * 2 * k + k + j] = c;
            tanh_c[b * k + j] = tc;
        }
    }
    (
        out,
        LstmCache {
            gates: pre.to_vec(),
            tanh_c,
        },
    )
}

/// Gradient w.r.t. gate pre-activations and the previous cell state, given
/// the upstream gradient on `[h | c]`.
pub(crate) fn lstm_gate_grads(
    cache: &LstmCache,
    c_prev: &[f64],
    grad_out: &[f64],
    batch: usize,
    hidden: usize,
) -> (Vec<f64>, Vec<f64>) {
    let k = hidden;
    let mut d_pre = vec![0.0; batch * 4 * k];
    let mut d_c_prev = vec![0.0; batch * k];
    for b in 0..batch {
        let g = &cache.gates[b * 4 * k..(b + 1) * 4 * k];
        let dp = &mut d_pre[b * 4 * k..(b + 1) * 4 * k];
        for j in 0..k {
            let (i, f, gg, o) = (g[j], g[k + j], g[2 * k + j], g[3 * k + j]);
            let tc = cache.tanh_c[b * k + j];
            let dh = grad_out[b * 2 * k + j];
            let dc = grad_out[b * 2 * k + k + j] + dh * o * (1.0 - tc * tc);
            let cp = c_prev[b * k + j];
            dp[j] = dc * gg * i * (1.0 - i);
            dp[k + j] = dc * cp * f * (1.0 - f);
            dp[2 * k + j] = dc * i * (1.0 - gg * gg);
            dp[3 * k + j] = dh * tc * o * (1.0 - o);
            d_c_prev[b * k + j] = dc * f;
        }
    }
    (d_pre, d_c_prev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_prefers_first_maximum() {
        let dims = Dims3 { d: 2, h: 2, w: 2 };
        let (out, arg) = maxpool3d_forward(&[3.0; 8], 1, dims);
        assert_eq!(out, vec![3.0]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
