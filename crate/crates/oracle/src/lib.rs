//! Independent reference implementations used as test oracles.
//!
//! Everything here is written as the most direct loop nest of its
//! definition, on plain slices, with no dependency on the engine under test.
//! Multiply-accumulates use `mul_add` so that the engine's fused
//! accumulation can be compared bitwise where the accumulation order is part
//! of the contract.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub trait Elem: Copy + PartialOrd + std::fmt::Debug {
    fn zero() -> Self;
    fn fma(a: Self, b: Self, acc: Self) -> Self;
    fn add(a: Self, b: Self) -> Self;
}

impl Elem for f32 {
    fn zero() -> Self {
        0.0
    }
    fn fma(a: Self, b: Self, acc: Self) -> Self {
        a.mul_add(b, acc)
    }
    fn add(a: Self, b: Self) -> Self {
        a + b
    }
}

impl Elem for f64 {
    fn zero() -> Self {
        0.0
    }
    fn fma(a: Self, b: Self, acc: Self) -> Self {
        a.mul_add(b, acc)
    }
    fn add(a: Self, b: Self) -> Self {
        a + b
    }
}

/// `(batch, channels, height, width)`.
pub type Shape4 = [usize; 4];

#[inline]
fn idx(s: Shape4, b: usize, c: usize, y: usize, x: usize) -> usize {
    ((b * s[1] + c) * s[2] + y) * s[3] + x
}

/// Zero-padded sample; `None`-free so padded taps are genuine zero terms.
#[inline]
fn padded<T: Elem>(data: &[T], s: Shape4, b: usize, c: usize, y: isize, x: isize) -> T {
    if y < 0 || x < 0 || y >= s[2] as isize || x >= s[3] as isize {
        T::zero()
    } else {
        data[idx(s, b, c, y as usize, x as usize)]
    }
}

/// Six-loop "same" convolution: `out[b,o,y,x] = bias[o] + Σ_{i,dy,dx}
/// x̃[b,i,y+dy−p,x+dx−p]·w[o,i,dy,dx]`, optionally followed by ReLU.
pub fn conv_forward<T: Elem>(
    input: &[T],
    s: Shape4,
    weights: &[T],
    out_ch: usize,
    k: usize,
    bias: &[T],
    relu: bool,
) -> Vec<T> {
    let [n, cin, h, w] = s;
    let p = (k as isize - 1) / 2;
    let os = [n, out_ch, h, w];
    let mut out = vec![T::zero(); n * out_ch * h * w];
    for b in 0..n {
        for o in 0..out_ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for dy in 0..k {
                            for dx in 0..k {
                                let v =
                                    padded(input, s, b, i, y as isize + dy as isize - p, x as isize + dx as isize - p);
                                acc = T::fma(weights[((o * cin + i) * k + dy) * k + dx], v, acc);
                            }
                        }
                    }
                    if relu && !(acc > T::zero()) {
                        acc = T::zero();
                    }
                    out[idx(os, b, o, y, x)] = acc;
                }
            }
        }
    }
    out
}

/// Input gradient by direct gather:
/// `gin[b,i,y,x] = Σ_{o,ky,kx} g̃[b,o,y+ky−p,x+kx−p]·w[o,i,k−1−ky,k−1−kx]`.
pub fn conv_grad_input<T: Elem>(grad: &[T], gs: Shape4, weights: &[T], in_ch: usize, k: usize) -> Vec<T> {
    let [n, cout, h, w] = gs;
    let p = (k as isize - 1) / 2;
    let is = [n, in_ch, h, w];
    let mut out = vec![T::zero(); n * in_ch * h * w];
    for b in 0..n {
        for i in 0..in_ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::zero();
                    for o in 0..cout {
                        for ky in 0..k {
                            for kx in 0..k {
                                let g =
                                    padded(grad, gs, b, o, y as isize + ky as isize - p, x as isize + kx as isize - p);
                                let wv = weights[((o * in_ch + i) * k + (k - 1 - ky)) * k + (k - 1 - kx)];
                                acc = T::fma(g, wv, acc);
                            }
                        }
                    }
                    out[idx(is, b, i, y, x)] = acc;
                }
            }
        }
    }
    out
}

/// Weight gradient: `gw[o,i,dy,dx] = Σ_{b,y,x} g[b,o,y,x]·x̃[b,i,y+dy−p,x+dx−p]`.
pub fn conv_grad_weights<T: Elem>(grad: &[T], input: &[T], s: Shape4, out_ch: usize, k: usize) -> Vec<T> {
    let [n, cin, h, w] = s;
    let gs = [n, out_ch, h, w];
    let p = (k as isize - 1) / 2;
    let mut out = vec![T::zero(); out_ch * cin * k * k];
    for o in 0..out_ch {
        for i in 0..cin {
            for dy in 0..k {
                for dx in 0..k {
                    let mut acc = T::zero();
                    for b in 0..n {
                        for y in 0..h {
                            for x in 0..w {
                                let v =
                                    padded(input, s, b, i, y as isize + dy as isize - p, x as isize + dx as isize - p);
                                acc = T::fma(grad[idx(gs, b, o, y, x)], v, acc);
                            }
                        }
                    }
                    out[((o * cin + i) * k + dy) * k + dx] = acc;
                }
            }
        }
    }
    out
}

/// `gb[o] = Σ_{b,y,x} g[b,o,y,x]` with plain sequential adds.
pub fn conv_grad_bias<T: Elem>(grad: &[T], gs: Shape4) -> Vec<T> {
    let [n, cout, h, w] = gs;
    (0..cout)
        .map(|o| {
            let mut acc = T::zero();
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        acc = T::add(acc, grad[idx(gs, b, o, y, x)]);
                    }
                }
            }
            acc
        })
        .collect()
}

/// Textbook Adam, one parameter vector, all arithmetic in f64.
#[derive(Debug, Clone)]
pub struct ScriptedAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl ScriptedAdam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, w: &mut [f64], g: &[f64]) {
        self.t += 1;
        for j in 0..w.len() {
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * g[j];
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * g[j] * g[j];
            let mh = self.m[j] / (1.0 - self.beta1.powi(self.t));
            let vh = self.v[j] / (1.0 - self.beta2.powi(self.t));
            w[j] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Cross-entropy of a probability pair `(p, 1 − p)` given separately, so the
/// caller can supply `1 − p` without cancellation.
pub fn bce(p: f64, one_minus_p: f64, t: f64) -> f64 {
    -(t * p.ln() + (1.0 - t) * one_minus_p.ln())
}

/// Central finite difference of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Brute-force replay of the early-stopping rule. Returns the 1-based epoch
/// at which training stops: the first epoch that comes `patience` epochs
/// after the last strict improvement of the running minimum, or
/// `max_epochs`, or `None` if the schedule runs out first.
pub fn replay_patience(scores: &[f64], patience: usize, max_epochs: usize) -> Option<usize> {
    for e in 1..=scores.len() {
        let history = &scores[..e];
        let mut last_improvement = 0;
        let mut best = f64::INFINITY;
        for (i, &s) in history.iter().enumerate() {
            if s < best {
                best = s;
                last_improvement = i + 1;
            }
        }
        if e - last_improvement >= patience || e == max_epochs {
            return Some(e);
        }
    }
    None
}

/// Element-wise mean of the last `min(window, len)` images, accumulated in
/// f64 oldest-first.
pub fn mean_of_last(images: &[Vec<f32>], window: usize) -> Vec<f64> {
    let take = window.min(images.len());
    let tail = &images[images.len() - take..];
    let mut acc = vec![0.0f64; tail[0].len()];
    for img in tail {
        for (a, &v) in acc.iter_mut().zip(img) {
            *a += v as f64;
        }
    }
    acc.iter().map(|a| a / take as f64).collect()
}

/// Checkerboard halves by enumerating parity classes: scanning each row
/// (for "up") or column (for "left") in order and routing every pixel to the
/// even or odd list by the parity of `i + j`.
pub fn checkerboard_by_enumeration<T: Copy>(x: &[T], m: usize, n: usize) -> [Vec<T>; 4] {
    let (mut eu, mut ou, mut el, mut ol) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..m {
        for j in 0..n {
            if (i + j) % 2 == 0 {
                eu.push(x[i * n + j])
            } else {
                ou.push(x[i * n + j])
            }
        }
    }
    // Left halves are (m/2) × n, filled column by column, stored row-major.
    let half = m / 2;
    let mut el_cols = vec![Vec::new(); n];
    let mut ol_cols = vec![Vec::new(); n];
    for j in 0..n {
        for i in 0..m {
            if (i + j) % 2 == 0 {
                el_cols[j].push(x[i * n + j])
            } else {
                ol_cols[j].push(x[i * n + j])
            }
        }
    }
    for r in 0..half {
        for j in 0..n {
            el.push(el_cols[j][r]);
            ol.push(ol_cols[j][r]);
        }
    }
    [eu, ou, el, ol]
}

/// Single-scale SSIM evaluated window by window: 11×11 Gaussian weights
/// (σ = 1.5, normalised), over every fully contained window position.
pub fn ssim_direct(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> f64 {
    const R: usize = 5;
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - R as f64, j as f64 - R as f64);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in R..h - R {
        for x in R..w - R {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i][j] / total;
                    let p = (y + i - R) * w + (x + j - R);
                    ma += wt * a[p];
                    mb += wt * b[p];
                    saa += wt * a[p] * a[p];
                    sbb += wt * b[p] * b[p];
                    sab += wt * a[p] * b[p];
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_matches_hand_schedule() {
        let mut s = vec![1.0, 0.9];
        s.extend(std::iter::repeat_n(0.95, 150));
        assert_eq!(replay_patience(&s, 100, 10_000), Some(102));
        assert_eq!(replay_patience(&[3.0, 2.0, 1.0], 1, 10), None);
        assert_eq!(replay_patience(&[3.0, 2.0, 1.0], 1, 2), Some(2));
    }

    #[test]
    fn enumeration_on_small_grid() {
        let x = [1, 2, 3, 4, 5, 6, 7, 8];
        let [eu, ou, el, ol] = checkerboard_by_enumeration(&x, 2, 4);
        assert_eq!(eu, vec![1, 3, 6, 8]);
        assert_eq!(ou, vec![2, 4, 5, 7]);
        assert_eq!(el, vec![1, 6, 3, 8]);
        assert_eq!(ol, vec![5, 2, 7, 4]);
    }
}
