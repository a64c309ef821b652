//! Same-size 2-D convolution with zero padding, forward and backward.
//!
//! All three products lower onto [`gemm_acc`]:
//!
//! * forward: `out[o][p] = bias[o] + Σ_{(i,dy,dx)} w[o][i][dy][dx] · x̃[i][p+(dy,dx)]`
//! * input gradient: the same correlation applied to the output gradient
//!   with spatially flipped, channel-transposed weights
//! * weight gradient: `gw[o][(i,dy,dx)] = Σ_{(b,y,x)} g[b][o][y][x] · x̃[b][i][y+dy][x+dx]`
//!
//! where `x̃` is the zero-padded input. Padded taps are real zero terms in the
//! accumulation, not skipped.

use super::gemm::{copy_shifted, gemm_acc, pixel_runs, MatRef, PackB};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Square-kernel convolution with "same" zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    weights: Tensor<T>,
    bias: Vec<T>,
    padding: usize,
    activation: Activation,
}

impl<T: Real> ConvLayer<T> {
    /// `weights` has shape `(out_ch, in_ch, k, k)` with odd `k`; padding is
    /// `(k - 1) / 2` so spatial size is preserved.
    pub fn new(weights: Tensor<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        let [out_ch, _, kh, kw] = weights.shape();
        if kh != kw || kh % 2 == 0 {
            return Err(shape_err!("kernel must be square with odd size, got {kh}x{kw}"));
        }
        if bias.len() != out_ch {
            return Err(shape_err!("bias has {} entries for {out_ch} output channels", bias.len()));
        }
        Ok(Self { weights, bias, padding: (kh - 1) / 2, activation })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }
    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }
    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[2]
    }
    pub fn padding(&self) -> usize {
        self.padding
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Mutable views of the weight and bias storage, in that order.
    pub fn params_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.weights.data_mut(), &mut self.bias)
    }
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_input: Option<Tensor<T>>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Vec<T>,
}

/// Unrolled view of one `(channels, h, w)` image: row `(c, dy, dx)`,
/// column `y·w + x` holds `x̃[c][y+dy-pad][x+dx-pad]`.
pub(crate) struct Im2Col<'a, T> {
    pub src: &'a [T],
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub ksize: usize,
    pub pad: usize,
}

impl<T: Real> Im2Col<'_, T> {
    #[inline]
    fn tap(&self, row: usize) -> (usize, isize, isize) {
        let kk = self.ksize * self.ksize;
        let (c, r) = (row / kk, row % kk);
        let dy = (r / self.ksize) as isize - self.pad as isize;
        let dx = (r % self.ksize) as isize - self.pad as isize;
        (c, dy, dx)
    }

    #[inline]
    fn source_row(&self, c: usize, sy: isize) -> Option<&[T]> {
        (sy >= 0 && (sy as usize) < self.height).then(|| {
            let start = (c * self.height + sy as usize) * self.width;
            &self.src[start..start + self.width]
        })
    }
}

impl<T: Real> PackB<T> for Im2Col<'_, T> {
    fn k(&self) -> usize {
        self.channels * self.ksize * self.ksize
    }
    fn n(&self) -> usize {
        self.height * self.width
    }
    fn pack(&self, k0: usize, kc: usize, n0: usize, nc: usize, nr: usize, dst: &mut [T]) {
        let n = self.n();
        for (panel, j0) in (0..nc).step_by(nr).enumerate() {
            let out = &mut dst[panel * kc * nr..(panel + 1) * kc * nr];
            let first = n0 + j0;
            let valid = nr.min(n - first);
            for p in 0..kc {
                let (c, dy, dx) = self.tap(k0 + p);
                let row = &mut out[p * nr..(p + 1) * nr];
                for (off, y, x, len) in pixel_runs(first, valid, self.width) {
                    let dst_run = &mut row[off..off + len];
                    match self.source_row(c, y as isize + dy) {
                        Some(src) => copy_shifted(dst_run, src, x as isize + dx),
                        None => dst_run.fill(T::zero()),
                    }
                }
                row[valid..].fill(T::zero());
            }
        }
    }
}

/// Transposed unrolled view: row = pixel, column = `(c, dy, dx)`.
pub(crate) struct Im2ColT<'a, T>(pub Im2Col<'a, T>);

impl<T: Real> PackB<T> for Im2ColT<'_, T> {
    fn k(&self) -> usize {
        self.0.n()
    }
    fn n(&self) -> usize {
        self.0.k()
    }
    fn pack(&self, k0: usize, kc: usize, n0: usize, nc: usize, nr: usize, dst: &mut [T]) {
        let cols = self.n();
        let width = self.0.width;
        let mut line = vec![T::zero(); kc];
        for (panel, j0) in (0..nc).step_by(nr).enumerate() {
            let out = &mut dst[panel * kc * nr..(panel + 1) * kc * nr];
            for jj in 0..nr {
                let col = n0 + j0 + jj;
                if col >= cols {
                    for p in 0..kc {
                        out[p * nr + jj] = T::zero();
                    }
                    continue;
                }
                let (c, dy, dx) = self.0.tap(col);
                for (off, y, x, len) in pixel_runs(k0, kc, width) {
                    let run = &mut line[off..off + len];
                    match self.0.source_row(c, y as isize + dy) {
                        Some(src) => copy_shifted(run, src, x as isize + dx),
                        None => run.fill(T::zero()),
                    }
                }
                for (p, &v) in line.iter().enumerate() {
                    out[p * nr + jj] = v;
                }
            }
        }
    }
}

fn check_input<T: Real>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<()> {
    if input.channels() != layer.in_channels() {
        return Err(shape_err!("input has {} channels, layer expects {}", input.channels(), layer.in_channels()));
    }
    Ok(())
}

/// Convolution followed by the layer's activation. Output has the same
/// spatial size as the input.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    check_input(input, layer)?;
    let [n, cin, h, w] = input.shape();
    let cout = layer.out_channels();
    let k = layer.kernel_size();
    let hw = h * w;
    let mut out = Tensor::zeros([n, cout, h, w])?;
    let weights = MatRef::row_major(layer.weights.data(), cout, cin * k * k);
    let mk = T::best_microkernel();
    for b in 0..n {
        let dst = &mut out.data_mut()[b * cout * hw..(b + 1) * cout * hw];
        for (row, &bias) in dst.chunks_exact_mut(hw).zip(&layer.bias) {
            row.fill(bias);
        }
        let cols = Im2Col {
            src: &input.data()[b * cin * hw..(b + 1) * cin * hw],
            channels: cin,
            height: h,
            width: w,
            ksize: k,
            pad: layer.padding,
        };
        gemm_acc(&weights, &cols, dst, hw, &mk);
    }
    if layer.activation == Activation::Relu {
        for v in out.data_mut() {
            if !(*v > T::zero()) {
                *v = T::zero();
            }
        }
    }
    Ok(out)
}

/// Backpropagates `grad_out` (gradient w.r.t. the activated output) through
/// the layer. `saved_output` is the forward result for `saved_input`; the
/// ReLU mask is `saved_output > 0`, which equals `pre-activation > 0`.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    saved_output: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<ConvGrads<T>> {
    backward(grad_out, saved_input, saved_output, layer, true)
}

pub(crate) fn backward<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    saved_output: &Tensor<T>,
    layer: &ConvLayer<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    check_input(saved_input, layer)?;
    let [n, cin, h, w] = saved_input.shape();
    let cout = layer.out_channels();
    let expected = [n, cout, h, w];
    if grad_out.shape() != expected || saved_output.shape() != expected {
        return Err(shape_err!(
            "gradient {:?} / saved output {:?} do not match forward output {expected:?}",
            grad_out.shape(),
            saved_output.shape()
        ));
    }
    let k = layer.kernel_size();
    let pad = layer.padding;
    let hw = h * w;
    let mk = T::best_microkernel();

    let grad_pre = match layer.activation {
        Activation::Identity => grad_out.clone(),
        Activation::Relu => {
            let mut g = grad_out.clone();
            for (gv, &ov) in g.data_mut().iter_mut().zip(saved_output.data()) {
                if !(ov > T::zero()) {
                    *gv = T::zero();
                }
            }
            g
        }
    };

    let mut grad_bias = vec![T::zero(); cout];
    for b in 0..n {
        for (o, acc) in grad_bias.iter_mut().enumerate() {
            let start = (b * cout + o) * hw;
            for &g in &grad_pre.data()[start..start + hw] {
                *acc = *acc + g;
            }
        }
    }

    let mut grad_weights = Tensor::zeros([cout, cin, k, k])?;
    for b in 0..n {
        let g = MatRef::row_major(&grad_pre.data()[b * cout * hw..(b + 1) * cout * hw], cout, hw);
        let cols = Im2ColT(Im2Col {
            src: &saved_input.data()[b * cin * hw..(b + 1) * cin * hw],
            channels: cin,
            height: h,
            width: w,
            ksize: k,
            pad,
        });
        gemm_acc(&g, &cols, grad_weights.data_mut(), cin * k * k, &mk);
    }

    let grad_input = if want_input_grad {
        // flipped[i][(o, ky, kx)] = w[o][i][k-1-ky][k-1-kx]
        let wd = layer.weights.data();
        let kk = k * k;
        let mut flipped = vec![T::zero(); cin * cout * kk];
        for o in 0..cout {
            for i in 0..cin {
                for r in 0..kk {
                    flipped[(i * cout + o) * kk + r] = wd[(o * cin + i) * kk + (kk - 1 - r)];
                }
            }
        }
        let a = MatRef::row_major(&flipped, cin, cout * kk);
        let mut gi = Tensor::zeros([n, cin, h, w])?;
        for b in 0..n {
            let cols = Im2Col {
                src: &grad_pre.data()[b * cout * hw..(b + 1) * cout * hw],
                channels: cout,
                height: h,
                width: w,
                ksize: k,
                pad: k - 1 - pad,
            };
            gemm_acc(&a, &cols, &mut gi.data_mut()[b * cin * hw..(b + 1) * cin * hw], hw, &mk);
        }
        Some(gi)
    } else {
        None
    };

    Ok(ConvGrads { grad_input, grad_weights, grad_bias })
}

impl<T: Real> ConvGrads<T> {
    /// Input gradient, failing if it was not requested.
    pub fn input(&self) -> Result<&Tensor<T>> {
        self.grad_input.as_ref().ok_or_else(|| Error::InvalidInput("input gradient was not computed".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: Vec<f64>, shape: [usize; 4], bias: Vec<f64>, act: Activation) -> ConvLayer<f64> {
        ConvLayer::new(Tensor::new(shape, w).unwrap(), bias, act).unwrap()
    }

    #[test]
    fn scalar_affine() {
        let l = layer(vec![2.0], [1, 1, 1, 1], vec![1.0], Activation::Identity);
        let x = Tensor::new([1, 1, 1, 1], vec![5.0]).unwrap();
        let y = conv2d_forward(&x, &l).unwrap();
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn box_sum_with_zero_padding() {
        let l = layer(vec![1.0; 9], [1, 1, 3, 3], vec![0.0], Activation::Identity);
        let x = Tensor::new([1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &l).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (yy, xx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, yy, xx), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn scalar_chain_rule() {
        let l = layer(vec![2.0], [1, 1, 1, 1], vec![1.0], Activation::Identity);
        let x = Tensor::new([1, 1, 1, 1], vec![5.0]).unwrap();
        let y = conv2d_forward(&x, &l).unwrap();
        let g = Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap();
        let grads = conv2d_backward(&g, &x, &y, &l).unwrap();
        assert_eq!(grads.input().unwrap().data(), &[2.0]);
        assert_eq!(grads.grad_weights.data(), &[5.0]);
        assert_eq!(grads.grad_bias, vec![1.0]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let l = layer((0..18).map(|i| i as f64 * 0.1 - 0.7).collect(), [2, 1, 3, 3], vec![0.3, -0.2], Activation::Relu);
        let x = Tensor::from_fn([1, 1, 4, 5], |i| (i as f64).sin()).unwrap();
        let y = conv2d_forward(&x, &l).unwrap();
        let g = Tensor::zeros(y.shape()).unwrap();
        let grads = conv2d_backward(&g, &x, &y, &l).unwrap();
        assert!(grads.input().unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads.grad_weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_mask_blocks_dead_units() {
        // Bias -100 keeps every pre-activation negative.
        let l = layer(vec![0.5; 9], [1, 1, 3, 3], vec![-100.0], Activation::Relu);
        let x = Tensor::from_fn([1, 1, 4, 4], |i| i as f64 * 0.01).unwrap();
        let y = conv2d_forward(&x, &l).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = Tensor::from_fn(y.shape(), |_| 1.0).unwrap();
        let grads = conv2d_backward(&g, &x, &y, &l).unwrap();
        assert!(grads.grad_weights.data().iter().all(|&v| v == 0.0));
        assert_eq!(grads.grad_bias, vec![0.0]);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let l = layer(vec![1.0; 18], [1, 2, 3, 3], vec![0.0], Activation::Identity);
        let x = Tensor::new([1, 1, 3, 3], vec![1.0; 9]).unwrap();
        assert!(matches!(conv2d_forward(&x, &l), Err(Error::Shape(_))));
        let y = Tensor::new([1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let bad_grad = Tensor::new([1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let x2 = Tensor::new([1, 2, 3, 3], vec![1.0; 18]).unwrap();
        assert!(conv2d_backward(&bad_grad, &x2, &y, &l).is_err());
    }

    #[test]
    fn rejects_even_kernel() {
        let w = Tensor::new([1, 1, 2, 2], vec![1.0f64; 4]).unwrap();
        assert!(ConvLayer::new(w, vec![0.0], Activation::Identity).is_err());
    }
}
