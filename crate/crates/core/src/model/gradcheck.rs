//! Central finite-difference check of [`Network::backward`].
//!
//! For each selected parameter `θ_k` the loss is evaluated at `θ ± h·e_k`
//! and compared with the analytic gradient. Perturbed evaluations reuse the
//! unperturbed activations below the perturbed layer: a weight change in
//! layer `l` moves only one output channel of that layer, and its effect on
//! layer `l + 1` is added directly before the remaining layers are run
//! normally.
//!
//! A parameter whose quotient misses the tolerance while one of its
//! perturbations flips the sign of some ReLU pre-activation is a kink
//! crossing: the loss is not differentiable along that segment. While no
//! ReLU changes state the logits are affine in any single parameter, so a
//! kink crossing is re-checked on the side and at the largest step (down to
//! `kink_min_step`) that flips nothing, as `∂L/∂z · Δz / h`. It counts as
//! resolved if that estimate is within tolerance.

use std::time::{Duration, Instant};

use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{conv2d_forward, Activation, ConvLayer, Tensor};

/// Loss as a function of the logits, returning the value and its gradient.
pub type LossFn<'a> = dyn Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)> + Sync + 'a;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    /// Lower bound on the denominator of the relative error.
    pub denom_floor: f64,
    /// Flat parameter indices to check; `None` checks all of them.
    pub indices: Option<Vec<usize>>,
    /// Stop early once this much time has passed.
    pub budget: Option<Duration>,
    /// Smallest step tried when looking for a kink-free side; `None`
    /// disables the retry.
    pub kink_min_step: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { step: 1e-4, rel_tol: 1e-5, denom_floor: 1e-6, indices: None, budget: None, kink_min_step: Some(1e-10) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub layer: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckReport {
    pub total_params: usize,
    pub checked: usize,
    pub checked_per_layer: Vec<usize>,
    /// Out of tolerance, with a ReLU sign flip inside `θ ± h`.
    pub kink_crossings: Vec<ParamCheck>,
    /// Kink crossings that pass on a side without a sign flip.
    pub kink_resolved: Vec<ParamCheck>,
    /// Out of tolerance with no sign flip.
    pub failures: Vec<ParamCheck>,
    /// Largest error outside kink crossings.
    pub worst: Option<ParamCheck>,
    pub elapsed: Duration,
}

impl GradcheckReport {
    /// Kink crossings with no passing kink-free estimate.
    pub fn unresolved_kinks(&self) -> impl Iterator<Item = &ParamCheck> {
        self.kink_crossings.iter().filter(|k| !self.kink_resolved.iter().any(|r| r.index == k.index))
    }

    /// Every checked parameter is within tolerance, directly or on a
    /// kink-free side.
    pub fn all_within_tolerance(&self) -> bool {
        self.failures.is_empty() && self.unresolved_kinks().next().is_none()
    }

    /// Every parameter was visited.
    pub fn complete(&self) -> bool {
        self.checked == self.total_params
    }
}

#[derive(Debug, Clone, Copy)]
enum Param {
    Weight { o: usize, i: usize, dy: usize, dx: usize },
    Bias { o: usize },
}

fn locate(layers: &[ConvLayer<f64>], mut index: usize) -> Option<(usize, Param)> {
    for (l, layer) in layers.iter().enumerate() {
        let nw = layer.weights().len();
        if index < nw {
            let k = layer.kernel_size();
            let per_out = layer.in_channels() * k * k;
            let (o, rem) = (index / per_out, index % per_out);
            let (i, tap) = (rem / (k * k), rem % (k * k));
            return Some((l, Param::Weight { o, i, dy: tap / k, dx: tap % k }));
        }
        index -= nw;
        if index < layer.bias().len() {
            return Some((l, Param::Bias { o: index }));
        }
        index -= layer.bias().len();
    }
    None
}

struct Checker<'a> {
    net: &'a Network<f64>,
    linear: Vec<ConvLayer<f64>>,
    /// `acts[l]` is the input of layer `l`.
    acts: Vec<Tensor<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Tensor<f64>>,
    loss: &'a LossFn<'a>,
    grad_logits: Tensor<f64>,
}

fn crosses(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).any(|(x, y)| (*x > 0.0) != (*y > 0.0))
}

fn activate(act: Activation, v: f64) -> f64 {
    match act {
        Activation::Relu => v.max(0.0),
        Activation::Identity => v,
    }
}

impl Checker<'_> {
    fn shifted_loss(&self, l: usize, p: Param, s: f64) -> Result<(f64, bool)> {
        let (logits, crossed) = self.shifted_logits(l, p, s)?;
        Ok(((self.loss)(&logits)?.0, crossed))
    }

    /// `∂L/∂θ` from the largest kink-free step `s·10^-j`, `|s·10^-j| >= min`.
    fn kink_free_slope(&self, l: usize, p: Param, s: f64, min: f64) -> Result<Option<f64>> {
        let z0 = self.acts.last().expect("logits");
        let mut h = s;
        while h.abs() >= min {
            let (z, crossed) = self.shifted_logits(l, p, h)?;
            if !crossed {
                let dot: f64 = self
                    .grad_logits
                    .data()
                    .iter()
                    .zip(z.data().iter().zip(z0.data()))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
                return Ok(Some(dot / h));
            }
            h /= 10.0;
        }
        Ok(None)
    }

    /// Logits with parameter `p` of layer `l` shifted by `s`, and whether the
    /// shift flipped any ReLU.
    #[allow(clippy::needless_range_loop)]
    fn shifted_logits(&self, l: usize, p: Param, s: f64) -> Result<(Tensor<f64>, bool)> {
        let layers = self.net.layers();
        let layer = &layers[l];
        let [n, _, h, w] = self.pre[l].shape();
        let hw = h * w;
        let (o, pad) = match p {
            Param::Weight { o, .. } | Param::Bias { o } => (o, layer.padding()),
        };
        let base = &self.pre[l].data()[o * hw..(o + 1) * hw];
        debug_assert_eq!(n, 1);
        let mut moved = base.to_vec();
        match p {
            Param::Bias { .. } => moved.iter_mut().for_each(|v| *v += s),
            Param::Weight { i, dy, dx, .. } => {
                let src = &self.acts[l].data()[i * hw..(i + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            moved[y * w + x] += s * src[sy as usize * w + sx as usize];
                        }
                    }
                }
            }
        }
        let mut crossed = layer.activation() == Activation::Relu && crosses(base, &moved);
        let delta: Vec<f64> = moved
            .iter()
            .zip(base)
            .map(|(&m, &b)| activate(layer.activation(), m) - activate(layer.activation(), b))
            .collect();

        let Some(next) = layers.get(l + 1) else {
            let mut logits = self.pre[l].clone();
            logits.data_mut()[o * hw..(o + 1) * hw].copy_from_slice(&moved);
            return Ok((logits, crossed));
        };
        if delta.iter().all(|&d| d == 0.0) {
            return Ok((self.acts.last().expect("logits").clone(), crossed));
        }

        // Add the change of channel `o` to every pre-activation of layer l + 1.
        let k = next.kernel_size();
        let npad = next.padding();
        let cin = next.in_channels();
        let wts = next.weights().data();
        let mut pre_next = self.pre[l + 1].clone();
        for (q, out) in pre_next.data_mut().chunks_exact_mut(hw).enumerate() {
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wts[((q * cin + o) * k + ky) * k + kx];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - npad as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + kx as isize - npad as isize;
                            if sx >= 0 && sx < w as isize {
                                out[y * w + x] += wv * delta[sy as usize * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut pre = pre_next;
        for j in l + 1..layers.len() {
            if j > l + 1 {
                pre = conv2d_forward(&pre, &self.linear[j])?;
            }
            if layers[j].activation() == Activation::Relu {
                crossed |= crosses(self.pre[j].data(), pre.data());
                pre.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok((pre, crossed))
    }
}

/// Compares analytic and central-difference gradients for `net` on a
/// single-image `input`.
pub fn check_network(
    net: &Network<f64>,
    input: &Tensor<f64>,
    loss: &LossFn<'_>,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    if input.batch() != 1 {
        return Err(Error::InvalidInput("gradient check expects a single image".into()));
    }
    let start = Instant::now();
    let (logits, cache) = net.forward(input, true)?;
    let cache = cache.expect("cache requested");
    let (_, grad_logits) = loss(&logits)?;
    let analytic = net.backward(&cache, &grad_logits)?.flat();

    let linear: Vec<ConvLayer<f64>> = net
        .layers()
        .iter()
        .map(|l| ConvLayer::new(l.weights().clone(), l.bias().to_vec(), Activation::Identity))
        .collect::<Result<_>>()?;
    let acts = cache.activations().to_vec();
    let pre = linear.iter().zip(&acts).map(|(layer, a)| conv2d_forward(a, layer)).collect::<Result<Vec<_>>>()?;
    let checker = Checker { net, linear, acts, pre, loss, grad_logits };

    let total = analytic.len();
    let mut report =
        GradcheckReport { total_params: total, checked_per_layer: vec![0; net.layers().len()], ..Default::default() };
    let all: Vec<usize>;
    let indices = match &opts.indices {
        Some(v) => v.as_slice(),
        None => {
            all = (0..total).collect();
            &all
        }
    };
    for &k in indices {
        if opts.budget.is_some_and(|b| start.elapsed() >= b) {
            break;
        }
        let (l, p) =
            locate(net.layers(), k).ok_or_else(|| Error::InvalidInput(format!("parameter index {k} out of range")))?;
        let (up, kink_up) = checker.shifted_loss(l, p, opts.step)?;
        let (down, kink_down) = checker.shifted_loss(l, p, -opts.step)?;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[k];
        let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.denom_floor);
        let entry = ParamCheck { index: k, layer: l, analytic: a, numeric, rel_err };
        report.checked += 1;
        report.checked_per_layer[l] += 1;
        if rel_err > opts.rel_tol && (kink_up || kink_down) {
            report.kink_crossings.push(entry);
            if let Some(min) = opts.kink_min_step {
                for side in [opts.step, -opts.step] {
                    let Some(numeric) = checker.kink_free_slope(l, p, side, min)? else { continue };
                    let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.denom_floor);
                    if rel_err <= opts.rel_tol {
                        report.kink_resolved.push(ParamCheck { numeric, rel_err, ..entry });
                        break;
                    }
                }
            }
            continue;
        }
        if rel_err > opts.rel_tol {
            report.failures.push(entry);
        }
        if report.worst.is_none_or(|w| rel_err > w.rel_err) {
            report.worst = Some(entry);
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}
