//! The denoising network: eight 3×3 ReLU convolutions widening from 32 to
//! 256 channels, then a 1×1 convolution to a single logit channel.
//!
//! The final sigmoid is not part of the graph. Training folds it into the
//! loss and [`Network::predict`] applies it explicitly.

mod checkpoint;
pub mod gradcheck;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::downsample::Plane;
use crate::error::{shape_err, Error, Result};
use crate::rng;
use crate::tensor::{
    adam_step, conv2d_forward, sigmoid_scalar, Activation, AdamParams, AdamState, ConvLayer, Real, Tensor,
};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Output channels of the 3×3 layers.
pub const CHANNEL_PLAN: [usize; 8] = [32, 32, 64, 64, 128, 128, 256, 256];

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Convolution stack with one Adam state per weight and bias tensor.
#[derive(Debug)]
pub struct Network<T> {
    layers: Vec<ConvLayer<T>>,
    optim: Vec<(AdamState<T>, AdamState<T>)>,
    in_channels: usize,
    seed: u64,
    id: u64,
    version: u64,
}

impl<T: Real> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            optim: self.optim.clone(),
            in_channels: self.in_channels,
            seed: self.seed,
            id: fresh_id(),
            version: 0,
        }
    }
}

/// Activations saved by [`Network::forward`] for the backward pass.
/// `activations[0]` is the input and `activations[l + 1]` the output of
/// layer `l`; the last entry is the logits.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    activations: Vec<Tensor<T>>,
    network: u64,
    version: u64,
}

impl<T> ForwardCache<T> {
    pub fn activations(&self) -> &[Tensor<T>] {
        &self.activations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Loss gradient for every layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Real> Gradients<T> {
    /// All gradient entries in parameter order (per layer: weights, then bias).
    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|g| g.weights.data().iter().chain(&g.bias).copied()).collect()
    }
}

/// He-uniform layer: weights from `U(-b, b)`, `b = sqrt(6 / fan_in)`, zero bias.
fn he_uniform<T: Real>(
    cin: usize,
    cout: usize,
    k: usize,
    act: Activation,
    seed: u64,
    index: u64,
) -> Result<ConvLayer<T>> {
    let fan_in = (cin * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let mut r = rng::stream(seed, index);
    let weights = Tensor::from_fn([cout, cin, k, k], |_| T::from_f64((2.0 * rng::uniform01(&mut r) - 1.0) * bound))?;
    ConvLayer::new(weights, vec![T::zero(); cout], act)
}

/// The standard network for `in_channels` input channels.
pub fn build_network<T: Real>(in_channels: usize, seed: u64) -> Result<Network<T>> {
    Network::with_plan(in_channels, &CHANNEL_PLAN, seed)
}

impl<T: Real> Network<T> {
    /// 3×3 ReLU layers with the given output widths, then a 1×1 layer to
    /// one channel.
    pub fn with_plan(in_channels: usize, plan: &[usize], seed: u64) -> Result<Self> {
        if in_channels == 0 || plan.contains(&0) {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        let mut layers = Vec::with_capacity(plan.len() + 1);
        let mut cin = in_channels;
        for (i, &cout) in plan.iter().enumerate() {
            layers.push(he_uniform(cin, cout, 3, Activation::Relu, seed, i as u64)?);
            cin = cout;
        }
        layers.push(he_uniform(cin, 1, 1, Activation::Identity, seed, plan.len() as u64)?);
        Self::from_layers(layers, seed)
    }

    /// Wraps explicit layers. Consecutive layers must agree on channel counts.
    pub fn from_layers(layers: Vec<ConvLayer<T>>, seed: u64) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Config("network needs at least one layer".into()))?;
        let in_channels = first.in_channels();
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(shape_err!(
                    "layer produces {} channels but the next expects {}",
                    pair[0].out_channels(),
                    pair[1].in_channels()
                ));
            }
        }
        let optim = layers
            .iter()
            .map(|l| {
                (
                    AdamState::new(l.weights().len(), AdamParams::default()),
                    AdamState::new(l.bias().len(), AdamParams::default()),
                )
            })
            .collect();
        Ok(Self { layers, optim, in_channels, seed, id: fresh_id(), version: 0 })
    }

    /// Resets every optimizer state with new hyperparameters.
    pub fn set_adam_params(&mut self, params: AdamParams) {
        for (l, (w, b)) in self.layers.iter().zip(&mut self.optim) {
            *w = AdamState::new(l.weights().len(), params);
            *b = AdamState::new(l.bias().len(), params);
        }
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    /// Mutable layer access. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn optimizer_states(&self) -> &[(AdamState<T>, AdamState<T>)] {
        &self.optim
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Output channels of every layer, in order.
    pub fn channel_plan(&self) -> Vec<usize> {
        self.layers.iter().map(ConvLayer::out_channels).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// All parameters in order (per layer: weights, then bias).
    pub fn flat_params(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.weights().data().iter().chain(l.bias()).copied()).collect()
    }

    /// Logits for `input`, optionally keeping every activation for
    /// [`Network::backward`].
    pub fn forward(&self, input: &Tensor<T>, keep_cache: bool) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        if input.channels() != self.in_channels {
            return Err(shape_err!("input has {} channels, network expects {}", input.channels(), self.in_channels));
        }
        if keep_cache {
            let mut activations = Vec::with_capacity(self.layers.len() + 1);
            activations.push(input.clone());
            for layer in &self.layers {
                let next = conv2d_forward(activations.last().expect("non-empty"), layer)?;
                activations.push(next);
            }
            let logits = activations.last().expect("non-empty").clone();
            let cache = ForwardCache { activations, network: self.id, version: self.version };
            Ok((logits, Some(cache)))
        } else {
            let mut x = conv2d_forward(input, &self.layers[0])?;
            for layer in &self.layers[1..] {
                x = conv2d_forward(&x, layer)?;
            }
            Ok((x, None))
        }
    }

    /// Gradients of the loss for every parameter, given the loss gradient
    /// with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.network != self.id || cache.version != self.version {
            return Err(Error::InvalidInput(
                "forward cache is stale: the network changed after it was recorded".into(),
            ));
        }
        let acts = &cache.activations;
        let logits = acts.last().expect("cache holds the logits");
        if grad_logits.shape() != logits.shape() {
            return Err(shape_err!("logit gradient {:?} vs logits {:?}", grad_logits.shape(), logits.shape()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_logits.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let g = crate::tensor::conv_backward(&upstream, &acts[l], &acts[l + 1], layer, l > 0)?;
            grads.push(LayerGrads { weights: g.grad_weights, bias: g.grad_bias });
            if let Some(gi) = g.grad_input {
                upstream = gi;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// One Adam step on every weight and bias tensor.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(shape_err!("{} layer gradients for {} layers", grads.layers.len(), self.layers.len()));
        }
        for ((layer, (sw, sb)), g) in self.layers.iter_mut().zip(&mut self.optim).zip(&grads.layers) {
            let (w, b) = layer.params_mut();
            adam_step(w, g.weights.data(), sw)?;
            adam_step(b, &g.bias, sb)?;
        }
        self.version += 1;
        Ok(())
    }

    /// Sigmoid of the logits for a single-channel image, kept strictly
    /// inside `(0, 1)`.
    pub fn predict(&self, image: &Plane<T>) -> Result<Plane<T>> {
        let (h, w) = image.dims();
        let input = Tensor::from_plane(h, w, image.data().to_vec())?;
        let (logits, _) = self.forward(&input, false)?;
        Plane::new(h, w, logits.into_data().into_iter().map(probability).collect())
    }
}

/// `sigmoid(z)` clamped to the open unit interval.
#[inline]
pub fn probability<T: Real>(z: T) -> T {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / T::from_f64(2.0);
    sigmoid_scalar(z).max(lo).min(hi)
}
