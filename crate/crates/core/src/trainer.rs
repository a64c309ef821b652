//! Self-supervised training loop for one noisy image.
//!
//! A fresh network is trained on the four downsampled pairs of the image,
//! scored after every epoch by the MSE between its prediction on the full
//! noisy image and that image, and stopped once the score has not strictly
//! improved for `patience_epochs` epochs. The result is the mean of the last
//! `avg_window` validation predictions.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::downsample::{make_exact_pairs, make_training_pairs, PairScheme, Plane};
use crate::error::{shape_err, Error, Result};
use crate::imaging::{ChannelRange, ImageData};
use crate::model::{build_network, Network};
use crate::rng;
use crate::tensor::{bce_with_logits, sigmoid_scalar, AdamParams, Real, Tensor};

/// Smallest side accepted by [`train_single_channel`].
pub const MIN_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Bce,
    /// Squared error on the sigmoid output.
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Checkerboard,
    Quad,
    /// Checkerboard pairs with the signal difference removed using the clean
    /// image. Only meaningful for ablations.
    Exact,
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}', expected one of: {}"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(Loss { Bce => "bce", Mse => "mse" });
named_enum!(Scheme { Checkerboard => "checkerboard", Quad => "quad", Exact => "exact" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub scheme: Scheme,
    pub lr: f64,
    pub patience_epochs: usize,
    pub avg_window: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Bce,
            scheme: Scheme::Checkerboard,
            lr: 1e-3,
            patience_epochs: 100,
            avg_window: 100,
            max_epochs: 20_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.patience_epochs == 0 {
            return Err(Error::Config("patience must be at least 1 epoch".into()));
        }
        if self.avg_window == 0 {
            return Err(Error::Config("averaging window must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    /// The input was constant and was returned as is.
    DegenerateInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early-stopping state and the buffer of recent validation outputs.
#[derive(Debug, Clone)]
pub struct TrainState {
    epoch: usize,
    best: f64,
    since_best: usize,
    window: usize,
    outputs: VecDeque<Plane<f32>>,
    history: Vec<f64>,
}

impl TrainState {
    pub fn new(avg_window: usize) -> Result<Self> {
        if avg_window == 0 {
            return Err(Error::Config("averaging window must be at least 1".into()));
        }
        Ok(Self {
            epoch: 0,
            best: f64::INFINITY,
            since_best: 0,
            window: avg_window,
            outputs: VecDeque::with_capacity(avg_window),
            history: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_best(&self) -> usize {
        self.since_best
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Buffered validation outputs, oldest first.
    pub fn outputs(&self) -> impl ExactSizeIterator<Item = &Plane<f32>> {
        self.outputs.iter()
    }

    /// Records one epoch's validation score and output.
    pub fn update(&mut self, score: f64, output: Plane<f32>, patience: usize) -> Result<StopDecision> {
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("validation score {score} at epoch {}", self.epoch + 1)));
        }
        if let Some(first) = self.outputs.front() {
            if first.dims() != output.dims() {
                return Err(shape_err!("validation output {:?} vs buffered {:?}", output.dims(), first.dims()));
            }
        }
        self.epoch += 1;
        self.history.push(score);
        if score < self.best {
            self.best = score;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        if self.outputs.len() == self.window {
            self.outputs.pop_front();
        }
        self.outputs.push_back(output);
        Ok(if self.since_best >= patience { StopDecision::Stop } else { StopDecision::Continue })
    }
}

pub fn update_stop_state(
    state: &mut TrainState,
    score: f64,
    output: Plane<f32>,
    config: &TrainConfig,
) -> Result<StopDecision> {
    state.update(score, output, config.patience_epochs)
}

/// Mean of the buffered outputs (f64, oldest first), mapped back through
/// `range`.
pub fn finalize_output(state: &TrainState, range: &ChannelRange) -> Result<Plane<f32>> {
    let first = state.outputs.front().ok_or_else(|| Error::InvalidInput("no validation outputs to average".into()))?;
    let mut acc = vec![0.0f64; first.len()];
    for img in &state.outputs {
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += v as f64;
        }
    }
    let n = state.outputs.len() as f64;
    let (h, w) = first.dims();
    Plane::new(h, w, acc.into_iter().map(|a| range.denormalize((a / n) as f32)).collect())
}

/// Prediction on the full image and its MSE against that image.
pub fn validate<T: Real>(net: &Network<T>, normalized_noisy: &Plane<T>) -> Result<(f64, Plane<T>)> {
    let out = net.predict(normalized_noisy)?;
    let sum: f64 = out
        .data()
        .iter()
        .zip(normalized_noisy.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok((sum / out.len() as f64, out))
}

/// Mean squared error of `sigmoid(logits)` against `target`, with the
/// gradient taken through the sigmoid.
pub fn mse_with_logits<T: Real>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if logits.shape() != target.shape() {
        return Err(shape_err!("{:?} vs {:?}", logits.shape(), target.shape()));
    }
    let n = T::from_f64(logits.len() as f64);
    let two = T::from_f64(2.0);
    let mut total = 0.0f64;
    let mut grad = logits.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let p = sigmoid_scalar(*g);
        let d = p - t;
        total += d.as_f64() * d.as_f64();
        *g = two * d * p * (T::one() - p) / n;
    }
    Ok((total / logits.len() as f64, grad))
}

/// Per-epoch telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: [f64; 4],
    pub val_mse: f64,
    pub best_val_mse: f64,
    pub epochs_since_best: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct DenoiseResult {
    pub denoised: Plane<f32>,
    pub epochs_run: usize,
    pub val_history: Vec<f64>,
    pub wall_time: Duration,
    pub stop_reason: StopReason,
}

impl DenoiseResult {
    pub fn best_val_mse(&self) -> Option<f64> {
        self.val_history.iter().copied().reduce(f64::min)
    }
}

struct Batch {
    input: Tensor<f32>,
    target: Tensor<f32>,
}

fn plane_tensor(p: &Plane<f32>) -> Result<Tensor<f32>> {
    Tensor::from_plane(p.height(), p.width(), p.data().to_vec())
}

fn training_batches(noisy: &Plane<f32>, clean: Option<&Plane<f32>>, scheme: Scheme) -> Result<Vec<Batch>> {
    let pairs = match (scheme, clean) {
        (Scheme::Checkerboard, _) => make_training_pairs(noisy, PairScheme::Checkerboard)?,
        (Scheme::Quad, _) => make_training_pairs(noisy, PairScheme::Quad)?,
        (Scheme::Exact, Some(clean)) => {
            let mut pairs = make_exact_pairs(noisy, clean)?;
            for pair in &mut pairs {
                for t in pair.target.data_mut() {
                    *t = t.clamp(0.0, 1.0);
                }
            }
            pairs
        }
        (Scheme::Exact, None) => return Err(Error::Config("the exact scheme needs a clean image".into())),
    };
    pairs.iter().map(|p| Ok(Batch { input: plane_tensor(&p.input)?, target: plane_tensor(&p.target)? })).collect()
}

fn check_inputs(noisy: &Plane<f32>, clean: Option<&Plane<f32>>, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let (h, w) = noisy.dims();
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidInput(format!("image must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")));
    }
    if noisy.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("noisy image contains NaN or infinite samples".into()));
    }
    match (config.scheme, clean) {
        (Scheme::Exact, None) => Err(Error::Config("the exact scheme needs a clean image".into())),
        (Scheme::Exact, Some(c)) if c.dims() != noisy.dims() => {
            Err(shape_err!("clean image {:?} vs noisy {:?}", c.dims(), noisy.dims()))
        }
        (Scheme::Exact, Some(c)) if c.data().iter().any(|v| !v.is_finite()) => {
            Err(Error::NonFinite("clean image contains NaN or infinite samples".into()))
        }
        _ => Ok(()),
    }
}

/// Denoises one 2-D image.
pub fn train_single_channel(
    noisy: &Plane<f32>,
    config: &TrainConfig,
    clean: Option<&Plane<f32>>,
) -> Result<DenoiseResult> {
    train_single_channel_observed(noisy, config, clean, &mut |_, _| {})
}

/// [`train_single_channel`] calling `observer` after every epoch with the
/// telemetry record and the normalized validation output.
pub fn train_single_channel_observed(
    noisy: &Plane<f32>,
    config: &TrainConfig,
    clean: Option<&Plane<f32>>,
    observer: &mut dyn FnMut(&EpochRecord, &Plane<f32>),
) -> Result<DenoiseResult> {
    let start = Instant::now();
    check_inputs(noisy, clean, config)?;
    let range = ChannelRange::of(noisy.data())?;
    if range.is_degenerate() {
        return Ok(DenoiseResult {
            denoised: noisy.clone(),
            epochs_run: 0,
            val_history: Vec::new(),
            wall_time: start.elapsed(),
            stop_reason: StopReason::DegenerateInput,
        });
    }
    let x = range.normalize_plane(noisy);
    let clean = clean.filter(|_| config.scheme == Scheme::Exact).map(|c| range.normalize_plane(c));
    let batches = training_batches(&x, clean.as_ref(), config.scheme)?;

    let mut net = build_network::<f32>(1, config.seed)?;
    net.set_adam_params(AdamParams::with_lr(config.lr));
    let mut state = TrainState::new(config.avg_window)?;
    let stop_reason = loop {
        let mut train_loss = [0.0; 4];
        for (slot, batch) in train_loss.iter_mut().zip(&batches) {
            let (logits, cache) = net.forward(&batch.input, true)?;
            let (loss, grad) = match config.loss {
                Loss::Bce => bce_with_logits(&logits, &batch.target)?,
                Loss::Mse => mse_with_logits(&logits, &batch.target)?,
            };
            let grads = net.backward(&cache.expect("cache requested"), &grad)?;
            net.apply_gradients(&grads)?;
            *slot = loss;
        }
        if train_loss.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("training loss diverged at epoch {}", state.epoch() + 1)));
        }
        let (score, output) = validate(&net, &x)?;
        let decision = state.update(score, output, config.patience_epochs)?;
        let record = EpochRecord {
            epoch: state.epoch(),
            train_loss,
            val_mse: score,
            best_val_mse: state.best(),
            epochs_since_best: state.epochs_since_best(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        };
        observer(&record, state.outputs.back().expect("just pushed"));
        if decision == StopDecision::Stop {
            break StopReason::Patience;
        }
        if state.epoch() >= config.max_epochs {
            break StopReason::MaxEpochs;
        }
    };
    let denoised = finalize_output(&state, &range)?;
    Ok(DenoiseResult {
        denoised,
        epochs_run: state.epoch(),
        val_history: state.history,
        wall_time: start.elapsed(),
        stop_reason,
    })
}

/// Which plane of a stack a run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlaneId {
    pub slice: usize,
    pub channel: usize,
}

/// Outcome of [`denoise_image`].
#[derive(Debug, Clone)]
pub struct ImageResult {
    pub image: ImageData,
    /// One entry per plane, slice-major.
    pub runs: Vec<(PlaneId, DenoiseResult)>,
}

impl ImageResult {
    pub fn epochs_run(&self) -> usize {
        self.runs.iter().map(|(_, r)| r.epochs_run).sum()
    }
}

/// Seed used for one plane of a stack.
pub fn plane_seed(seed: u64, id: PlaneId) -> u64 {
    rng::derive_seed(seed, &[id.slice as u64, id.channel as u64])
}

/// Denoises every channel of every slice independently.
pub fn denoise_image(image: &ImageData, config: &TrainConfig, clean: Option<&ImageData>) -> Result<ImageResult> {
    denoise_image_observed(image, config, clean, &|_, _| {})
}

/// [`denoise_image`] forwarding every epoch record, tagged with its plane.
/// Planes train in parallel; the result does not depend on scheduling.
pub fn denoise_image_observed(
    image: &ImageData,
    config: &TrainConfig,
    clean: Option<&ImageData>,
    observer: &(dyn Fn(PlaneId, &EpochRecord) + Sync),
) -> Result<ImageResult> {
    config.validate()?;
    if let Some(c) = clean {
        if c.shape() != image.shape() {
            return Err(shape_err!("clean image {:?} vs noisy {:?}", c.shape(), image.shape()));
        }
    }
    if config.scheme == Scheme::Exact && clean.is_none() {
        return Err(Error::Config("the exact scheme needs a clean image".into()));
    }
    let ids: Vec<PlaneId> = (0..image.slices())
        .flat_map(|slice| (0..image.channels()).map(move |channel| PlaneId { slice, channel }))
        .collect();
    let runs = ids
        .par_iter()
        .map(|&id| {
            let noisy = image.plane(id.slice, id.channel);
            let clean = clean.map(|c| c.plane(id.slice, id.channel));
            let cfg = TrainConfig { seed: plane_seed(config.seed, id), ..config.clone() };
            let result = train_single_channel_observed(&noisy, &cfg, clean.as_ref(), &mut |rec, _| observer(id, rec))?;
            Ok((id, result))
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = runs.iter().flat_map(|(_, r)| r.denoised.data().iter().copied()).collect();
    Ok(ImageResult { image: image.with_samples(samples)?, runs })
}
