//! Image containers, normalization, synthetic noise and quality metrics.

mod io;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::downsample::Plane;
use crate::error::{shape_err, Error, Result};
use crate::rng;

pub use io::{is_image_path, load_image, save_image};
pub use metrics::{mse, psnr, psnr_samples, ssim, ssim_image, SSIM_WINDOW};

/// Column names of the per-image metrics report.
pub const REPORT_HEADER: [&str; 7] =
    ["image", "psnr_noisy", "psnr_denoised", "ssim_noisy", "ssim_denoised", "epochs", "seconds"];

/// Storage type of the samples in the source or destination file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    U8,
    U16,
    F32,
}

impl SampleFormat {
    /// Largest representable value for integer formats.
    pub fn integer_max(self) -> Option<f64> {
        match self {
            SampleFormat::U8 => Some(255.0),
            SampleFormat::U16 => Some(65535.0),
            SampleFormat::F32 => None,
        }
    }
}

/// Decoded image or stack of images, stored planar as
/// `[slice][channel][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    samples: Vec<f32>,
    height: usize,
    width: usize,
    channels: usize,
    slices: usize,
    format: SampleFormat,
    data_range: f64,
}

impl ImageData {
    pub fn new(
        samples: Vec<f32>,
        (height, width): (usize, usize),
        channels: usize,
        slices: usize,
        format: SampleFormat,
        data_range: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || slices == 0 {
            return Err(shape_err!("image dimensions must be >= 1, got {height}x{width}x{channels}x{slices}"));
        }
        let len = [height, width, channels, slices]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidInput("image dimensions overflow".into()))?;
        if samples.len() != len {
            return Err(shape_err!("image needs {len} samples, got {}", samples.len()));
        }
        if !(data_range.is_finite() && data_range > 0.0) {
            return Err(Error::InvalidInput(format!("data range must be positive, got {data_range}")));
        }
        Ok(Self { samples, height, width, channels, slices, format, data_range })
    }

    /// Single-channel, single-slice image.
    pub fn from_plane(plane: &Plane<f32>, format: SampleFormat, data_range: f64) -> Result<Self> {
        Self::new(plane.data().to_vec(), plane.dims(), 1, 1, format, data_range)
    }

    /// Image from planes ordered slice-major, then channel.
    pub fn from_planes(planes: &[Plane<f32>], channels: usize, format: SampleFormat, data_range: f64) -> Result<Self> {
        let first = planes.first().ok_or_else(|| shape_err!("no planes given"))?;
        if channels == 0 || !planes.len().is_multiple_of(channels) {
            return Err(shape_err!("{} planes do not split into {channels} channels", planes.len()));
        }
        if planes.iter().any(|p| p.dims() != first.dims()) {
            return Err(shape_err!("planes differ in size"));
        }
        let samples = planes.iter().flat_map(|p| p.data().iter().copied()).collect();
        Self::new(samples, first.dims(), channels, planes.len() / channels, format, data_range)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn slices(&self) -> usize {
        self.slices
    }
    pub fn format(&self) -> SampleFormat {
        self.format
    }
    /// Nominal value range, e.g. 255 for 8-bit data.
    pub fn data_range(&self) -> f64 {
        self.data_range
    }
    pub fn samples(&self) -> &[f32] {
        &self.samples
    }
    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    /// `(height, width, channels, slices)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.height, self.width, self.channels, self.slices)
    }

    pub fn with_format(mut self, format: SampleFormat) -> Self {
        self.format = format;
        self
    }

    pub fn with_data_range(mut self, data_range: f64) -> Result<Self> {
        if !(data_range.is_finite() && data_range > 0.0) {
            return Err(Error::InvalidInput(format!("data range must be positive, got {data_range}")));
        }
        self.data_range = data_range;
        Ok(self)
    }

    /// Same layout and metadata with new samples.
    pub fn with_samples(&self, samples: Vec<f32>) -> Result<Self> {
        Self::new(samples, (self.height, self.width), self.channels, self.slices, self.format, self.data_range)
    }

    fn plane_range(&self, slice: usize, channel: usize) -> std::ops::Range<usize> {
        let hw = self.height * self.width;
        let start = (slice * self.channels + channel) * hw;
        start..start + hw
    }

    pub fn plane(&self, slice: usize, channel: usize) -> Plane<f32> {
        assert!(slice < self.slices && channel < self.channels, "plane index out of range");
        let data = self.samples[self.plane_range(slice, channel)].to_vec();
        Plane::new(self.height, self.width, data).expect("plane has image dimensions")
    }

    /// All planes, slice-major.
    pub fn planes(&self) -> Vec<Plane<f32>> {
        (0..self.slices).flat_map(|s| (0..self.channels).map(move |c| (s, c))).map(|(s, c)| self.plane(s, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }
}

/// One image per channel, each keeping every slice.
pub fn split_channels(img: &ImageData) -> Vec<ImageData> {
    (0..img.channels)
        .map(|c| {
            let samples = (0..img.slices).flat_map(|s| img.samples[img.plane_range(s, c)].iter().copied()).collect();
            ImageData::new(samples, (img.height, img.width), 1, img.slices, img.format, img.data_range)
                .expect("split keeps valid dimensions")
        })
        .collect()
}

/// Inverse of [`split_channels`]. Format and range come from the first image.
pub fn merge_channels(parts: &[ImageData]) -> Result<ImageData> {
    let first = parts.first().ok_or_else(|| shape_err!("nothing to merge"))?;
    if parts
        .iter()
        .any(|p| p.channels != 1 || (p.height, p.width, p.slices) != (first.height, first.width, first.slices))
    {
        return Err(shape_err!("merge needs single-channel images of identical size and slice count"));
    }
    let hw = first.height * first.width;
    let mut samples = Vec::with_capacity(hw * parts.len() * first.slices);
    for s in 0..first.slices {
        for p in parts {
            samples.extend_from_slice(&p.samples[s * hw..(s + 1) * hw]);
        }
    }
    ImageData::new(samples, (first.height, first.width), parts.len(), first.slices, first.format, first.data_range)
}

/// Adds i.i.d. `N(0, sigma²)` noise to every sample. The result is not
/// clipped and is stored as float.
pub fn add_gaussian_noise(img: &ImageData, sigma: f64, seed: u64) -> Result<ImageData> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let mut r = rng::stream(seed, 0);
    let mut out = Vec::with_capacity(img.samples.len());
    let mut chunks = img.samples.chunks_exact(2);
    for pair in &mut chunks {
        let (n0, n1) = rng::normal_pair(&mut r);
        out.push((pair[0] as f64 + sigma * n0) as f32);
        out.push((pair[1] as f64 + sigma * n1) as f32);
    }
    if let [last] = chunks.remainder() {
        out.push((*last as f64 + sigma * rng::normal_pair(&mut r).0) as f32);
    }
    Ok(img.with_samples(out)?.with_format(SampleFormat::F32))
}

/// Affine map of one channel onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub fn of(samples: &[f32]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty channel".into()));
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in samples {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("sample {v}")));
            }
            min = min.min(v as f64);
            max = max.max(v as f64);
        }
        Ok(Self { min, max })
    }

    /// The channel is constant, so normalization maps it to 0.5.
    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    #[inline]
    pub fn normalize(&self, v: f32) -> f32 {
        if self.is_degenerate() {
            0.5
        } else {
            ((v as f64 - self.min) / (self.max - self.min)) as f32
        }
    }

    #[inline]
    pub fn denormalize(&self, v: f32) -> f32 {
        (self.min + v as f64 * (self.max - self.min)) as f32
    }

    pub fn normalize_plane(&self, p: &Plane<f32>) -> Plane<f32> {
        p.map(|v| self.normalize(v))
    }

    pub fn denormalize_plane(&self, p: &Plane<f32>) -> Plane<f32> {
        p.map(|v| self.denormalize(v))
    }
}

/// Per-channel ranges of the image that was normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub channels: Vec<ChannelRange>,
}

impl NormParams {
    pub fn degenerate_channels(&self) -> Vec<usize> {
        (0..self.channels.len()).filter(|&c| self.channels[c].is_degenerate()).collect()
    }
}

/// Maps each channel (over all slices) onto `[0, 1]` by its min and max.
pub fn normalize(img: &ImageData) -> Result<(ImageData, NormParams)> {
    let mut ranges = Vec::with_capacity(img.channels);
    for part in split_channels(img) {
        ranges.push(ChannelRange::of(part.samples())?);
    }
    let out = map_channels(img, |c, v| ranges[c].normalize(v))?;
    Ok((out, NormParams { channels: ranges }))
}

pub fn denormalize(img: &ImageData, params: &NormParams) -> Result<ImageData> {
    if params.channels.len() != img.channels {
        return Err(shape_err!("{} channel ranges for {} channels", params.channels.len(), img.channels));
    }
    map_channels(img, |c, v| params.channels[c].denormalize(v))
}

fn map_channels(img: &ImageData, f: impl Fn(usize, f32) -> f32) -> Result<ImageData> {
    let hw = img.height * img.width;
    let samples = img.samples.iter().enumerate().map(|(k, &v)| f((k / hw) % img.channels, v)).collect();
    img.with_samples(samples)
}
