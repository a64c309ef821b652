//! Deterministic inputs shared by the benchmarks.

use n2f_core::tensor::{Activation, ConvLayer, Tensor};
use n2f_core::Plane;

/// Smooth pseudo-random values in `[-1, 1)` that do not depend on an RNG.
pub fn fill(len: usize, salt: usize) -> Vec<f32> {
    (0..len).map(|i| (((i * 2_654_435_761 + salt * 40_503) % 10_007) as f32 / 5_003.5) - 1.0).collect()
}

pub fn tensor(shape: [usize; 4], salt: usize) -> Tensor<f32> {
    Tensor::new(shape, fill(shape.iter().product(), salt)).expect("shape matches data")
}

pub fn layer(cin: usize, cout: usize, k: usize) -> ConvLayer<f32> {
    let weights = tensor([cout, cin, k, k], 3);
    let scale = 1.0 / ((cin * k * k) as f32).sqrt();
    let weights = weights.map(|w| w * scale);
    ConvLayer::new(weights, vec![0.01; cout], Activation::Relu).expect("layer")
}

/// Grayscale test card with values in `[0, 255]`.
pub fn card(h: usize, w: usize) -> Plane<f32> {
    Plane::from_fn(h, w, |y, x| ((y / 8 + x / 8) % 2) as f32 * 160.0 + ((x * y) % 37) as f32 * 2.5).expect("non-empty")
}
