//! Checkerboard and 2×2 phase downsampling, and the training pairs built
//! from them.
//!
//! For an `m × n` image `x` with even sides, the "up" halves keep every row
//! and compact each row's pixels of one checkerboard class:
//!
//! ```text
//! even_up(i, j) = x(i, 2j + (i mod 2))        odd_up(i, j) = x(i, 2j + ((i+1) mod 2))
//! even_left(i, j) = x(2i + (j mod 2), j)      odd_left(i, j) = x(2i + ((j+1) mod 2), j)
//! ```
//!
//! "Even" and "odd" refer to the parity of `i + j` in the source image.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Real;

/// Row-major 2-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(shape_err!("plane dimensions must be >= 1, got {height}x{width}"));
        }
        if data.len() != height * width {
            return Err(shape_err!("{height}x{width} plane needs {} samples, got {}", height * width, data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds a plane from `f(y, x)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    /// `(height, width)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Plane<U> {
        Plane { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Top-left `height × width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(shape_err!("cannot crop {}x{} to {height}x{width}", self.height, self.width));
        }
        Self::from_fn(height, width, |y, x| self.at(y, x))
    }

    /// Drops the last row and/or column when the side is odd.
    pub fn crop_even(&self) -> Result<Self> {
        self.crop(self.height & !1, self.width & !1)
    }
}

/// Which way a checkerboard half is compacted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Rows kept, columns halved.
    Up,
    /// Columns kept, rows halved.
    Left,
}

/// Checkerboard class, by parity of `row + column`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn other(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }

    fn offset(self, k: usize) -> usize {
        match self {
            Parity::Even => k % 2,
            Parity::Odd => (k + 1) % 2,
        }
    }
}

/// 2×2 phase of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrant {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Quadrant {
    /// `(row, column)` offset inside each 2×2 block.
    pub fn offset(self) -> (usize, usize) {
        match self {
            Quadrant::TopLeft => (0, 0),
            Quadrant::TopRight => (0, 1),
            Quadrant::BottomLeft => (1, 0),
            Quadrant::BottomRight => (1, 1),
        }
    }
}

/// The four checkerboard halves of an even-sized image.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkerboard<T> {
    pub even_up: Plane<T>,
    pub odd_up: Plane<T>,
    pub even_left: Plane<T>,
    pub odd_left: Plane<T>,
}

impl<T: Copy> Checkerboard<T> {
    pub fn half(&self, orientation: Orientation, parity: Parity) -> &Plane<T> {
        match (orientation, parity) {
            (Orientation::Up, Parity::Even) => &self.even_up,
            (Orientation::Up, Parity::Odd) => &self.odd_up,
            (Orientation::Left, Parity::Even) => &self.even_left,
            (Orientation::Left, Parity::Odd) => &self.odd_left,
        }
    }
}

fn require_even<T: Copy>(x: &Plane<T>) -> Result<()> {
    if !x.height.is_multiple_of(2) || !x.width.is_multiple_of(2) {
        return Err(shape_err!("downsampling needs even dimensions, got {}x{}", x.height, x.width));
    }
    Ok(())
}

fn half<T: Copy>(x: &Plane<T>, orientation: Orientation, parity: Parity) -> Plane<T> {
    let (m, n) = x.dims();
    let built = match orientation {
        Orientation::Up => Plane::from_fn(m, n / 2, |i, j| x.at(i, 2 * j + parity.offset(i))),
        Orientation::Left => Plane::from_fn(m / 2, n, |i, j| x.at(2 * i + parity.offset(j), j)),
    };
    built.expect("halves of a non-empty even image are non-empty")
}

/// Splits an even-sized image into its four checkerboard halves.
pub fn checkerboard_down<T: Copy>(x: &Plane<T>) -> Result<Checkerboard<T>> {
    require_even(x)?;
    Ok(Checkerboard {
        even_up: half(x, Orientation::Up, Parity::Even),
        odd_up: half(x, Orientation::Up, Parity::Odd),
        even_left: half(x, Orientation::Left, Parity::Even),
        odd_left: half(x, Orientation::Left, Parity::Odd),
    })
}

/// Inverse of [`checkerboard_down`] for one orientation.
pub fn checkerboard_recombine<T: Copy>(even: &Plane<T>, odd: &Plane<T>, orientation: Orientation) -> Result<Plane<T>> {
    if even.dims() != odd.dims() {
        return Err(shape_err!("halves differ in shape: {:?} vs {:?}", even.dims(), odd.dims()));
    }
    let (h, w) = even.dims();
    match orientation {
        Orientation::Up => Plane::from_fn(h, 2 * w, |y, x| {
            let src = if (y + x) % 2 == 0 { even } else { odd };
            src.at(y, x / 2)
        }),
        Orientation::Left => Plane::from_fn(2 * h, w, |y, x| {
            let src = if (y + x) % 2 == 0 { even } else { odd };
            src.at(y / 2, x)
        }),
    }
}

/// The four 2×2 phase images of an even-sized image.
#[derive(Debug, Clone, PartialEq)]
pub struct Quads<T> {
    pub top_left: Plane<T>,
    pub top_right: Plane<T>,
    pub bottom_left: Plane<T>,
    pub bottom_right: Plane<T>,
}

impl<T: Copy> Quads<T> {
    pub fn get(&self, q: Quadrant) -> &Plane<T> {
        match q {
            Quadrant::TopLeft => &self.top_left,
            Quadrant::TopRight => &self.top_right,
            Quadrant::BottomLeft => &self.bottom_left,
            Quadrant::BottomRight => &self.bottom_right,
        }
    }
}

pub fn quad_down<T: Copy>(x: &Plane<T>) -> Result<Quads<T>> {
    require_even(x)?;
    let (m, n) = x.dims();
    let phase = |q: Quadrant| {
        let (dy, dx) = q.offset();
        Plane::from_fn(m / 2, n / 2, |i, j| x.at(2 * i + dy, 2 * j + dx))
    };
    Ok(Quads {
        top_left: phase(Quadrant::TopLeft)?,
        top_right: phase(Quadrant::TopRight)?,
        bottom_left: phase(Quadrant::BottomLeft)?,
        bottom_right: phase(Quadrant::BottomRight)?,
    })
}

/// Where the two images of a training pair come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Checkerboard { orientation: Orientation, input: Parity },
    Quad { input: Quadrant, target: Quadrant },
}

/// One (input, target) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DownsamplePair<T> {
    pub input: Plane<T>,
    pub target: Plane<T>,
    pub source: PairSource,
}

/// Downsampling used to build training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairScheme {
    Checkerboard,
    Quad,
}

/// Pair order for the checkerboard scheme.
pub const CHECKERBOARD_ORDER: [(Orientation, Parity); 4] = [
    (Orientation::Up, Parity::Even),
    (Orientation::Up, Parity::Odd),
    (Orientation::Left, Parity::Even),
    (Orientation::Left, Parity::Odd),
];

/// Pair order for the quad scheme: two horizontal, then two vertical
/// neighbour mappings.
pub const QUAD_ORDER: [(Quadrant, Quadrant); 4] = [
    (Quadrant::TopLeft, Quadrant::TopRight),
    (Quadrant::TopRight, Quadrant::TopLeft),
    (Quadrant::TopLeft, Quadrant::BottomLeft),
    (Quadrant::BottomLeft, Quadrant::TopLeft),
];

fn require_min_size<T: Copy>(x: &Plane<T>) -> Result<()> {
    if x.height < 2 || x.width < 2 {
        return Err(Error::InvalidInput(format!(
            "image must be at least 2x2 to build training pairs, got {}x{}",
            x.height, x.width
        )));
    }
    Ok(())
}

/// The four training pairs of `image`, in fixed order. Odd sides are
/// cropped by one row/column first.
pub fn make_training_pairs<T: Copy>(image: &Plane<T>, scheme: PairScheme) -> Result<Vec<DownsamplePair<T>>> {
    require_min_size(image)?;
    let x = image.crop_even()?;
    match scheme {
        PairScheme::Checkerboard => {
            let cb = checkerboard_down(&x)?;
            Ok(CHECKERBOARD_ORDER
                .iter()
                .map(|&(orientation, input)| DownsamplePair {
                    input: cb.half(orientation, input).clone(),
                    target: cb.half(orientation, input.other()).clone(),
                    source: PairSource::Checkerboard { orientation, input },
                })
                .collect())
        }
        PairScheme::Quad => {
            let q = quad_down(&x)?;
            Ok(QUAD_ORDER
                .iter()
                .map(|&(input, target)| DownsamplePair {
                    input: q.get(input).clone(),
                    target: q.get(target).clone(),
                    source: PairSource::Quad { input, target },
                })
                .collect())
        }
    }
}

/// Checkerboard pairs whose targets have the signal difference between the
/// two halves removed using the ground truth `clean`:
/// `target = x_target − (s_target − s_input)`.
pub fn make_exact_pairs<T: Real>(noisy: &Plane<T>, clean: &Plane<T>) -> Result<Vec<DownsamplePair<T>>> {
    if noisy.dims() != clean.dims() {
        return Err(shape_err!("noisy {:?} and clean {:?} differ in shape", noisy.dims(), clean.dims()));
    }
    let mut pairs = make_training_pairs(noisy, PairScheme::Checkerboard)?;
    let s = checkerboard_down(&clean.crop_even()?)?;
    for pair in &mut pairs {
        let PairSource::Checkerboard { orientation, input } = pair.source else {
            unreachable!("checkerboard scheme yields checkerboard pairs");
        };
        let s_in = s.half(orientation, input);
        let s_tgt = s.half(orientation, input.other());
        for ((t, &a), &b) in pair.target.data.iter_mut().zip(s_tgt.data()).zip(s_in.data()) {
            *t = *t - (a - b);
        }
    }
    Ok(pairs)
}
