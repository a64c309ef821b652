//! PNG and TIFF reading and writing.
//!
//! Integer containers are quantized on save by clamping to `[0, max]` and
//! rounding half away from zero. Float TIFFs are written as-is and record
//! the nominal data range in the image description.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder as TiffDecoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType as TiffColor;

use super::{ImageData, SampleFormat};
use crate::error::{Error, Result};

const RANGE_KEY: &str = "data_range=";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Png,
    Tiff,
}

fn container(path: &Path) -> Result<Container> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(Container::Png),
        Some("tif" | "tiff") => Ok(Container::Tiff),
        _ => Err(Error::UnsupportedFormat(format!("{} (expected .png, .tif or .tiff)", path.display()))),
    }
}

/// Whether the extension names a container this module reads and writes.
pub fn is_image_path(path: impl AsRef<Path>) -> bool {
    container(path.as_ref()).is_ok()
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageData> {
    let path = path.as_ref();
    match container(path)? {
        Container::Png => load_png(path),
        Container::Tiff => load_tiff(path),
    }
}

pub fn save_image(img: &ImageData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match container(path)? {
        Container::Png => save_png(img, path),
        Container::Tiff => save_tiff(img, path),
    }
}

/// Interleaved `[y][x][c]` samples of one slice to planar `[c][y][x]`.
fn deinterleave<T: Copy>(src: &[T], channels: usize, out: &mut Vec<f32>, conv: impl Fn(T) -> f32) {
    for c in 0..channels {
        out.extend(src.iter().skip(c).step_by(channels).map(|&v| conv(v)));
    }
}

fn interleave(img: &ImageData, slice: usize) -> Vec<f32> {
    let hw = img.height() * img.width();
    let base = slice * img.channels() * hw;
    let s = img.samples();
    (0..hw).flat_map(|p| (0..img.channels()).map(move |c| s[base + c * hw + p])).collect()
}

fn quantize(v: f32, max: f32) -> f32 {
    v.clamp(0.0, max).round()
}

fn load_png(path: &Path) -> Result<ImageData> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::InvalidInput(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let channels = info.color_type.samples();
    let (h, w) = (info.height as usize, info.width as usize);
    let mut samples = Vec::with_capacity(h * w * channels);
    let (format, range) = match info.bit_depth {
        png::BitDepth::Eight => {
            let rows: Vec<u8> =
                buf.chunks(info.line_size).take(h).flat_map(|r| r[..w * channels].iter().copied()).collect();
            deinterleave(&rows, channels, &mut samples, f32::from);
            (SampleFormat::U8, 255.0)
        }
        png::BitDepth::Sixteen => {
            let rows: Vec<u16> = buf
                .chunks(info.line_size)
                .take(h)
                .flat_map(|r| r[..w * channels * 2].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])))
                .collect();
            deinterleave(&rows, channels, &mut samples, f32::from);
            (SampleFormat::U16, 65535.0)
        }
        d => return Err(Error::UnsupportedFormat(format!("{}: PNG bit depth {d:?}", path.display()))),
    };
    ImageData::new(samples, (h, w), channels, 1, format, range)
}

fn save_png(img: &ImageData, path: &Path) -> Result<()> {
    if img.slices() != 1 {
        return Err(Error::UnsupportedFormat("PNG holds a single slice; use TIFF for stacks".into()));
    }
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::UnsupportedFormat(format!("PNG with {c} channels"))),
    };
    let (depth, bytes) = match img.format() {
        SampleFormat::U8 => {
            (png::BitDepth::Eight, interleave(img, 0).into_iter().map(|v| quantize(v, 255.0) as u8).collect::<Vec<_>>())
        }
        SampleFormat::U16 => (
            png::BitDepth::Sixteen,
            interleave(img, 0).into_iter().flat_map(|v| (quantize(v, 65535.0) as u16).to_be_bytes()).collect(),
        ),
        SampleFormat::F32 => {
            return Err(Error::UnsupportedFormat("PNG cannot store float samples; use TIFF".into()));
        }
    };
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), img.width() as u32, img.height() as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| Error::Encode(e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| Error::Encode(e.to_string()))?;
    writer.finish().map_err(|e| Error::Encode(e.to_string()))?;
    Ok(())
}

fn tiff_err(path: &Path) -> impl Fn(tiff::TiffError) -> Error + '_ {
    move |e| match e {
        tiff::TiffError::UnsupportedError(u) => Error::UnsupportedFormat(format!("{}: {u}", path.display())),
        e => Error::Decode(format!("{}: {e}", path.display())),
    }
}

fn tiff_channels(color: TiffColor) -> Option<usize> {
    match color {
        TiffColor::Gray(_) => Some(1),
        TiffColor::GrayA(_) => Some(2),
        TiffColor::RGB(_) => Some(3),
        TiffColor::RGBA(_) => Some(4),
        _ => None,
    }
}

fn load_tiff(path: &Path) -> Result<ImageData> {
    let err = tiff_err(path);
    let mut dec = TiffDecoder::new(BufReader::new(File::open(path)?)).map_err(&err)?;
    let mut samples = Vec::new();
    let mut first: Option<(u32, u32, TiffColor)> = None;
    let mut format;
    let mut range = None;
    let mut slices = 0;
    loop {
        let (w, h) = dec.dimensions().map_err(&err)?;
        let color = dec.colortype().map_err(&err)?;
        let channels = tiff_channels(color)
            .ok_or_else(|| Error::UnsupportedFormat(format!("{}: TIFF color type {color:?}", path.display())))?;
        match first {
            None => first = Some((w, h, color)),
            Some(f) if f != (w, h, color) => {
                return Err(Error::Decode(format!("{}: pages differ in size or color type", path.display())));
            }
            Some(_) => {}
        }
        if range.is_none() {
            if let Ok(desc) = dec.get_tag_ascii_string(Tag::ImageDescription) {
                range = desc.split_whitespace().find_map(|t| t.strip_prefix(RANGE_KEY)?.parse::<f64>().ok());
            }
        }
        match dec.read_image().map_err(&err)? {
            DecodingResult::U8(v) => {
                format = SampleFormat::U8;
                deinterleave(&v, channels, &mut samples, f32::from);
            }
            DecodingResult::U16(v) => {
                format = SampleFormat::U16;
                deinterleave(&v, channels, &mut samples, f32::from);
            }
            DecodingResult::F32(v) => {
                format = SampleFormat::F32;
                deinterleave(&v, channels, &mut samples, |x| x);
            }
            _ => return Err(Error::UnsupportedFormat(format!("{}: TIFF sample type", path.display()))),
        }
        slices += 1;
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(&err)?;
    }
    let (w, h, color) = first.expect("at least one page");
    let channels = tiff_channels(color).expect("checked per page");
    let range = match (format.integer_max(), range) {
        (_, Some(r)) if r.is_finite() && r > 0.0 => r,
        (Some(m), _) => m,
        (None, _) => float_range(&samples),
    };
    ImageData::new(samples, (h as usize, w as usize), channels, slices, format, range)
}

/// Observed `max − min`, or 1 for constant data.
fn float_range(samples: &[f32]) -> f64 {
    let (lo, hi) = samples
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

fn save_tiff(img: &ImageData, path: &Path) -> Result<()> {
    let eerr = |e: tiff::TiffError| Error::Encode(format!("{}: {e}", path.display()));
    let mut enc = TiffEncoder::new(BufWriter::new(File::create(path)?)).map_err(eerr)?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let description = format!("{RANGE_KEY}{}", img.data_range());
    for s in 0..img.slices() {
        let data = interleave(img, s);
        macro_rules! page {
            ($color:ty, $conv:expr) => {{
                let buf: Vec<_> = data.iter().map($conv).collect();
                let mut image = enc.new_image::<$color>(w, h).map_err(eerr)?;
                image.encoder().write_tag(Tag::ImageDescription, description.as_str()).map_err(eerr)?;
                image.write_data(&buf).map_err(eerr)?;
            }};
        }
        match (img.format(), img.channels()) {
            (SampleFormat::U8, 1) => page!(colortype::Gray8, |&v| quantize(v, 255.0) as u8),
            (SampleFormat::U8, 3) => page!(colortype::RGB8, |&v| quantize(v, 255.0) as u8),
            (SampleFormat::U8, 4) => page!(colortype::RGBA8, |&v| quantize(v, 255.0) as u8),
            (SampleFormat::U16, 1) => page!(colortype::Gray16, |&v| quantize(v, 65535.0) as u16),
            (SampleFormat::U16, 3) => page!(colortype::RGB16, |&v| quantize(v, 65535.0) as u16),
            (SampleFormat::U16, 4) => page!(colortype::RGBA16, |&v| quantize(v, 65535.0) as u16),
            (SampleFormat::F32, 1) => page!(colortype::Gray32Float, |&v| v),
            (SampleFormat::F32, 3) => page!(colortype::RGB32Float, |&v| v),
            (SampleFormat::F32, 4) => page!(colortype::RGBA32Float, |&v| v),
            (f, c) => return Err(Error::UnsupportedFormat(format!("TIFF with {c} channels of {f:?}"))),
        }
    }
    Ok(())
}
