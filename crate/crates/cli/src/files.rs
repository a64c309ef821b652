use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use n2f_core::imaging::{is_image_path, save_image, ImageData, SampleFormat};
use n2f_core::trainer::{EpochRecord, PlaneId};
use serde::Serialize;

use crate::usage;

/// Files named by `input`: the path itself, or the sorted regular files of a
/// directory split into images and everything else.
#[derive(Debug, Default)]
pub struct Discovered {
    pub is_dir: bool,
    pub images: Vec<PathBuf>,
    pub others: Vec<PathBuf>,
}

pub fn discover(input: &Path) -> anyhow::Result<Discovered> {
    let meta = fs::metadata(input).map_err(|e| usage(format!("cannot read {}: {e}", input.display())))?;
    if !meta.is_dir() {
        if !is_image_path(input) {
            return Err(usage(format!("{} is not a .png, .tif or .tiff file", input.display())));
        }
        return Ok(Discovered { is_dir: false, images: vec![input.to_path_buf()], others: Vec::new() });
    }
    let mut entries = Vec::new();
    for entry in fs::read_dir(input).with_context(|| format!("listing {}", input.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            entries.push(entry.path());
        }
    }
    entries.sort();
    let (images, others) = entries.into_iter().partition(|p| is_image_path(p));
    Ok(Discovered { is_dir: true, images, others })
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Images of a directory keyed by file stem.
pub fn by_stem(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let found = discover(dir)?;
    if !found.is_dir {
        return Err(usage(format!("{} must be a directory", dir.display())));
    }
    let mut map = BTreeMap::new();
    for p in found.images {
        let key = stem(&p);
        if let Some(prev) = map.insert(key.clone(), p.clone()) {
            return Err(usage(format!("{} and {} share the stem '{key}'", prev.display(), p.display())));
        }
    }
    Ok(map)
}

/// Where a file-or-directory command writes the result for `input`.
pub fn output_for(input: &Path, output: &Path, input_is_dir: bool) -> PathBuf {
    if input_is_dir || output.is_dir() {
        output.join(input.file_name().expect("discovered files have names"))
    } else {
        output.to_path_buf()
    }
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

/// Saves `img`, choosing an integer sample type when a float image goes to
/// PNG.
pub fn save(img: &ImageData, path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png && img.format() == SampleFormat::F32 {
        let fmt = if img.data_range() <= 255.0 { SampleFormat::U8 } else { SampleFormat::U16 };
        save_image(&img.clone().with_format(fmt), path)?;
    } else {
        save_image(img, path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TelemetryLine<'a> {
    file: &'a str,
    slice: usize,
    channel: usize,
    #[serde(flatten)]
    record: &'a EpochRecord,
}

/// JSON-lines sink shared by concurrent training runs.
pub struct Telemetry {
    out: Mutex<BufWriter<File>>,
}

impl Telemetry {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        let file = File::create(path).map_err(|e| usage(format!("cannot create {}: {e}", path.display())))?;
        Ok(Self { out: Mutex::new(BufWriter::new(file)) })
    }

    pub fn record(&self, file: &str, id: PlaneId, record: &EpochRecord) {
        let line = TelemetryLine { file, slice: id.slice, channel: id.channel, record };
        let mut out = self.out.lock().expect("telemetry lock");
        let written =
            serde_json::to_writer(&mut *out, &line).map_err(std::io::Error::from).and_then(|_| out.write_all(b"\n"));
        if let Err(e) = written {
            log::warn!("telemetry write failed: {e}");
        }
    }

    pub fn finish(self) -> anyhow::Result<()> {
        self.out.into_inner().expect("telemetry lock").flush()?;
        Ok(())
    }
}
