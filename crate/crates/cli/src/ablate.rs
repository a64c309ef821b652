use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use n2f_core::imaging::{add_gaussian_noise, load_image, ImageData};
use n2f_core::{Scheme, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::AblateArgs;
use crate::denoise::denoise_loaded;
use crate::evaluate::quality;
use crate::files::{by_stem, Telemetry};
use crate::manifest::{display, manifest_path, FileOutcome, RunManifest};
use crate::noise::noise_seed;
use crate::usage;

/// Schemes compared, with their report labels.
pub const VARIANTS: [(Scheme, &str); 3] =
    [(Scheme::Checkerboard, "normal"), (Scheme::Quad, "quad"), (Scheme::Exact, "exact")];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantScore {
    pub psnr: f64,
    pub ssim: f64,
    pub epochs: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub image: String,
    pub psnr_noisy: f64,
    pub ssim_noisy: f64,
    /// In [`VARIANTS`] order.
    pub variants: [VariantScore; 3],
}

impl AblationRow {
    pub fn variant(&self, scheme: Scheme) -> &VariantScore {
        let i = VARIANTS.iter().position(|(s, _)| *s == scheme).expect("every scheme is a variant");
        &self.variants[i]
    }
}

/// Mean PSNR of the noisy inputs and of each variant.
pub fn mean_psnr(rows: &[AblationRow]) -> Option<(f64, [f64; 3])> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let noisy = rows.iter().map(|r| r.psnr_noisy).sum::<f64>() / n;
    let per = std::array::from_fn(|k| rows.iter().map(|r| r.variants[k].psnr).sum::<f64>() / n);
    Some((noisy, per))
}

/// Corrupts every clean image once and denoises that realization with each
/// variant, all using `base.seed` for training.
pub fn ablate_images(
    images: &[(String, ImageData)],
    sigma: f64,
    base: &TrainConfig,
    telemetry: Option<&Telemetry>,
) -> anyhow::Result<Vec<AblationRow>> {
    let noisy: Vec<ImageData> = images
        .iter()
        .enumerate()
        .map(|(i, (_, clean))| add_gaussian_noise(clean, sigma, noise_seed(base.seed, i)))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..images.len()).flat_map(|i| (0..VARIANTS.len()).map(move |k| (i, k))).collect();
    let scores: Vec<VariantScore> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let (name, clean) = &images[i];
            let (scheme, label) = VARIANTS[k];
            let config = TrainConfig { scheme, ..base.clone() };
            let start = Instant::now();
            let result = denoise_loaded(&format!("{name}:{label}"), &noisy[i], Some(clean), &config, telemetry)
                .with_context(|| format!("{name} ({label})"))?;
            let seconds = start.elapsed().as_secs_f64();
            let (psnr, ssim) = quality(&result.image, clean)?;
            log::info!("{name} [{label}]: {psnr:.2} dB, SSIM {ssim:.4}, {} epochs", result.epochs_run());
            Ok(VariantScore { psnr, ssim, epochs: result.epochs_run(), seconds })
        })
        .collect::<anyhow::Result<_>>()?;
    images
        .iter()
        .enumerate()
        .map(|(i, (name, clean))| {
            let (psnr_noisy, ssim_noisy) = quality(&noisy[i], clean)?;
            Ok(AblationRow {
                image: name.clone(),
                psnr_noisy,
                ssim_noisy,
                variants: std::array::from_fn(|k| scores[i * VARIANTS.len() + k]),
            })
        })
        .collect()
}

fn write_csv(path: &Path, rows: &[AblationRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["image".to_string(), "psnr_noisy".to_string()];
    header.extend(VARIANTS.iter().map(|(_, l)| format!("psnr_{l}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.image.clone(), r.psnr_noisy.to_string()];
        rec.extend(r.variants.iter().map(|v| v.psnr.to_string()));
        w.write_record(&rec)?;
    }
    if let Some((noisy, per)) = mean_psnr(rows) {
        let mut rec = vec!["mean".to_string(), noisy.to_string()];
        rec.extend(per.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &AblateArgs) -> anyhow::Result<bool> {
    if !(args.sigma.is_finite() && args.sigma >= 0.0) {
        return Err(usage(format!("--sigma must be finite and >= 0, got {}", args.sigma)));
    }
    let base = args.train.config(Scheme::Checkerboard);
    base.validate()?;
    let index = by_stem(&args.clean)?;
    let telemetry = args.train.telemetry.as_deref().map(Telemetry::create).transpose()?;

    let mut manifest = RunManifest::new("ablate", Some(base.clone()));
    manifest.setting("clean", display(&args.clean));
    manifest.setting("sigma", args.sigma);
    let mut images = Vec::new();
    for (name, path) in &index {
        match load_image(path) {
            Ok(img) => images.push((name.clone(), img)),
            Err(e) => manifest.push(FileOutcome::error(path, &anyhow::Error::from(e))),
        }
    }
    let rows = ablate_images(&images, args.sigma, &base, telemetry.as_ref())?;
    for r in &rows {
        let mut o = FileOutcome::ok(&index[&r.image], None);
        o.metrics.insert("psnr_noisy".into(), r.psnr_noisy);
        for ((_, label), v) in VARIANTS.iter().zip(&r.variants) {
            o.metrics.insert(format!("psnr_{label}"), v.psnr);
        }
        manifest.push(o);
    }
    println!("{:<24} {:>8} {:>8} {:>8} {:>8}", "image", "noisy", "normal", "quad", "exact");
    for r in &rows {
        let [a, b, c] = r.variants.map(|v| v.psnr);
        println!("{:<24} {:>8.2} {a:>8.2} {b:>8.2} {c:>8.2}", r.image, r.psnr_noisy);
    }
    if let Some((noisy, per)) = mean_psnr(&rows) {
        let [a, b, c] = per;
        println!("{:<24} {noisy:>8.2} {a:>8.2} {b:>8.2} {c:>8.2}", "mean");
        manifest.aggregate.insert("psnr_noisy".into(), noisy);
        for ((_, label), v) in VARIANTS.iter().zip(per) {
            manifest.aggregate.insert(format!("psnr_{label}"), v);
        }
    }
    if let Some(t) = telemetry {
        t.finish()?;
    }
    if let Some(report) = &args.report {
        write_csv(report, &rows)?;
        manifest.write(&manifest_path(report, false))?;
    }
    Ok(manifest.all_ok())
}
