use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use n2f_core::imaging::{add_gaussian_noise, load_image};
use rayon::prelude::*;

use crate::args::BenchmarkArgs;
use crate::denoise::{denoise_loaded, plane_runs};
use crate::evaluate::{quality, write_report, ReportRow};
use crate::files::{by_stem, ensure_dir, save, Telemetry};
use crate::manifest::{display, manifest_path, FileOutcome, RunManifest};
use crate::noise::noise_seed;
use crate::usage;

enum Noisy {
    File(PathBuf),
    Synthetic { sigma: f64, seed: u64 },
}

pub fn run(args: &BenchmarkArgs) -> anyhow::Result<bool> {
    let config = args.train.config(args.scheme);
    config.validate()?;
    if let Some(s) = args.sigma {
        if !(s.is_finite() && s >= 0.0) {
            return Err(usage(format!("--sigma must be finite and >= 0, got {s}")));
        }
    }
    let clean = by_stem(&args.clean)?;
    let noisy_index = args.input.as_deref().map(by_stem).transpose()?;
    if let Some(out) = &args.output {
        ensure_dir(out)?;
    }
    let telemetry = args.train.telemetry.as_deref().map(Telemetry::create).transpose()?;

    let mut manifest = RunManifest::new("benchmark", Some(config.clone()));
    manifest.setting("clean", display(&args.clean));
    manifest.setting("input", args.input.as_deref().map(display));
    manifest.setting("sigma", args.sigma);
    manifest.setting("output", args.output.as_deref().map(display));

    let mut jobs = Vec::new();
    for (i, (name, clean_path)) in clean.iter().enumerate() {
        let noisy = match (&noisy_index, args.sigma) {
            (Some(index), _) => match index.get(name) {
                Some(p) => Noisy::File(p.clone()),
                None => {
                    log::warn!("{}: no noisy image with this stem, skipped", clean_path.display());
                    manifest.push(FileOutcome::skipped(clean_path, "no noisy counterpart"));
                    continue;
                }
            },
            (None, Some(sigma)) => Noisy::Synthetic { sigma, seed: noise_seed(config.seed, i) },
            (None, None) => unreachable!("clap requires --input or --sigma"),
        };
        jobs.push((name.clone(), clean_path.clone(), noisy));
    }
    if let Some(index) = &noisy_index {
        for (name, p) in index {
            if !clean.contains_key(name) {
                log::warn!("{}: no clean image with this stem, skipped", p.display());
                manifest.push(FileOutcome::skipped(p, "no clean counterpart"));
            }
        }
    }

    let results: Vec<(FileOutcome, Option<ReportRow>)> = jobs
        .par_iter()
        .map(|(name, clean_path, noisy)| {
            let done = (|| -> anyhow::Result<(FileOutcome, ReportRow)> {
                let clean = load_image(clean_path).with_context(|| format!("loading {}", clean_path.display()))?;
                let (noisy_img, source, seed) = match noisy {
                    Noisy::File(p) => (load_image(p).with_context(|| format!("loading {}", p.display()))?, p, None),
                    Noisy::Synthetic { sigma, seed } => {
                        (add_gaussian_noise(&clean, *sigma, *seed)?, clean_path, Some(*seed))
                    }
                };
                let start = Instant::now();
                let result = denoise_loaded(&display(source), &noisy_img, Some(&clean), &config, telemetry.as_ref())?;
                let seconds = start.elapsed().as_secs_f64();
                let (psnr_noisy, ssim_noisy) = quality(&noisy_img, &clean)?;
                let (psnr_denoised, ssim_denoised) = quality(&result.image, &clean)?;
                let out = args.output.as_ref().map(|dir| dir.join(format!("{name}.tif")));
                if let Some(out) = &out {
                    save(&result.image, out).with_context(|| format!("writing {}", out.display()))?;
                }
                let row = ReportRow {
                    image: name.clone(),
                    psnr_noisy,
                    psnr_denoised,
                    ssim_noisy,
                    ssim_denoised,
                    epochs: result.epochs_run() as f64,
                    seconds,
                };
                log::info!(
                    "{name}: PSNR {psnr_noisy:.2} -> {psnr_denoised:.2} dB, SSIM {ssim_noisy:.3} -> {ssim_denoised:.3}"
                );
                let mut outcome = FileOutcome::ok(source, out.as_deref());
                outcome.seed = seed;
                outcome.runs = plane_runs(&result, config.seed);
                outcome.metrics.extend([
                    ("psnr_noisy".to_string(), psnr_noisy),
                    ("psnr_denoised".to_string(), psnr_denoised),
                    ("ssim_noisy".to_string(), ssim_noisy),
                    ("ssim_denoised".to_string(), ssim_denoised),
                ]);
                Ok((outcome, row))
            })();
            match done {
                Ok((o, r)) => (o, Some(r)),
                Err(e) => {
                    log::error!("{name}: {e:#}");
                    (FileOutcome::error(clean_path, &e), None)
                }
            }
        })
        .collect();

    let mut rows = Vec::new();
    for (outcome, row) in results {
        manifest.push(outcome);
        rows.extend(row);
    }
    if let Some(mean) = ReportRow::mean(&rows) {
        println!(
            "{} images: PSNR {:.2} -> {:.2} dB, SSIM {:.4} -> {:.4}, {:.1} s/image",
            rows.len(),
            mean.psnr_noisy,
            mean.psnr_denoised,
            mean.ssim_noisy,
            mean.ssim_denoised,
            mean.seconds
        );
        manifest.aggregate.extend([
            ("psnr_noisy".to_string(), mean.psnr_noisy),
            ("psnr_denoised".to_string(), mean.psnr_denoised),
            ("ssim_noisy".to_string(), mean.ssim_noisy),
            ("ssim_denoised".to_string(), mean.ssim_denoised),
        ]);
    }
    if let Some(report) = &args.report {
        write_report(report, &rows)?;
    }
    if let Some(t) = telemetry {
        t.finish()?;
    }
    match (&args.report, &args.output) {
        (Some(report), _) => manifest.write(&manifest_path(report, false))?,
        (None, Some(out)) => manifest.write(&manifest_path(out, true))?,
        (None, None) => {}
    }
    Ok(manifest.all_ok())
}
