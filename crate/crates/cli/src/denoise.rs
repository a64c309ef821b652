use anyhow::Context;
use n2f_core::imaging::{load_image, ImageData};
use n2f_core::trainer::{denoise_image_observed, plane_seed, ImageResult};
use n2f_core::{Scheme, TrainConfig};
use rayon::prelude::*;

use crate::args::DenoiseArgs;
use crate::files::{by_stem, discover, ensure_dir, output_for, save, stem, Telemetry};
use crate::manifest::{display, manifest_path, FileOutcome, PlaneRun, RunManifest};
use crate::usage;

/// Trains on `noisy` (and `clean` for the exact scheme), streaming epochs to
/// `telemetry`.
pub fn denoise_loaded(
    label: &str,
    noisy: &ImageData,
    clean: Option<&ImageData>,
    config: &TrainConfig,
    telemetry: Option<&Telemetry>,
) -> anyhow::Result<ImageResult> {
    let clean = clean.filter(|_| config.scheme == Scheme::Exact);
    let result = denoise_image_observed(noisy, config, clean, &|id, rec| {
        if let Some(t) = telemetry {
            t.record(label, id, rec);
        }
    })?;
    Ok(result)
}

pub fn plane_runs(result: &ImageResult, seed: u64) -> Vec<PlaneRun> {
    result
        .runs
        .iter()
        .map(|(id, r)| PlaneRun {
            slice: id.slice,
            channel: id.channel,
            seed: plane_seed(seed, *id),
            epochs: r.epochs_run,
            stop_reason: r.stop_reason,
            best_val_mse: r.best_val_mse(),
        })
        .collect()
}

pub fn run(args: &DenoiseArgs) -> anyhow::Result<bool> {
    let config = args.train.config(args.scheme);
    config.validate()?;
    let found = discover(&args.input)?;
    let clean_index = match (&args.clean, found.is_dir) {
        (Some(c), true) => Some(by_stem(c)?),
        _ => None,
    };
    if config.scheme == Scheme::Exact && args.clean.is_none() {
        return Err(usage("--scheme exact requires --clean"));
    }
    if found.is_dir {
        if args.output.is_file() {
            return Err(usage(format!("{} must be a directory for directory input", args.output.display())));
        }
        ensure_dir(&args.output)?;
    }
    let telemetry = args.train.telemetry.as_deref().map(Telemetry::create).transpose()?;

    let outcomes: Vec<FileOutcome> = found
        .images
        .par_iter()
        .map(|input| {
            let out = output_for(input, &args.output, found.is_dir);
            let clean_path = match (&clean_index, &args.clean) {
                (Some(index), _) => index.get(&stem(input)).cloned(),
                (None, Some(c)) => Some(c.clone()),
                (None, None) => None,
            };
            let done = (|| -> anyhow::Result<FileOutcome> {
                let noisy = load_image(input).with_context(|| format!("loading {}", input.display()))?;
                let clean = match (&clean_path, config.scheme) {
                    (Some(p), Scheme::Exact) => {
                        Some(load_image(p).with_context(|| format!("loading {}", p.display()))?)
                    }
                    (None, Scheme::Exact) => anyhow::bail!("no clean image with stem '{}'", stem(input)),
                    _ => None,
                };
                let result = denoise_loaded(&display(input), &noisy, clean.as_ref(), &config, telemetry.as_ref())?;
                save(&result.image, &out).with_context(|| format!("writing {}", out.display()))?;
                log::info!("{} -> {} ({} epochs)", input.display(), out.display(), result.epochs_run());
                Ok(FileOutcome { runs: plane_runs(&result, config.seed), ..FileOutcome::ok(input, Some(&out)) })
            })();
            done.unwrap_or_else(|e| {
                log::error!("{}: {e:#}", input.display());
                FileOutcome::error(input, &e)
            })
        })
        .collect();

    let mut manifest = RunManifest::new("denoise", Some(config));
    manifest.setting("input", display(&args.input));
    manifest.setting("output", display(&args.output));
    manifest.setting("clean", args.clean.as_deref().map(display));
    for o in outcomes {
        manifest.push(o);
    }
    for p in &found.others {
        manifest.push(FileOutcome::skipped(p, "not a .png, .tif or .tiff file"));
    }
    if let Some(t) = telemetry {
        t.finish()?;
    }
    let anchor = match found.images.first() {
        Some(first) if !found.is_dir => output_for(first, &args.output, false),
        _ => args.output.clone(),
    };
    manifest.write(&manifest_path(&anchor, found.is_dir))?;
    Ok(manifest.all_ok())
}
