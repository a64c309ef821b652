use std::path::{Path, PathBuf};

use anyhow::Context;
use n2f_core::imaging::{add_gaussian_noise, load_image};
use n2f_core::rng::derive_seed;

use crate::args::AddNoiseArgs;
use crate::files::{discover, ensure_dir, save, stem};
use crate::manifest::{display, manifest_path, FileOutcome, RunManifest};
use crate::usage;

const NOISE_LABEL: u64 = 0x006e_6f69_7365;

/// Seed of the noise realization for the `index`-th file of a sorted set.
pub fn noise_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[NOISE_LABEL, index as u64])
}

fn tiff_name(input: &Path) -> String {
    format!("{}.tif", stem(input))
}

pub fn run(args: &AddNoiseArgs) -> anyhow::Result<bool> {
    if !(args.sigma.is_finite() && args.sigma >= 0.0) {
        return Err(usage(format!("--sigma must be finite and >= 0, got {}", args.sigma)));
    }
    let seed = args.seed.unwrap_or(0);
    let found = discover(&args.input)?;
    let single_out: Option<PathBuf> = if found.is_dir {
        ensure_dir(&args.output)?;
        None
    } else if args.output.is_dir() {
        Some(args.output.join(tiff_name(&args.input)))
    } else {
        let ext = args.output.extension().map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_ref().and_then(|e| e.to_str()), Some("tif" | "tiff")) {
            return Err(usage("noisy images are float data; --output must end in .tif or .tiff"));
        }
        Some(args.output.clone())
    };

    let mut manifest = RunManifest::new("add-noise", None);
    manifest.setting("input", display(&args.input));
    manifest.setting("output", display(&args.output));
    manifest.setting("sigma", args.sigma);
    manifest.setting("seed", seed);
    for (i, input) in found.images.iter().enumerate() {
        let out = single_out.clone().unwrap_or_else(|| args.output.join(tiff_name(input)));
        let file_seed = noise_seed(seed, i);
        let done = (|| -> anyhow::Result<()> {
            let clean = load_image(input).with_context(|| format!("loading {}", input.display()))?;
            let noisy = add_gaussian_noise(&clean, args.sigma, file_seed)?;
            save(&noisy, &out).with_context(|| format!("writing {}", out.display()))
        })();
        manifest.push(match done {
            Ok(()) => FileOutcome { seed: Some(file_seed), ..FileOutcome::ok(input, Some(&out)) },
            Err(e) => {
                log::error!("{}: {e:#}", input.display());
                FileOutcome::error(input, &e)
            }
        });
    }
    for p in &found.others {
        manifest.push(FileOutcome::skipped(p, "not a .png, .tif or .tiff file"));
    }
    let anchor = single_out.unwrap_or_else(|| args.output.clone());
    manifest.write(&manifest_path(&anchor, found.is_dir))?;
    Ok(manifest.all_ok())
}
