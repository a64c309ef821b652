use std::path::Path;

use anyhow::Context;
use n2f_core::imaging::{psnr, ssim_image, ImageData, REPORT_HEADER};
use serde::Serialize;

/// PSNR and SSIM of `img` against `clean`, on the clean image's range.
pub fn quality(img: &ImageData, clean: &ImageData) -> anyhow::Result<(f64, f64)> {
    let range = clean.data_range();
    Ok((psnr(img, clean, range)?, ssim_image(img, clean, range)?))
}

/// One row of the benchmark report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub image: String,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub ssim_noisy: f64,
    pub ssim_denoised: f64,
    pub epochs: f64,
    pub seconds: f64,
}

impl ReportRow {
    fn values(&self) -> [f64; 6] {
        [self.psnr_noisy, self.psnr_denoised, self.ssim_noisy, self.ssim_denoised, self.epochs, self.seconds]
    }

    /// Column-wise mean, labelled `mean`.
    pub fn mean(rows: &[ReportRow]) -> Option<ReportRow> {
        if rows.is_empty() {
            return None;
        }
        let mut acc = [0.0; 6];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let n = rows.len() as f64;
        let [psnr_noisy, psnr_denoised, ssim_noisy, ssim_denoised, epochs, seconds] = acc.map(|a| a / n);
        Some(ReportRow { image: "mean".into(), psnr_noisy, psnr_denoised, ssim_noisy, ssim_denoised, epochs, seconds })
    }
}

/// Rows followed by their mean.
pub fn write_report(path: &Path, rows: &[ReportRow]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(REPORT_HEADER)?;
    for row in rows.iter().cloned().chain(ReportRow::mean(rows)) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
