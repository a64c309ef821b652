use n2f_core::downsample::Plane;
use n2f_core::imaging::{
    add_gaussian_noise, denormalize, load_image, normalize, psnr, save_image, ssim, ImageData, SampleFormat,
};
use proptest::prelude::*;

fn stack() -> impl Strategy<Value = ImageData> {
    (1usize..6, 1usize..6, 1usize..=4, 1usize..=3).prop_flat_map(|(h, w, c, s)| {
        prop::collection::vec(-500.0f32..500.0, h * w * c * s)
            .prop_map(move |v| ImageData::new(v, (h, w), c, s, SampleFormat::F32, 255.0).unwrap())
    })
}

fn ramp_image(h: usize, w: usize) -> ImageData {
    let p = Plane::from_fn(h, w, |y, x| ((y * 7 + x * 3) % 256) as f32).unwrap();
    ImageData::from_plane(&p, SampleFormat::U8, 255.0).unwrap()
}

proptest! {
    #[test]
    fn normalize_round_trips(img in stack()) {
        let (n, params) = normalize(&img).unwrap();
        prop_assert!(n.samples().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let back = denormalize(&n, &params).unwrap();
        for (c, r) in params.channels.iter().enumerate() {
            let scale = (r.max - r.min).max(r.min.abs()).max(1.0);
            for s in 0..img.slices() {
                let (a, b) = (img.plane(s, c), back.plane(s, c));
                if r.is_degenerate() {
                    prop_assert!(b.data().iter().all(|&v| v as f64 == r.min + 0.5 * (r.max - r.min)));
                } else {
                    prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| ((x - y) as f64).abs() <= 1e-6 * scale));
                }
            }
        }
    }

    #[test]
    fn ssim_matches_windowed_definition(h in 11usize..20, w in 11usize..20, seed in any::<u16>()) {
        let a = Plane::from_fn(h, w, |y, x| ((y * 13 + x * 7 + seed as usize) % 31) as f32 / 30.0).unwrap();
        let b = Plane::from_fn(h, w, |y, x| ((y * 5 + x * 11 + seed as usize / 3) % 17) as f32 / 16.0).unwrap();
        let got = ssim(&a, &b, 1.0).unwrap();
        let to64 = |p: &Plane<f32>| p.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let want = n2f_oracle::ssim_direct(&to64(&a), &to64(&b), h, w, 1.0);
        prop_assert!((got - want).abs() < 1e-10, "{} vs {}", got, want);
    }
}

#[test]
fn gaussian_noise_statistics() {
    let clean = ramp_image(321, 481);
    let noisy = add_gaussian_noise(&clean, 25.0, 17).unwrap();
    assert_eq!(noisy.format(), SampleFormat::F32);
    let n = clean.samples().len() as f64;
    let diffs: Vec<f64> = noisy.samples().iter().zip(clean.samples()).map(|(&a, &b)| a as f64 - b as f64).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var / 625.0 - 1.0).abs() < 0.01, "variance {var}");
    assert!(mean.abs() < 0.2);
    let p = psnr(&noisy, &clean, 255.0).unwrap();
    assert!((p - 20.17).abs() <= 0.10, "psnr {p}");
    assert!(noisy.samples().iter().any(|&v| v < 0.0) && noisy.samples().iter().any(|&v| v > 255.0));
}

#[test]
fn noise_is_seeded_and_zero_sigma_is_identity() {
    let clean = ramp_image(9, 11);
    assert_eq!(add_gaussian_noise(&clean, 5.0, 1).unwrap(), add_gaussian_noise(&clean, 5.0, 1).unwrap());
    assert_ne!(add_gaussian_noise(&clean, 5.0, 1).unwrap(), add_gaussian_noise(&clean, 5.0, 2).unwrap());
    let same = add_gaussian_noise(&clean, 0.0, 3).unwrap();
    assert_eq!(same.samples(), clean.samples());
    assert!(add_gaussian_noise(&clean, -1.0, 3).is_err());
}

#[test]
fn float_stack_survives_tiff_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stack.tif");
    let img = ImageData::new(
        (0..2 * 3 * 5 * 4).map(|i| i as f32 * 0.37 - 9.0).collect(),
        (5, 4),
        3,
        2,
        SampleFormat::F32,
        255.0,
    )
    .unwrap();
    save_image(&img, &path).unwrap();
    assert_eq!(load_image(&path).unwrap(), img);
}
