use n2f_core::downsample::Plane;
use n2f_core::imaging::ChannelRange;
use n2f_core::trainer::{finalize_output, train_single_channel_observed, StopDecision, TrainConfig, TrainState};
use n2f_core::StopReason;
use proptest::prelude::*;

/// Drives the state machine the way the trainer does and returns the epoch
/// of the stop, if any.
fn run_schedule(scores: &[f64], patience: usize, max_epochs: usize) -> Option<usize> {
    let mut st = TrainState::new(1).unwrap();
    for &s in scores {
        let d = st.update(s, Plane::filled(1, 1, 0.0).unwrap(), patience).unwrap();
        if d == StopDecision::Stop || st.epoch() >= max_epochs {
            return Some(st.epoch());
        }
    }
    None
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    // few distinct levels so that ties and plateaus are common
    prop::collection::vec(prop_oneof![0u8..4, 0u8..20].prop_map(|v| v as f64 / 4.0), 1..300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn early_stop_matches_brute_force_replay(s in scores(), patience in 1usize..40, cap in 1usize..400) {
        prop_assert_eq!(run_schedule(&s, patience, cap), n2f_oracle::replay_patience(&s, patience, cap));
    }

    #[test]
    fn output_is_mean_of_last_window(n in 1usize..60, window in 1usize..25, h in 1usize..4, w in 1usize..4, seed in any::<u32>()) {
        let images: Vec<Vec<f32>> = (0..n)
            .map(|k| (0..h * w).map(|p| ((seed as usize + 31 * k + 7 * p) % 101) as f32 / 100.0).collect())
            .collect();
        let mut st = TrainState::new(window).unwrap();
        for img in &images {
            st.update(1.0, Plane::new(h, w, img.clone()).unwrap(), usize::MAX).unwrap();
        }
        let range = ChannelRange { min: -3.0, max: 5.0 };
        let got = finalize_output(&st, &range).unwrap();
        let want: Vec<f32> = n2f_oracle::mean_of_last(&images, window)
            .into_iter()
            .map(|m| (range.min + (m as f32) as f64 * (range.max - range.min)) as f32)
            .collect();
        prop_assert!(got.data().iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn trained_run_output_is_mean_of_its_last_validations() {
    let img = Plane::from_fn(12, 10, |y, x| ((y * 3 + x * 5) % 7) as f32 * 10.0 + (x as f32).sin()).unwrap();
    let cfg = TrainConfig { patience_epochs: 2, avg_window: 3, max_epochs: 6, seed: 8, ..TrainConfig::default() };
    let mut outputs = Vec::new();
    let mut records = Vec::new();
    let r = train_single_channel_observed(&img, &cfg, None, &mut |rec, out| {
        records.push(rec.clone());
        outputs.push(out.data().to_vec());
    })
    .unwrap();
    assert_eq!(r.epochs_run, outputs.len());
    assert_eq!(r.val_history.len(), r.epochs_run);
    let range = ChannelRange::of(img.data()).unwrap();
    let want: Vec<f32> =
        n2f_oracle::mean_of_last(&outputs, cfg.avg_window).into_iter().map(|m| range.denormalize(m as f32)).collect();
    assert!(r.denoised.data().iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()));
    let expected_stop = n2f_oracle::replay_patience(&r.val_history, cfg.patience_epochs, cfg.max_epochs);
    assert_eq!(expected_stop, Some(r.epochs_run));
    match r.stop_reason {
        StopReason::Patience => assert_eq!(records.last().unwrap().epochs_since_best, cfg.patience_epochs),
        StopReason::MaxEpochs => assert_eq!(r.epochs_run, cfg.max_epochs),
        StopReason::DegenerateInput => unreachable!(),
    }
    // reported validation MSE equals a recomputation from the emitted output
    let x = range.normalize_plane(&img);
    for (rec, out) in records.iter().zip(&outputs) {
        let mse =
            out.iter().zip(x.data()).map(|(&p, &t)| (p as f64 - t as f64).powi(2)).sum::<f64>() / out.len() as f64;
        assert_eq!(mse, rec.val_mse);
    }
}
