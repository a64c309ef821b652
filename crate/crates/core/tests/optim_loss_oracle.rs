use n2f_core::rng;
use n2f_core::tensor::{adam_step, bce_with_logits, mse_loss, AdamParams, AdamState, Tensor};
use n2f_oracle::{bce, sigmoid, ScriptedAdam};
use proptest::prelude::*;

fn row(v: &[f64]) -> Tensor<f64> {
    Tensor::new([1, 1, 1, v.len()], v.to_vec()).unwrap()
}

#[test]
fn adam_tracks_scripted_oracle_for_1000_steps() {
    let len = 37;
    let mut r = rng::stream(2024, 3);
    let mut w: Vec<f64> = (0..len).map(|_| rng::normal_pair(&mut r).0).collect();
    let mut w_ref = w.clone();
    let mut state = AdamState::new(len, AdamParams::default());
    let mut scripted = ScriptedAdam::new(len, 1e-3);
    let mut worst = 0.0f64;
    for step in 0..1000 {
        let g: Vec<f64> = (0..len)
            .map(|j| {
                let n = rng::normal_pair(&mut r).0;
                // occasional exact zeros and large spikes
                if (step + j) % 29 == 0 {
                    0.0
                } else if (step * j) % 97 == 5 {
                    50.0 * n
                } else {
                    n + w[j]
                }
            })
            .collect();
        adam_step(&mut w, &g, &mut state).unwrap();
        scripted.step(&mut w_ref, &g);
        for (a, b) in w.iter().zip(&w_ref) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-12, "max deviation {worst:e}");
    assert_eq!(state.step_count(), 1000);
}

#[test]
fn adam_first_step_hand_value() {
    let mut w = [0.0f64];
    let mut s = AdamState::new(1, AdamParams::with_lr(1e-3));
    adam_step(&mut w, &[1.0], &mut s).unwrap();
    assert!((w[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-18);
    let mut z = [0.7f64];
    let mut s = AdamState::new(1, AdamParams::default());
    adam_step(&mut z, &[0.0], &mut s).unwrap();
    assert_eq!(z[0], 0.7);
    assert_eq!((s.first_moment()[0], s.second_moment()[0]), (0.0, 0.0));
}

#[test]
fn loss_hand_values() {
    let (l, g) = bce_with_logits(&row(&[0.0]), &row(&[0.5])).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-10);
    assert_eq!(g.data()[0], 0.0);
    let (l, g) = bce_with_logits(&row(&[40.0, 40.0]), &row(&[1.0, 1.0])).unwrap();
    assert!(l.abs() < 1e-10 && g.data().iter().all(|v| v.abs() < 1e-10));
    let (l, g) = bce_with_logits(&row(&[-40.0, -40.0]), &row(&[1.0, 1.0])).unwrap();
    assert!((l - 40.0).abs() < 1e-10);
    assert!(g.data().iter().all(|v| (v + 0.5).abs() < 1e-10));
    let (l, g) = mse_loss(&row(&[1.0, 3.0]), &row(&[1.0, 1.0])).unwrap();
    assert!((l - 2.0).abs() < 1e-10);
    assert_eq!(g.data(), &[0.0, 2.0]);
}

proptest! {
    #[test]
    fn fused_bce_matches_stable_composition(z in -20.0f64..20.0, t in 0.0f64..=1.0) {
        let (l, _) = bce_with_logits(&row(&[z]), &row(&[t])).unwrap();
        prop_assert!((l - bce(sigmoid(z), sigmoid(-z), t)).abs() <= 1e-10);
    }

    #[test]
    fn fused_bce_matches_literal_composition_when_well_conditioned(z in -12.0f64..12.0, t in 0.0f64..=1.0) {
        let p = sigmoid(z);
        let (l, _) = bce_with_logits(&row(&[z]), &row(&[t])).unwrap();
        prop_assert!((l - bce(p, 1.0 - p, t)).abs() <= 1e-10);
    }

    #[test]
    fn bce_gradient_matches_finite_difference(z in -8.0f64..8.0, t in 0.0f64..=1.0) {
        let f = |v: f64| bce_with_logits(&row(&[v]), &row(&[t])).unwrap().0;
        let fd = n2f_oracle::central_difference(f, z, 1e-5);
        let (_, g) = bce_with_logits(&row(&[z]), &row(&[t])).unwrap();
        prop_assert!((fd - g.data()[0]).abs() <= 1e-8);
    }
}
