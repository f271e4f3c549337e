use mirror_core::affect::AffectState;
use mirror_core::emotion::argmax;
use mirror_core::EmotionDistribution;
use proptest::prelude::*;

fn distribution() -> impl Strategy<Value = [f64; 7]> {
    prop::array::uniform7(0.0f64..1.0).prop_filter_map("all zero", |w| {
        EmotionDistribution::from_weights(w, 0).map(|d| d.probs)
    })
}

proptest! {
    #[test]
    fn ema_stays_on_simplex(stream in prop::collection::vec(distribution(), 1..40), alpha in 0.0f64..=1.0) {
        let mut s = AffectState::new();
        for (i, p) in stream.iter().enumerate() {
            s = s.smooth_ema(&EmotionDistribution { probs: *p, source_timestamp: i as u64 }, alpha);
            let ema = s.ema().unwrap();
            prop_assert!(ema.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((ema.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    /// Alternating or random streams never switch the label more than once
    /// per dwell period, and a switch always lands on the current argmax.
    #[test]
    fn hysteresis(
        stream in prop::collection::vec((distribution(), 1u64..400), 1..120),
        alpha in 0.05f64..=1.0,
        margin in 0.0f64..0.5,
        dwell in 0u64..1500,
    ) {
        let mut s = AffectState::new();
        let mut now = 0;
        let mut label = None;
        let mut last_switch: Option<u64> = None;
        for (p, dt) in stream {
            now += dt;
            s = s.smooth_ema(&EmotionDistribution { probs: p, source_timestamp: now }, alpha);
            let (next, l) = s.stable_label(margin, dwell, now);
            s = next;
            if l != label {
                prop_assert_eq!(l, Some(argmax(s.ema().unwrap())));
                if let Some(prev) = last_switch {
                    prop_assert!(now - prev >= dwell, "switched at {} and {}", prev, now);
                }
                last_switch = Some(now);
                label = l;
            }
        }
    }

    #[test]
    fn adversarial_alternation_is_rate_limited(period in 1u64..300, dwell in 100u64..2000) {
        let a = EmotionDistribution::peaked(mirror_core::EmotionCategory::Anger, 0.95, 0);
        let b = EmotionDistribution::peaked(mirror_core::EmotionCategory::Happiness, 0.95, 0);
        let mut s = AffectState::new();
        let mut switches = Vec::new();
        let mut label = None;
        let horizon = 20_000;
        let mut now = 0;
        while now < horizon {
            let d = if (now / period) % 2 == 0 { a } else { b };
            s = s.smooth_ema(&d, 1.0);
            let (next, l) = s.stable_label(0.1, dwell, now);
            s = next;
            if l != label {
                switches.push(now);
                label = l;
            }
            now += 33;
        }
        for w in switches.windows(2) {
            prop_assert!(w[1] - w[0] >= dwell);
        }
    }
}
