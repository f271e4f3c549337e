mod oracle;

use mirror_core::fixtures::{self, TINY_LM};
use mirror_core::lm::{LmConfig, LmModel};
use proptest::prelude::*;

fn tiny() -> (mirror_core::container::WeightContainer, LmModel) {
    let c = fixtures::tiny_lm();
    let m = LmModel::load(&c).unwrap();
    (c, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn suffix_changes_do_not_leak_backwards(
        ids in prop::collection::vec(0u32..256, 2..24),
        cut in any::<prop::sample::Index>(),
        replacement in prop::collection::vec(0u32..256, 24),
    ) {
        let (_, m) = tiny();
        let i = cut.index(ids.len() - 1) + 1;
        let mut other = ids.clone();
        other[i..].copy_from_slice(&replacement[..ids.len() - i]);
        let a = m.forward(&ids, &mut m.new_cache()).unwrap();
        let b = m.forward(&other, &mut m.new_cache()).unwrap();
        let prefix = i * TINY_LM.vocab_size;
        for (x, y) in a.data()[..prefix].iter().zip(&b.data()[..prefix]) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn cached_decoding_matches_full_pass(ids in prop::collection::vec(0u32..256, 1..40), split in any::<prop::sample::Index>()) {
        let (_, m) = tiny();
        let full = m.forward(&ids, &mut m.new_cache()).unwrap();
        let k = split.index(ids.len()) + 1;
        let mut cache = m.new_cache();
        let mut rows = m.forward(&ids[..k], &mut cache).unwrap().into_data();
        for &t in &ids[k..] {
            rows.extend(m.forward(&[t], &mut cache).unwrap().into_data());
        }
        prop_assert_eq!(cache.len(), ids.len());
        let diff = full.data().iter().zip(&rows).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        prop_assert!(diff <= 1e-4, "{}", diff);
    }

    #[test]
    fn attention_rows_are_convex(ids in prop::collection::vec(0u32..256, 1..30)) {
        let (_, m) = tiny();
        let mut rows = 0;
        m.forward_traced(&ids, &mut m.new_cache(), |_, _, pos, w| {
            rows += 1;
            assert_eq!(w.len(), pos + 1);
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
        }).unwrap();
        prop_assert_eq!(rows, ids.len() * TINY_LM.n_layer * TINY_LM.n_head);
    }

    #[test]
    fn random_models_match_reference(seed in any::<u64>(), ids in prop::collection::vec(0u32..50, 1..10)) {
        let cfg = LmConfig { n_layer: 2, n_head: 4, d_model: 16, n_ctx: 16, vocab_size: 50 };
        let c = fixtures::random_lm(cfg, seed);
        let m = LmModel::load(&c).unwrap();
        let got = m.forward(&ids, &mut m.new_cache()).unwrap();
        let want: Vec<f64> = oracle::gpt2_logits(&c, &ids).concat();
        prop_assert!(oracle::max_abs_diff(got.data(), &want) <= 1e-4);
    }
}

#[test]
fn fixture_matches_reference() {
    let (c, m) = tiny();
    let ids: Vec<u32> = b"A poem about joy:\n".iter().map(|&b| b as u32).collect();
    let got = m.forward(&ids, &mut m.new_cache()).unwrap();
    let want: Vec<f64> = oracle::gpt2_logits(&c, &ids).concat();
    assert!(oracle::max_abs_diff(got.data(), &want) <= 1e-4);
}
