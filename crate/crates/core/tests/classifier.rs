mod oracle;

use mirror_core::classifier::{preprocess_face, ClassifierModel, INPUT_SIDE};
use mirror_core::detect::FaceBox;
use mirror_core::fixtures;
use mirror_core::tensor::Tensor;
use mirror_core::Frame;
use oracle::Nd;
use proptest::prelude::*;

fn input(seed: &[f32]) -> Tensor {
    let n = INPUT_SIDE * INPUT_SIDE;
    Tensor::new(vec![INPUT_SIDE, INPUT_SIDE, 1], (0..n).map(|i| seed[i % seed.len()]).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn random_models_match_layer_oracle(model_seed in any::<u64>(), pixels in prop::collection::vec(-1.0f32..1.0, 97)) {
        let c = fixtures::random_classifier(model_seed);
        let m = ClassifierModel::load(&c).unwrap();
        let x = input(&pixels);
        let d = m.classify(&x, 3).unwrap();
        prop_assert!(d.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        let want = oracle::classify(&c, &Nd::from_f32(x.shape(), x.data()));
        for (got, want) in d.probs.iter().zip(&want) {
            prop_assert!((got - want).abs() <= 1e-4, "{:?} vs {:?}", d.probs, want);
        }
    }

    #[test]
    fn preprocess_maps_to_unit_range(w in 8u32..64, h in 8u32..64, px in prop::collection::vec(any::<u8>(), 64 * 64)) {
        let f = Frame::new(px[..(w * h) as usize].to_vec(), w, h, 1, 0).unwrap();
        let b = FaceBox { x: 0, y: 0, w, h, neighbors: 1, score: 0.0 };
        let t = preprocess_face(&f, &b).unwrap();
        prop_assert_eq!(t.shape(), &[48, 48, 1]);
        prop_assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn zero_model_is_exactly_uniform() {
    let m = ClassifierModel::load(&fixtures::zero_classifier()).unwrap();
    let d = m.classify(&input(&[0.7, -0.2]), 0).unwrap();
    for p in d.probs {
        assert!((p - 1.0 / 7.0).abs() <= 1e-6);
    }
}
